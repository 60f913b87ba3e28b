#pragma once

#include <functional>
#include <vector>

#include "segdiff/rng.hpp"
#include "segdiff/tensor.hpp"

namespace segdiff::diffusion {

enum class ScheduleKind { Linear, Cosine };

struct ScheduleParams {
    // linear: per-step variance ramped from gamma_min to gamma_max
    double gamma_min = 1e-4;
    double gamma_max = 0.02;
    // cosine: squared-cosine signal decay with offset s
    double cosine_s = 0.008;
    // reverse-process stochasticity; 0 gives deterministic sampling
    double eta = 0.0;
};

// t is 1-based (1..T); arrays are stored 0-based at index t-1. alpha_bar(0)
// is defined as 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> gamma;      // per-step variance
    std::vector<double> alpha;      // 1 - gamma
    std::vector<double> alpha_bar;  // running product of alpha
    std::vector<double> sigma;      // reverse-process noise scale

    double abar(int t) const { return t == 0 ? 1.0 : alpha_bar[static_cast<size_t>(t - 1)]; }
};

NoiseSchedule build_schedule(int T, ScheduleKind kind, const ScheduleParams& params = {});

// y_t = sqrt(abar_t) * y0 + eps * sqrt(1 - abar_t); shapes must agree.
nk::Tensor forward_noise(const nk::Tensor& y0, int t, const nk::Tensor& eps,
                         const NoiseSchedule& sched);

// One reverse update from timestep t to t_prev (default t-1, 0 meaning the
// clean sample). y0_hat is the model's clean-signal estimate.
nk::Tensor ddim_step(const nk::Tensor& y_t, int t, const nk::Tensor& y0_hat,
                     const NoiseSchedule& sched, const nk::Tensor& eps, int t_prev = -1);

// Maps (state, timestep) -> clean-signal estimate, in the diffusion's
// working space.
using Denoiser = std::function<nk::Tensor(const nk::Tensor&, int)>;

// Reverse sampling over an evenly strided timestep subsequence ending at t=1.
// Returns the trajectory [y_T, ..., y_0] (steps+1 entries, clean sample last).
std::vector<nk::Tensor> sample(const Denoiser& denoiser, const std::vector<int>& shape,
                               const NoiseSchedule& sched, int steps, uint64_t seed);

// The visited timesteps for a strided run, descending, last element 1 (a
// single-step run visits T only and jumps straight to the clean sample).
std::vector<int> sample_timesteps(int T, int steps);

}  // namespace segdiff::diffusion
