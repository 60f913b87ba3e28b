#include "segdiff/diffusion.hpp"

#include <cmath>

namespace segdiff::diffusion {

namespace {

constexpr double kPi = 3.14159265358979323846264338328;

}  // namespace

NoiseSchedule build_schedule(int T, ScheduleKind kind, const ScheduleParams& p) {
    if (T < 1) throw ConfigError("build_schedule: T must be >= 1");
    NoiseSchedule s;
    s.T = T;
    s.gamma.resize(static_cast<size_t>(T));
    if (kind == ScheduleKind::Linear) {
        for (int t = 0; t < T; ++t) {
            double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
            s.gamma[static_cast<size_t>(t)] = p.gamma_min + frac * (p.gamma_max - p.gamma_min);
        }
    } else {
        auto f = [&](double t) {
            double v = std::cos((t / T + p.cosine_s) / (1.0 + p.cosine_s) * kPi / 2.0);
            return v * v;
        };
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            double ab = f(static_cast<double>(t)) / f(0.0);
            double g = 1.0 - ab / prev;
            s.gamma[static_cast<size_t>(t - 1)] = std::min(std::max(g, 1e-8), 0.999);
            prev = ab;
        }
    }
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    s.sigma.assign(static_cast<size_t>(T), 0.0);
    double run = 1.0;
    for (int t = 0; t < T; ++t) {
        const double g = s.gamma[static_cast<size_t>(t)];
        if (!(g > 0.0 && g < 1.0)) throw ConfigError("build_schedule: gamma outside (0,1)");
        s.alpha[static_cast<size_t>(t)] = 1.0 - g;
        run *= s.alpha[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] = run;
    }
    if (p.eta > 0.0) {
        for (int t = 1; t <= T; ++t) {
            const double ab = s.abar(t), abp = s.abar(t - 1);
            s.sigma[static_cast<size_t>(t - 1)] =
                p.eta * std::sqrt((1.0 - abp) / (1.0 - ab)) * std::sqrt(1.0 - ab / abp);
        }
    }
    return s;
}

nk::Tensor forward_noise(const nk::Tensor& y0, int t, const nk::Tensor& eps,
                         const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw ContractError("forward_noise: t out of range");
    if (y0.shape() != eps.shape()) throw ContractError("forward_noise: shape mismatch");
    const double ab = sched.abar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> out(y0.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a * y0.data()[i] + b * eps.data()[i];
    return nk::Tensor::from(y0.shape(), std::move(out));
}

nk::Tensor ddim_step(const nk::Tensor& y_t, int t, const nk::Tensor& y0_hat,
                     const NoiseSchedule& sched, const nk::Tensor& eps, int t_prev) {
    if (t < 1 || t > sched.T) throw ContractError("ddim_step: t out of range");
    if (t_prev < 0) t_prev = t - 1;
    if (t_prev >= t) throw ContractError("ddim_step: t_prev must be < t");
    if (y_t.shape() != y0_hat.shape()) throw ContractError("ddim_step: shape mismatch");
    const double ab_t = sched.abar(t);
    const double ab_p = sched.abar(t_prev);
    const double sig = sched.sigma[static_cast<size_t>(t - 1)];
    const double resid = 1.0 - ab_p - sig * sig;
    if (resid < 0.0) throw ConfigError("ddim_step: sigma too large for schedule at this step");
    const double c_hat = std::sqrt(ab_p);
    const double c_dir = std::sqrt(resid) / std::sqrt(1.0 - ab_t);
    const double c_cur = std::sqrt(ab_t);
    std::vector<double> out(y_t.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double noise_dir = y_t.data()[i] - c_cur * y0_hat.data()[i];
        out[i] = c_hat * y0_hat.data()[i] + c_dir * noise_dir;
        if (sig > 0.0) out[i] += sig * eps.data()[i];
    }
    return nk::Tensor::from(y_t.shape(), std::move(out));
}

std::vector<int> sample_timesteps(int T, int steps) {
    if (steps < 1) throw ConfigError("sample_timesteps: steps must be >= 1");
    if (steps > T) throw ConfigError("sample_timesteps: steps must be <= T");
    std::vector<int> ts(static_cast<size_t>(steps));
    if (steps == 1) {
        ts[0] = T;
        return ts;
    }
    // Uniform stride from T down, final step forced to t=1.
    for (int i = 0; i < steps; ++i) {
        double f = static_cast<double>(i) / (steps - 1);
        ts[static_cast<size_t>(i)] = T - static_cast<int>(std::llround(f * (T - 1)));
    }
    ts.back() = 1;
    return ts;
}

std::vector<nk::Tensor> sample(const Denoiser& denoiser, const std::vector<int>& shape,
                               const NoiseSchedule& sched, int steps, uint64_t seed) {
    const auto ts = sample_timesteps(sched.T, steps);
    Rng rng(seed);
    nk::Tensor y = nk::Tensor::randn(shape, rng);
    std::vector<nk::Tensor> traj;
    traj.reserve(static_cast<size_t>(steps) + 1);
    traj.push_back(y);
    for (size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
        nk::Tensor y0_hat = denoiser(y, t);
        nk::Tensor eps;
        if (sched.sigma[static_cast<size_t>(t - 1)] > 0.0)
            eps = nk::Tensor::randn(shape, rng);
        else
            eps = nk::Tensor::zeros(shape);
        y = ddim_step(y, t, y0_hat, sched, eps, t_prev);
        traj.push_back(y);
    }
    return traj;
}

}  // namespace segdiff::diffusion
