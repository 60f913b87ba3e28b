#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "segdiff/diffusion.hpp"
#include "segdiff/fourier.hpp"
#include "segdiff/hpxlstm.hpp"
#include "segdiff/metrics.hpp"
#include "segdiff/tensor.hpp"

namespace segdiff::net {

using nk::Tensor;

enum class Branch { Holistic, Partial };

struct ModelConfig {
    int input_dim = 0;  // per-frame feature width (set from the data)
    int classes = 0;
    int width = 32;      // encoder maps / recurrent feature width d
    int enc_layers = 4;
    int dec_layers = 3;
    int dec_maps = 24;
    int kernel = 5;
    int time_emb_dim = 64;
    double dropout_enc = 0.5;
    double dropout_dec = 0.1;
    bool forget_exp = false;     // exponential instead of sigmoid forget gate
    bool scaled_labels = true;   // diffuse on {-1,+1} instead of {0,1}

    // ablation switches
    bool no_partial = false;   // drop the partial reasoning branch
    bool no_hpxlstm = false;   // conditions come straight from the encoders
    bool no_bca = false;       // recurrences run uncoupled
    bool no_dft_cond = false;  // drop the frequency condition

    void validate() const;
    // decoder input channel count: classes + temporal d + raw d (+ 2d frequency)
    int decoder_in() const { return classes + 2 * width + (no_dft_cond ? 0 : 2 * width); }
};

struct ConvStack {
    Tensor in_w, in_b;            // 1x1 projection into the stack width
    std::vector<Tensor> w, b;     // dilated layers, dilation 2^l
    std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

struct DecoderParams {
    ConvStack stack;
    Tensor temb_w, temb_b;  // time-embedding projection
    Tensor head_w, head_b;  // per-frame per-class head
    std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

// The dual-branch denoising model. All parameters are always allocated (and
// seeded) regardless of ablation flags, so variants differ only in wiring.
class Model {
  public:
    Model(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // Per-frame embedding of width d. dropout_rng == nullptr disables dropout.
    Tensor encode(const Tensor& features, Branch which, Rng* dropout_rng = nullptr) const;

    // Condition bundles for both branches; second is empty under no_partial.
    std::pair<fourier::ConditionBundle, std::optional<fourier::ConditionBundle>> conditions(
        const Tensor& holistic, const Tensor& partial, Rng* dropout_rng = nullptr) const;

    // Clean-label estimate in [0,1]^{L x C}.
    Tensor denoise(const Tensor& y_t, int t, const fourier::ConditionBundle& cond, Branch which,
                   Rng* dropout_rng = nullptr) const;

    // BCE + boundary term, equally weighted. gt must be binary.
    static Tensor loss(const Tensor& pred, const Tensor& gt);

    std::vector<std::pair<std::string, Tensor>> params() const;

    // {0,1} <-> diffusion working space
    Tensor to_diffusion_space(const Tensor& y01) const;
    Tensor to_probabilities(const Tensor& y_diff) const;

    const xlstm::BranchParams& xl(Branch b) const { return b == Branch::Holistic ? xl_h_ : xl_p_; }

  private:
    ModelConfig cfg_;
    ConvStack enc_h_, enc_p_;
    xlstm::BranchParams xl_h_, xl_p_;
    DecoderParams dec_h_, dec_p_;
};

struct InferResult {
    Tensor merged;                // L x C probabilities
    metrics::LabelMatrix binary;  // merged > 0.5
    Tensor s_h, s_p;              // per-branch probabilities (s_p empty under no_partial)
};

// Reverse diffusion per branch (independent noise streams), probabilities
// averaged, binarized at strictly-greater-than 0.5.
InferResult infer(const Model& model, const Tensor& holistic, const Tensor& partial,
                  const diffusion::NoiseSchedule& sched, int steps, uint64_t seed);

struct TrainSample {
    Tensor holistic, partial;
    metrics::LabelMatrix labels;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Trainer {
  public:
    Trainer(Model& model, diffusion::NoiseSchedule sched, AdamConfig opt, uint64_t seed);

    // One uniformly-sampled-timestep denoising step over the batch; returns
    // the mean loss. Throws NumericError with diagnostics on a NaN loss.
    double train_step(const std::vector<TrainSample>& batch);

    int64_t steps_done() const { return step_; }
    std::string rng_state() const { return rng_.state(); }
    void set_rng_state(const std::string& s) { rng_.set_state(s); }

    // Optimizer moments, exposed for checkpointing.
    std::vector<std::vector<double>>& moments_m() { return m_; }
    std::vector<std::vector<double>>& moments_v() { return v_; }
    void set_step(int64_t s) { step_ = s; }

  private:
    Model& model_;
    diffusion::NoiseSchedule sched_;
    AdamConfig opt_;
    Rng rng_;
    std::vector<std::vector<double>> m_, v_;
    int64_t step_ = 0;
};

// ---- checkpoints (SDM1) ----

struct TrainState {
    int64_t adam_step = 0;
    int epoch = 0;
    std::string rng;
    bool present = false;
};

void save_checkpoint(const std::string& path, const Model& model,
                     const Trainer* trainer = nullptr, int epoch = 0);

struct LoadedCheckpoint {
    ModelConfig config;
    TrainState train_state;
};

// Loads parameters into a freshly constructed Model; returns config + state.
LoadedCheckpoint read_checkpoint_header(const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path, Model& model,
                                 Trainer* trainer = nullptr);

}  // namespace segdiff::net
