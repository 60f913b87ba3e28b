#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "segdiff/metrics.hpp"
#include "segdiff/netseg.hpp"
#include "segdiff/synthdata.hpp"

namespace segdiff::runner {

// Everything a run needs; a run is reproducible from this plus the seed.
struct RunConfig {
    uint64_t seed = 7;
    std::string manifest = "data/manifest.json";
    std::string out_dir = "runs/exp";

    int epochs = 200;
    int batch = 4;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;

    int timesteps = 1000;
    std::string schedule = "cosine";  // "cosine" | "linear"
    double eta = 0.0;
    int sample_steps = 25;

    int width = 32;
    int enc_layers = 4;
    int dec_layers = 3;
    int dec_maps = 24;
    int kernel = 5;
    int time_emb_dim = 64;
    double dropout_enc = 0.5;
    double dropout_dec = 0.1;
    std::string forget_gate = "sigmoid";  // "sigmoid" | "exp"
    bool scaled_labels = true;

    std::vector<std::string> ablation;  // subset of the variant flags

    static RunConfig defaults() { return {}; }
    static RunConfig from_file(const std::string& path);
    void to_file(const std::string& path) const;
    std::string to_json_string() const;
    static RunConfig from_json_string(const std::string& s);

    net::ModelConfig model_config(int input_dim, int classes) const;
    diffusion::NoiseSchedule noise_schedule() const;
};

// Applies one named ablation variant to a copy of the config.
// Names: full | no_partial | no_hpxlstm | no_bca | no_dft_cond | none.
RunConfig apply_variant(const RunConfig& base, const std::string& variant);

struct TrainOutcome {
    std::string checkpoint_path;
    double final_loss = 0.0;
    metrics::MetricReport val;
};

// Trains on the manifest's train split, writes checkpoint + JSONL loss log
// (step, epoch, loss, wall_ms) + val_metrics.json under cfg.out_dir.
// resume, when non-empty, restores model/optimizer/RNG from a checkpoint.
TrainOutcome train_run(const RunConfig& cfg, const std::string& resume = "",
                       std::ostream* progress = nullptr);

// Evaluates a checkpoint over one manifest split; optionally writes predicted
// SDL1 files into pred_dir. threads <= 0 means single-threaded.
metrics::MetricReport eval_run(const std::string& checkpoint, const std::string& manifest,
                               const std::string& split, uint64_t seed, int sample_steps,
                               int threads = 0, const std::string& pred_dir = "");

// Metrics-only evaluation: predicted SDL1 files (named like the GT label
// files) against the manifest's ground truth.
metrics::MetricReport eval_pred_dir(const std::string& pred_dir, const std::string& manifest,
                                    const std::string& split);

std::string report_to_json(const metrics::MetricReport& r);
metrics::MetricReport report_from_json(const std::string& s);

struct AblationRow {
    std::string variant;
    metrics::MetricReport report;
};

// Trains and evaluates each variant with the same seed and data.
std::vector<AblationRow> ablate_run(const RunConfig& cfg, const std::vector<std::string>& variants,
                                    std::ostream* progress = nullptr);
std::string ablation_table(const std::vector<AblationRow>& rows);

// Two horizontal segment bands (GT, prediction) plus a frame-correctness
// strip; deterministic bytes for fixed input.
void render_svg(const metrics::LabelMatrix& pred, const metrics::LabelMatrix& gt,
                const std::string& out_path);

}  // namespace segdiff::runner
