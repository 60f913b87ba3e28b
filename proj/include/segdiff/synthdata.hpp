#pragma once

#include <string>
#include <vector>

#include "segdiff/metrics.hpp"
#include "segdiff/rng.hpp"
#include "segdiff/tensor.hpp"

namespace segdiff::synth {

// Knobs for one synthetic referring scenario. Several persons act in
// parallel; the holistic stream mixes everyone, the partial stream carries
// only the referred person.
struct ScenarioConfig {
    int persons = 3;
    int classes = 6;
    int frames = 128;
    double p_stay = 0.95;        // Markov stickiness; expected run length 1/(1-p_stay)
    double co_occur = 0.3;       // chance of each extra class joining a labelset
    double p_absent = 0.15;      // chance a resampled labelset is empty (target absent)
    int feat_dim = 32;           // prototype width, before the reference one-hot
    double snr = 10.0;           // signal-to-noise ratio of both streams
    std::vector<double> mixing;  // holistic weights per person; empty = equal (1/P)
    int family = 0;              // scenario-family id (the "movie" analog)
    uint64_t seed = 0;           // master seed: prototypes and split shuffles

    void validate() const;
    int total_feat_dim() const { return feat_dim + persons; }
};

struct Sample {
    std::string id;
    nk::Tensor holistic;  // L x (feat_dim + persons)
    nk::Tensor partial;   // L x (feat_dim + persons)
    metrics::LabelMatrix labels;  // target person's actions only
    int reference = 0;            // target person id (the textual-reference stand-in)
    int family = 0;
};

// Class prototype matrix (classes x feat_dim), derived from cfg.seed only so
// it is shared across all samples of a dataset.
nk::Tensor class_prototypes(const ScenarioConfig& cfg);

// Fully deterministic given (cfg, seed).
Sample generate_sample(const ScenarioConfig& cfg, uint64_t seed);

// Test aid: decode a frame's labelset by nearest prototype-sum over all 2^C
// candidate labelsets, using the first feat_dim channels.
metrics::LabelMatrix nearest_prototype_decode(const nk::Tensor& feats,
                                              const nk::Tensor& prototypes);

enum class SplitMode { Random, CrossFamily };

struct SplitAssignment {
    std::vector<int> train, val, test;  // sample indices
};

// 70/10/20. Random mode shuffles samples; cross-family keeps whole families
// inside one split (requires >= 3 families).
SplitAssignment build_splits(int n_samples, const std::vector<int>& families, SplitMode mode,
                             uint64_t seed);

// "SDF1": magic, u32 L, u32 D, then L*D float32 little-endian row-major.
void write_features(const std::string& path, const nk::Tensor& x);
nk::Tensor read_features(const std::string& path);

// "SDL1": magic, u32 L, u32 C, then L*C bytes in {0,1}.
void write_labels(const std::string& path, const metrics::LabelMatrix& y);
metrics::LabelMatrix read_labels(const std::string& path);

struct ManifestEntry {
    std::string id;
    std::string features_holistic;
    std::string features_partial;
    std::string labels;
    int family = 0;
    int reference = 0;
    std::string split;  // "train" | "val" | "test"
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    int classes = 0;
    int feat_dim = 0;  // total on-disk feature width

    std::vector<ManifestEntry> split(const std::string& name) const;
};

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

// Generates n samples (families assigned round-robin), writes features,
// labels, and manifest.json under out_dir. Returns the manifest.
Manifest generate_dataset(const ScenarioConfig& cfg, int n_samples, int n_families,
                          SplitMode mode, const std::string& out_dir);

}  // namespace segdiff::synth
