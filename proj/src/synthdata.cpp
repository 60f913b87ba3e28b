#include "segdiff/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace segdiff::synth {

using json = nlohmann::json;

void ScenarioConfig::validate() const {
    if (persons < 2) throw ConfigError("scenario: persons must be >= 2 (multi-person by construction)");
    if (classes < 1 || classes > 60) throw ConfigError("scenario: classes must be in [1,60]");
    if (frames < 1) throw ConfigError("scenario: frames must be >= 1");
    if (!(p_stay > 0.0 && p_stay < 1.0)) throw ConfigError("scenario: p_stay must be in (0,1)");
    if (!(snr > 0.0)) throw ConfigError("scenario: snr must be > 0");
    if (feat_dim < 1) throw ConfigError("scenario: feat_dim must be >= 1");
    if (!mixing.empty() && static_cast<int>(mixing.size()) != persons)
        throw ConfigError("scenario: mixing weights must have one entry per person");
}

nk::Tensor class_prototypes(const ScenarioConfig& cfg) {
    Rng rng(mix_seed(cfg.seed, 0xC1A55ULL));
    return nk::Tensor::randn({cfg.classes, cfg.feat_dim}, rng);
}

namespace {

uint64_t draw_labelset(const ScenarioConfig& cfg, Rng& rng) {
    if (rng.uniform() < cfg.p_absent) return 0;
    int primary = rng.uniform_int(0, cfg.classes - 1);
    uint64_t m = 1ULL << primary;
    for (int c = 0; c < cfg.classes; ++c)
        if (c != primary && rng.uniform() < cfg.co_occur) m |= (1ULL << c);
    return m;
}

// Markov chain over labelsets; on a transition the new state is forced to
// differ so run lengths are geometric with mean 1/(1-p_stay).
std::vector<uint64_t> person_track(const ScenarioConfig& cfg, Rng& rng) {
    std::vector<uint64_t> track(static_cast<size_t>(cfg.frames));
    uint64_t state = draw_labelset(cfg, rng);
    for (int t = 0; t < cfg.frames; ++t) {
        if (t > 0 && rng.uniform() >= cfg.p_stay) {
            uint64_t next = state;
            for (int tries = 0; tries < 32 && next == state; ++tries) next = draw_labelset(cfg, rng);
            state = next;
        }
        track[static_cast<size_t>(t)] = state;
    }
    return track;
}

void add_prototype_sum(std::vector<double>& row, const nk::Tensor& protos, uint64_t mask,
                       double weight, int feat_dim) {
    for (int c = 0; mask != 0; ++c, mask >>= 1)
        if (mask & 1)
            for (int d = 0; d < feat_dim; ++d) row[static_cast<size_t>(d)] += weight * protos.at(c, d);
}

}  // namespace

Sample generate_sample(const ScenarioConfig& cfg, uint64_t seed) {
    cfg.validate();
    nk::Tensor protos = class_prototypes(cfg);
    Rng rng(seed);

    std::vector<std::vector<uint64_t>> tracks;
    tracks.reserve(static_cast<size_t>(cfg.persons));
    for (int p = 0; p < cfg.persons; ++p) tracks.push_back(person_track(cfg, rng));
    const int target = rng.uniform_int(0, cfg.persons - 1);

    std::vector<double> weights = cfg.mixing;
    if (weights.empty()) weights.assign(static_cast<size_t>(cfg.persons), 1.0 / cfg.persons);

    const int L = cfg.frames, D = cfg.feat_dim, DT = cfg.total_feat_dim();
    const double noise_std = 1.0 / std::sqrt(cfg.snr);

    Sample s;
    s.holistic = nk::Tensor::zeros({L, DT});
    s.partial = nk::Tensor::zeros({L, DT});
    s.labels = metrics::LabelMatrix::zeros(L, cfg.classes);
    s.reference = target;
    s.family = cfg.family;

    std::vector<double> hrow(static_cast<size_t>(D)), prow(static_cast<size_t>(D));
    for (int t = 0; t < L; ++t) {
        std::fill(hrow.begin(), hrow.end(), 0.0);
        std::fill(prow.begin(), prow.end(), 0.0);
        for (int p = 0; p < cfg.persons; ++p)
            add_prototype_sum(hrow, protos, tracks[static_cast<size_t>(p)][static_cast<size_t>(t)],
                              weights[static_cast<size_t>(p)], D);
        add_prototype_sum(prow, protos, tracks[static_cast<size_t>(target)][static_cast<size_t>(t)],
                          1.0, D);
        for (int d = 0; d < D; ++d) {
            s.holistic.at(t, d) = hrow[static_cast<size_t>(d)] + noise_std * rng.normal();
            s.partial.at(t, d) = prow[static_cast<size_t>(d)] + noise_std * rng.normal();
        }
        // reference one-hot channels, appended to both streams
        s.holistic.at(t, D + target) = 1.0;
        s.partial.at(t, D + target) = 1.0;
        uint64_t mask = tracks[static_cast<size_t>(target)][static_cast<size_t>(t)];
        for (int c = 0; c < cfg.classes; ++c)
            if (mask & (1ULL << c)) s.labels.at(t, c) = 1;
    }
    return s;
}

metrics::LabelMatrix nearest_prototype_decode(const nk::Tensor& feats,
                                              const nk::Tensor& prototypes) {
    const int L = feats.dim(0);
    const int C = prototypes.dim(0), D = prototypes.dim(1);
    metrics::LabelMatrix out = metrics::LabelMatrix::zeros(L, C);
    const uint64_t n_masks = 1ULL << C;
    std::vector<double> sum(static_cast<size_t>(D));
    for (int t = 0; t < L; ++t) {
        uint64_t best_mask = 0;
        double best = 1e300;
        for (uint64_t mask = 0; mask < n_masks; ++mask) {
            std::fill(sum.begin(), sum.end(), 0.0);
            for (int c = 0; c < C; ++c)
                if (mask & (1ULL << c))
                    for (int d = 0; d < D; ++d) sum[static_cast<size_t>(d)] += prototypes.at(c, d);
            double dist = 0;
            for (int d = 0; d < D; ++d) {
                double diff = feats.at(t, d) - sum[static_cast<size_t>(d)];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                best_mask = mask;
            }
        }
        for (int c = 0; c < C; ++c)
            if (best_mask & (1ULL << c)) out.at(t, c) = 1;
    }
    return out;
}

SplitAssignment build_splits(int n_samples, const std::vector<int>& families, SplitMode mode,
                             uint64_t seed) {
    if (n_samples < 10) throw ConfigError("build_splits: need at least 10 samples");
    if (static_cast<int>(families.size()) != n_samples)
        throw ContractError("build_splits: one family id per sample required");
    Rng rng(mix_seed(seed, 0x5B117ULL));
    SplitAssignment out;
    if (mode == SplitMode::Random) {
        std::vector<int> idx(static_cast<size_t>(n_samples));
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = n_samples - 1; i > 0; --i)
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(0, i))]);
        const int n_train = static_cast<int>(std::llround(0.7 * n_samples));
        const int n_val = static_cast<int>(std::llround(0.1 * n_samples));
        for (int i = 0; i < n_samples; ++i) {
            if (i < n_train)
                out.train.push_back(idx[static_cast<size_t>(i)]);
            else if (i < n_train + n_val)
                out.val.push_back(idx[static_cast<size_t>(i)]);
            else
                out.test.push_back(idx[static_cast<size_t>(i)]);
        }
        return out;
    }
    std::vector<int> fams = families;
    std::sort(fams.begin(), fams.end());
    fams.erase(std::unique(fams.begin(), fams.end()), fams.end());
    if (fams.size() < 3) throw ConfigError("build_splits: cross_family mode needs >= 3 families");
    for (int i = static_cast<int>(fams.size()) - 1; i > 0; --i)
        std::swap(fams[static_cast<size_t>(i)], fams[static_cast<size_t>(rng.uniform_int(0, i))]);
    // Whole families go to one split. Fill train toward 70% and val toward
    // 10% of the samples, always leaving enough families for later buckets.
    std::vector<int>* buckets[3] = {&out.train, &out.val, &out.test};
    const int want[2] = {static_cast<int>(std::llround(0.7 * n_samples)),
                         static_cast<int>(std::llround(0.1 * n_samples))};
    size_t fi = 0;
    for (int b = 0; b < 3; ++b) {
        int got = 0;
        while (fi < fams.size()) {
            const size_t remaining_buckets = static_cast<size_t>(2 - b);
            if (b < 2 && (got >= want[b] || fams.size() - fi <= remaining_buckets)) break;
            const int fam = fams[fi++];
            for (int i = 0; i < n_samples; ++i)
                if (families[static_cast<size_t>(i)] == fam) {
                    buckets[b]->push_back(i);
                    ++got;
                }
        }
    }
    if (out.train.empty() || out.val.empty() || out.test.empty())
        throw ConfigError("build_splits: a split came out empty; use more families or samples");
    return out;
}

// ---- binary formats ----

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path, int64_t offset) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(path + ": truncated at offset " + std::to_string(offset));
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void check_magic(std::istream& is, const char* magic, const std::string& path) {
    char got[4];
    if (!is.read(got, 4)) throw FormatError(path + ": truncated at offset 0");
    if (std::memcmp(got, magic, 4) != 0)
        throw FormatError(path + ": bad magic at offset 0 (expected " + magic + ")");
}

}  // namespace

void write_features(const std::string& path, const nk::Tensor& x) {
    if (x.ndim() != 2) throw ContractError("write_features: expected L x D tensor");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError(path + ": cannot open for writing");
    os.write("SDF1", 4);
    put_u32(os, static_cast<uint32_t>(x.dim(0)));
    put_u32(os, static_cast<uint32_t>(x.dim(1)));
    for (double v : x.data()) {
        float f = static_cast<float>(v);
        static_assert(sizeof(float) == 4);
        os.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!os) throw FormatError(path + ": write failed");
}

nk::Tensor read_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(path + ": cannot open");
    check_magic(is, "SDF1", path);
    const uint32_t L = get_u32(is, path, 4);
    const uint32_t D = get_u32(is, path, 8);
    std::vector<double> data(static_cast<size_t>(L) * D);
    for (size_t i = 0; i < data.size(); ++i) {
        float f;
        if (!is.read(reinterpret_cast<char*>(&f), 4))
            throw FormatError(path + ": truncated at offset " + std::to_string(12 + i * 4));
        data[i] = static_cast<double>(f);
    }
    return nk::Tensor::from({static_cast<int>(L), static_cast<int>(D)}, std::move(data));
}

void write_labels(const std::string& path, const metrics::LabelMatrix& y) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError(path + ": cannot open for writing");
    os.write("SDL1", 4);
    put_u32(os, static_cast<uint32_t>(y.L));
    put_u32(os, static_cast<uint32_t>(y.C));
    os.write(reinterpret_cast<const char*>(y.v.data()), static_cast<std::streamsize>(y.v.size()));
    if (!os) throw FormatError(path + ": write failed");
}

metrics::LabelMatrix read_labels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(path + ": cannot open");
    check_magic(is, "SDL1", path);
    const uint32_t L = get_u32(is, path, 4);
    const uint32_t C = get_u32(is, path, 8);
    metrics::LabelMatrix m = metrics::LabelMatrix::zeros(static_cast<int>(L), static_cast<int>(C));
    if (!m.v.empty() &&
        !is.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(m.v.size())))
        throw FormatError(path + ": truncated at offset 12");
    for (size_t i = 0; i < m.v.size(); ++i)
        if (m.v[i] > 1)
            throw FormatError(path + ": illegal label byte at offset " + std::to_string(12 + i));
    return m;
}

// ---- manifest ----

std::vector<ManifestEntry> Manifest::split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == name) out.push_back(e);
    return out;
}

void write_manifest(const std::string& path, const Manifest& m) {
    json j;
    j["classes"] = m.classes;
    j["feat_dim"] = m.feat_dim;
    j["samples"] = json::array();
    for (const auto& e : m.entries)
        j["samples"].push_back({{"id", e.id},
                                {"features_holistic", e.features_holistic},
                                {"features_partial", e.features_partial},
                                {"labels", e.labels},
                                {"family", e.family},
                                {"reference", e.reference},
                                {"split", e.split}});
    std::ofstream os(path);
    if (!os) throw FormatError(path + ": cannot open for writing");
    os << j.dump(2) << "\n";
}

Manifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError(path + ": cannot open");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw FormatError(path + ": invalid JSON (" + e.what() + ")");
    }
    Manifest m;
    m.classes = j.value("classes", 0);
    m.feat_dim = j.value("feat_dim", 0);
    for (const auto& s : j.at("samples")) {
        ManifestEntry e;
        e.id = s.at("id");
        e.features_holistic = s.at("features_holistic");
        e.features_partial = s.at("features_partial");
        e.labels = s.at("labels");
        e.family = s.at("family");
        e.reference = s.at("reference");
        e.split = s.at("split");
        m.entries.push_back(std::move(e));
    }
    return m;
}

Manifest generate_dataset(const ScenarioConfig& cfg, int n_samples, int n_families,
                          SplitMode mode, const std::string& out_dir) {
    if (n_families < 1) throw ConfigError("generate_dataset: need at least one family");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    std::vector<int> families(static_cast<size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) families[static_cast<size_t>(i)] = i % n_families;
    SplitAssignment split = build_splits(n_samples, families, mode, cfg.seed);
    std::vector<std::string> split_of(static_cast<size_t>(n_samples));
    for (int i : split.train) split_of[static_cast<size_t>(i)] = "train";
    for (int i : split.val) split_of[static_cast<size_t>(i)] = "val";
    for (int i : split.test) split_of[static_cast<size_t>(i)] = "test";

    Manifest m;
    m.classes = cfg.classes;
    m.feat_dim = cfg.total_feat_dim();
    for (int i = 0; i < n_samples; ++i) {
        ScenarioConfig c = cfg;
        c.family = families[static_cast<size_t>(i)];
        Sample s = generate_sample(c, mix_seed(cfg.seed, static_cast<uint64_t>(i)));
        char name[32];
        std::snprintf(name, sizeof(name), "s%04d", i);
        s.id = name;
        ManifestEntry e;
        e.id = s.id;
        e.features_holistic = s.id + ".h.sdf";
        e.features_partial = s.id + ".p.sdf";
        e.labels = s.id + ".sdl";
        e.family = s.family;
        e.reference = s.reference;
        e.split = split_of[static_cast<size_t>(i)];
        write_features((fs::path(out_dir) / e.features_holistic).string(), s.holistic);
        write_features((fs::path(out_dir) / e.features_partial).string(), s.partial);
        write_labels((fs::path(out_dir) / e.labels).string(), s.labels);
        m.entries.push_back(std::move(e));
    }
    write_manifest((fs::path(out_dir) / "manifest.json").string(), m);
    return m;
}

}  // namespace segdiff::synth
