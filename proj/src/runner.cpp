#include "segdiff/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace segdiff::runner {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---- config ----

namespace {

json config_to_json(const RunConfig& c) {
    return json{{"seed", c.seed},
                {"manifest", c.manifest},
                {"out_dir", c.out_dir},
                {"epochs", c.epochs},
                {"batch", c.batch},
                {"lr", c.lr},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"timesteps", c.timesteps},
                {"schedule", c.schedule},
                {"eta", c.eta},
                {"sample_steps", c.sample_steps},
                {"width", c.width},
                {"enc_layers", c.enc_layers},
                {"dec_layers", c.dec_layers},
                {"dec_maps", c.dec_maps},
                {"kernel", c.kernel},
                {"time_emb_dim", c.time_emb_dim},
                {"dropout_enc", c.dropout_enc},
                {"dropout_dec", c.dropout_dec},
                {"forget_gate", c.forget_gate},
                {"scaled_labels", c.scaled_labels},
                {"ablation", c.ablation}};
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.manifest = j.value("manifest", c.manifest);
        c.out_dir = j.value("out_dir", c.out_dir);
        c.epochs = j.value("epochs", c.epochs);
        c.batch = j.value("batch", c.batch);
        c.lr = j.value("lr", c.lr);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.timesteps = j.value("timesteps", c.timesteps);
        c.schedule = j.value("schedule", c.schedule);
        c.eta = j.value("eta", c.eta);
        c.sample_steps = j.value("sample_steps", c.sample_steps);
        c.width = j.value("width", c.width);
        c.enc_layers = j.value("enc_layers", c.enc_layers);
        c.dec_layers = j.value("dec_layers", c.dec_layers);
        c.dec_maps = j.value("dec_maps", c.dec_maps);
        c.kernel = j.value("kernel", c.kernel);
        c.time_emb_dim = j.value("time_emb_dim", c.time_emb_dim);
        c.dropout_enc = j.value("dropout_enc", c.dropout_enc);
        c.dropout_dec = j.value("dropout_dec", c.dropout_dec);
        c.forget_gate = j.value("forget_gate", c.forget_gate);
        c.scaled_labels = j.value("scaled_labels", c.scaled_labels);
        c.ablation = j.value("ablation", c.ablation);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    if (c.epochs < 1 || c.batch < 1) throw ConfigError("run config: epochs and batch must be >= 1");
    if (c.schedule != "cosine" && c.schedule != "linear")
        throw ConfigError("run config: schedule must be cosine or linear");
    if (c.forget_gate != "sigmoid" && c.forget_gate != "exp")
        throw ConfigError("run config: forget_gate must be sigmoid or exp");
    return c;
}

const std::vector<std::string> kAblationFlags = {"no_partial", "no_hpxlstm", "no_bca",
                                                 "no_dft_cond"};

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path + ": cannot open config");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": invalid JSON (" + e.what() + ")");
    }
    return config_from_json(j);
}

void RunConfig::to_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError(path + ": cannot open for writing");
    os << config_to_json(*this).dump(2) << "\n";
}

std::string RunConfig::to_json_string() const { return config_to_json(*this).dump(2); }

RunConfig RunConfig::from_json_string(const std::string& s) {
    return config_from_json(json::parse(s));
}

net::ModelConfig RunConfig::model_config(int input_dim, int classes) const {
    net::ModelConfig m;
    m.input_dim = input_dim;
    m.classes = classes;
    m.width = width;
    m.enc_layers = enc_layers;
    m.dec_layers = dec_layers;
    m.dec_maps = dec_maps;
    m.kernel = kernel;
    m.time_emb_dim = time_emb_dim;
    m.dropout_enc = dropout_enc;
    m.dropout_dec = dropout_dec;
    m.forget_exp = forget_gate == "exp";
    m.scaled_labels = scaled_labels;
    for (const auto& a : ablation) {
        if (a == "no_partial")
            m.no_partial = true;
        else if (a == "no_hpxlstm")
            m.no_hpxlstm = true;
        else if (a == "no_bca")
            m.no_bca = true;
        else if (a == "no_dft_cond")
            m.no_dft_cond = true;
        else
            throw ConfigError("unknown ablation flag: " + a);
    }
    return m;
}

diffusion::NoiseSchedule RunConfig::noise_schedule() const {
    diffusion::ScheduleParams p;
    p.eta = eta;
    return diffusion::build_schedule(
        timesteps, schedule == "linear" ? diffusion::ScheduleKind::Linear
                                        : diffusion::ScheduleKind::Cosine,
        p);
}

RunConfig apply_variant(const RunConfig& base, const std::string& variant) {
    RunConfig c = base;
    c.ablation.clear();
    if (variant == "full") {
        // no flags
    } else if (variant == "none") {
        c.ablation = kAblationFlags;  // "w/o all": the vanilla single-branch baseline
    } else if (std::find(kAblationFlags.begin(), kAblationFlags.end(), variant) !=
               kAblationFlags.end()) {
        c.ablation.push_back(variant);
    } else {
        throw ConfigError("unknown ablation variant: " + variant);
    }
    c.out_dir = (fs::path(base.out_dir) / variant).string();
    return c;
}

// ---- data loading ----

namespace {

struct LoadedSample {
    net::TrainSample ts;
    std::string label_file;  // basename, for prediction output naming
};

std::vector<LoadedSample> load_split(const synth::Manifest& man, const std::string& manifest_path,
                                     const std::string& split) {
    const fs::path base = fs::path(manifest_path).parent_path();
    std::vector<LoadedSample> out;
    for (const auto& e : man.split(split)) {
        LoadedSample s;
        s.ts.holistic = synth::read_features((base / e.features_holistic).string());
        s.ts.partial = synth::read_features((base / e.features_partial).string());
        s.ts.labels = synth::read_labels((base / e.labels).string());
        s.label_file = e.labels;
        out.push_back(std::move(s));
    }
    return out;
}

metrics::MetricReport evaluate_model(const net::Model& model,
                                     const diffusion::NoiseSchedule& sched, int sample_steps,
                                     const std::vector<LoadedSample>& samples, uint64_t seed,
                                     int threads, const std::string& pred_dir) {
    if (samples.empty()) throw ContractError("eval: split is empty");
    std::vector<metrics::LabelMatrix> preds(samples.size()), gts(samples.size());

    int n_threads = threads > 0 ? threads : 1;
    if (const char* env = std::getenv("SEGDIFF_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0) n_threads = std::min(n_threads, cap);
    }
    n_threads = std::min<int>(n_threads, static_cast<int>(samples.size()));

    auto work = [&](size_t begin, size_t stride) {
        for (size_t i = begin; i < samples.size(); i += stride) {
            auto r = net::infer(model, samples[i].ts.holistic, samples[i].ts.partial, sched,
                                sample_steps, mix_seed(seed, i));
            preds[i] = r.binary;
            gts[i] = samples[i].ts.labels;
        }
    };
    if (n_threads <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < n_threads; ++k)
            pool.emplace_back(work, static_cast<size_t>(k), static_cast<size_t>(n_threads));
        for (auto& t : pool) t.join();
    }

    if (!pred_dir.empty()) {
        fs::create_directories(pred_dir);
        for (size_t i = 0; i < samples.size(); ++i)
            synth::write_labels((fs::path(pred_dir) / samples[i].label_file).string(), preds[i]);
    }
    return metrics::evaluate(preds, gts);
}

}  // namespace

// ---- train ----

TrainOutcome train_run(const RunConfig& cfg, const std::string& resume, std::ostream* progress) {
    synth::Manifest man = synth::read_manifest(cfg.manifest);
    auto train_samples = load_split(man, cfg.manifest, "train");
    auto val_samples = load_split(man, cfg.manifest, "val");
    if (train_samples.empty()) throw ContractError("train: train split is empty");

    fs::create_directories(cfg.out_dir);
    const int input_dim = train_samples[0].ts.holistic.dim(1);
    const int classes = train_samples[0].ts.labels.C;

    net::Model model(cfg.model_config(input_dim, classes), cfg.seed);
    diffusion::NoiseSchedule sched = cfg.noise_schedule();
    net::AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
    net::Trainer trainer(model, sched, adam, cfg.seed);

    int start_epoch = 0;
    if (!resume.empty()) {
        auto lc = net::load_checkpoint(resume, model, &trainer);
        start_epoch = lc.train_state.present ? lc.train_state.epoch : 0;
    }

    std::ofstream log((fs::path(cfg.out_dir) / "train_log.jsonl").string(),
                      resume.empty() ? std::ios::trunc : std::ios::app);
    const auto t0 = std::chrono::steady_clock::now();

    double last_loss = 0.0;
    int64_t step = trainer.steps_done();
    const int n = static_cast<int>(train_samples.size());
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        // Batch order depends only on (seed, epoch) so a resumed run sees the
        // same stream.
        std::vector<int> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        Rng order(mix_seed(cfg.seed, 0xE70C0000ULL + static_cast<uint64_t>(epoch)));
        for (int i = n - 1; i > 0; --i)
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(order.uniform_int(0, i))]);

        for (int b = 0; b < n; b += cfg.batch) {
            std::vector<net::TrainSample> batch;
            for (int i = b; i < std::min(n, b + cfg.batch); ++i)
                batch.push_back(train_samples[static_cast<size_t>(idx[static_cast<size_t>(i)])].ts);
            last_loss = trainer.train_step(batch);
            ++step;
            const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
            log << json{{"step", step}, {"epoch", epoch}, {"loss", last_loss}, {"wall_ms", ms}}
                       .dump()
                << "\n";
        }
        if (progress && (epoch % 10 == 0 || epoch + 1 == cfg.epochs))
            *progress << "epoch " << epoch << " loss " << last_loss << "\n";
        net::save_checkpoint((fs::path(cfg.out_dir) / "model.sdm1").string(), model, &trainer,
                             epoch + 1);
    }

    TrainOutcome out;
    out.checkpoint_path = (fs::path(cfg.out_dir) / "model.sdm1").string();
    out.final_loss = last_loss;
    if (!val_samples.empty()) {
        out.val = evaluate_model(model, sched, cfg.sample_steps, val_samples, cfg.seed, 0, "");
        std::ofstream vm((fs::path(cfg.out_dir) / "val_metrics.json").string());
        vm << report_to_json(out.val) << "\n";
    }
    return out;
}

// ---- eval ----

metrics::MetricReport eval_run(const std::string& checkpoint, const std::string& manifest,
                               const std::string& split, uint64_t seed, int sample_steps,
                               int threads, const std::string& pred_dir) {
    synth::Manifest man = synth::read_manifest(manifest);
    auto samples = load_split(man, manifest, split);
    if (samples.empty()) throw ContractError("eval: split '" + split + "' is empty");

    auto header = net::read_checkpoint_header(checkpoint);
    net::Model model(header.config, 0);
    net::load_checkpoint(checkpoint, model);

    diffusion::ScheduleParams p;
    // Sampling uses the same default schedule family the model was trained
    // with; the schedule itself lives in the run config, so eval rebuilds the
    // cosine default unless overridden by retraining.
    auto sched = diffusion::build_schedule(1000, diffusion::ScheduleKind::Cosine, p);
    return evaluate_model(model, sched, sample_steps, samples, seed, threads, pred_dir);
}

metrics::MetricReport eval_pred_dir(const std::string& pred_dir, const std::string& manifest,
                                    const std::string& split) {
    synth::Manifest man = synth::read_manifest(manifest);
    auto entries = man.split(split);
    if (entries.empty()) throw ContractError("eval: split '" + split + "' is empty");
    const fs::path base = fs::path(manifest).parent_path();
    std::vector<metrics::LabelMatrix> preds, gts;
    for (const auto& e : entries) {
        preds.push_back(synth::read_labels((fs::path(pred_dir) / e.labels).string()));
        gts.push_back(synth::read_labels((base / e.labels).string()));
    }
    return metrics::evaluate(preds, gts);
}

std::string report_to_json(const metrics::MetricReport& r) {
    json per = json::array();
    for (const auto& s : r.per_sample)
        per.push_back({{"acc", s.acc},
                       {"edit", s.edit},
                       {"f1_10", s.f1_10},
                       {"f1_25", s.f1_25},
                       {"f1_50", s.f1_50}});
    return json{{"acc", r.acc},
                {"edit", r.edit},
                {"f1_10", r.f1_10},
                {"f1_25", r.f1_25},
                {"f1_50", r.f1_50},
                {"per_sample", per}}
        .dump(2);
}

metrics::MetricReport report_from_json(const std::string& s) {
    json j = json::parse(s);
    metrics::MetricReport r;
    r.acc = j.at("acc");
    r.edit = j.at("edit");
    r.f1_10 = j.at("f1_10");
    r.f1_25 = j.at("f1_25");
    r.f1_50 = j.at("f1_50");
    for (const auto& e : j.at("per_sample")) {
        metrics::SampleMetrics m;
        m.acc = e.at("acc");
        m.edit = e.at("edit");
        m.f1_10 = e.at("f1_10");
        m.f1_25 = e.at("f1_25");
        m.f1_50 = e.at("f1_50");
        r.per_sample.push_back(m);
    }
    return r;
}

// ---- ablation ----

std::vector<AblationRow> ablate_run(const RunConfig& cfg, const std::vector<std::string>& variants,
                                    std::ostream* progress) {
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        RunConfig vc = apply_variant(cfg, v);
        if (progress) *progress << "== variant " << v << " ==\n";
        TrainOutcome t = train_run(vc, "", progress);
        AblationRow row;
        row.variant = v;
        row.report = eval_run(t.checkpoint_path, vc.manifest, "test", vc.seed, vc.sample_steps);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "variant\tACC\tEDIT\tF1@10\tF1@25\tF1@50\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\n", r.variant.c_str(),
                      r.report.acc, r.report.edit, r.report.f1_10, r.report.f1_25, r.report.f1_50);
        os << buf;
    }
    return os.str();
}

// ---- rendering ----

namespace {

std::string labelset_color(uint64_t mask) {
    if (mask == 0) return "#e8e8e8";  // background / target absent
    // golden-ratio hue walk keyed on the labelset, fixed saturation/lightness
    uint64_t h = mix_seed(mask, 0xC010FULL);
    double hue = static_cast<double>(h % 3600) / 10.0;
    // hsl(hue, 65%, 55%) -> rgb
    const double s = 0.65, l = 0.55;
    const double c = (1.0 - std::fabs(2.0 * l - 1.0)) * s;
    const double hp = hue / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    const double m = l - c / 2.0;
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>((r + m) * 255.0),
                  static_cast<int>((g + m) * 255.0), static_cast<int>((b + m) * 255.0));
    return buf;
}

}  // namespace

void render_svg(const metrics::LabelMatrix& pred, const metrics::LabelMatrix& gt,
                const std::string& out_path) {
    if (pred.L != gt.L || pred.C != gt.C)
        throw ContractError("render: prediction and ground truth lengths differ");
    const int L = gt.L;
    const double W = 960.0, band_h = 40.0, gap = 12.0;
    const double px = W / std::max(1, L);
    const double H = band_h * 3 + gap * 4;

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    char buf[256];
    auto band = [&](const metrics::LabelMatrix& m, double y) {
        for (const auto& s : metrics::to_segments(m)) {
            std::snprintf(buf, sizeof(buf),
                          "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>\n",
                          s.start * px, y, (s.end - s.start) * px, band_h,
                          labelset_color(s.labels).c_str());
            os << buf;
        }
    };
    band(gt, gap);
    band(pred, gap * 2 + band_h);
    // correctness strip: blue where the predicted labelset matches, green where not
    const double y2 = gap * 3 + band_h * 2;
    int start = 0;
    auto ok = [&](int t) { return pred.labelset(t) == gt.labelset(t); };
    for (int t = 1; t <= L; ++t) {
        if (t == L || ok(t) != ok(start)) {
            std::snprintf(buf, sizeof(buf),
                          "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>\n",
                          start * px, y2, (t - start) * px, band_h,
                          ok(start) ? "#3465c0" : "#3fae5a");
            os << buf;
            start = t;
        }
    }
    os << "</svg>\n";

    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw FormatError(out_path + ": cannot open for writing");
    f << os.str();
}

}  // namespace segdiff::runner
