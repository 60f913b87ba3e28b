#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "segdiff/netseg.hpp"

using namespace segdiff;
using namespace segdiff::net;
using nk::Tensor;

namespace {

ModelConfig tiny_config(int input_dim = 5, int classes = 3) {
    ModelConfig c;
    c.input_dim = input_dim;
    c.classes = classes;
    c.width = 6;
    c.enc_layers = 2;
    c.dec_layers = 2;
    c.dec_maps = 8;
    c.kernel = 3;
    c.time_emb_dim = 8;
    c.dropout_enc = 0.0;
    c.dropout_dec = 0.0;
    return c;
}

metrics::LabelMatrix random_binary(int L, int C, Rng& rng) {
    auto m = metrics::LabelMatrix::zeros(L, C);
    for (auto& b : m.v) b = rng.bernoulli(0.4) ? 1 : 0;
    return m;
}

TrainSample random_sample(const ModelConfig& cfg, int L, Rng& rng) {
    TrainSample s;
    s.holistic = Tensor::randn({L, cfg.input_dim}, rng);
    s.partial = Tensor::randn({L, cfg.input_dim}, rng);
    s.labels = random_binary(L, cfg.classes, rng);
    return s;
}

// scalar-loop re-implementation of the training loss
double loss_oracle(const Tensor& pred, const Tensor& gt) {
    const int L = pred.dim(0), C = pred.dim(1);
    double bce = 0;
    for (int i = 0; i < L * C; ++i) {
        double p = std::min(std::max(pred.at(i), 1e-6), 1.0 - 1e-6);
        double g = gt.at(i);
        bce += -(g * std::log(p) + (1 - g) * std::log(1 - p));
    }
    bce /= L * C;
    if (L < 2) return bce;
    auto bound = [&](const Tensor& y) {
        std::vector<double> bmax(static_cast<size_t>(L - 1), 0.0);
        for (int t = 0; t + 1 < L; ++t) {
            double mx = 0;
            for (int c = 0; c < C; ++c) {
                double yp = std::min(std::max(y.at(t + 1, c), 1e-6), 1.0 - 1e-6);
                double yc = std::min(std::max(y.at(t, c), 1e-6), 1.0 - 1e-6);
                // no clamp applies to gt values, but clamping {0,1} moves them
                // by 1e-6 only; reproduce the implementation: pred is clamped
                // before the boundary statistic, gt is not
                mx = std::max(mx, std::fabs(yp - yc));
            }
            bmax[size_t(t)] = mx;
        }
        std::vector<double> sm(bmax.size(), 0.0);
        for (size_t t = 0; t < bmax.size(); ++t) {
            double acc = 0.5 * bmax[t];
            if (t > 0) acc += 0.25 * bmax[t - 1];
            if (t + 1 < bmax.size()) acc += 0.25 * bmax[t + 1];
            sm[t] = acc;
        }
        return sm;
    };
    // clamp only the prediction, as the implementation does
    Tensor pc = Tensor::zeros({L, C});
    for (int i = 0; i < L * C; ++i)
        pc.at(i) = std::min(std::max(pred.at(i), 1e-6), 1.0 - 1e-6);
    auto bp = bound(pc);
    // gt passes through unclamped
    std::vector<double> bg;
    {
        std::vector<double> bmax(static_cast<size_t>(L - 1), 0.0);
        for (int t = 0; t + 1 < L; ++t) {
            double mx = 0;
            for (int c = 0; c < C; ++c) mx = std::max(mx, std::fabs(gt.at(t + 1, c) - gt.at(t, c)));
            bmax[size_t(t)] = mx;
        }
        bg.assign(bmax.size(), 0.0);
        for (size_t t = 0; t < bmax.size(); ++t) {
            double acc = 0.5 * bmax[t];
            if (t > 0) acc += 0.25 * bmax[t - 1];
            if (t + 1 < bmax.size()) acc += 0.25 * bmax[t + 1];
            bg[t] = acc;
        }
    }
    double mse = 0;
    for (size_t t = 0; t < bp.size(); ++t) mse += (bp[t] - bg[t]) * (bp[t] - bg[t]);
    mse /= static_cast<double>(bp.size());
    return bce + mse;
}

}  // namespace

TEST_CASE("encoder shapes and zeroed parameters") {
    auto cfg = tiny_config();
    Model model(cfg, 1);
    for (int L : {1, 7, 64}) {
        Rng rng(static_cast<uint64_t>(L));
        Tensor x = Tensor::randn({L, cfg.input_dim}, rng);
        Tensor z = model.encode(x, Branch::Holistic);
        CHECK(z.dim(0) == L);
        CHECK(z.dim(1) == cfg.width);
    }
    // zero input with zero biases gives zero output (biases start at zero)
    Tensor z0 = model.encode(Tensor::zeros({4, cfg.input_dim}), Branch::Partial);
    for (int i = 0; i < 4 * cfg.width; ++i) CHECK(z0.at(i) == 0.0);

    Rng rng(3);
    CHECK_THROWS_AS(model.encode(Tensor::randn({4, cfg.input_dim + 1}, rng), Branch::Holistic),
                    ConfigError);
}

TEST_CASE("encoder gradient check") {
    auto cfg = tiny_config(3, 2);
    cfg.enc_layers = 2;
    Model model(cfg, 5);
    for (uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(seed + 11);
        Tensor x = Tensor::randn({8, cfg.input_dim}, rng, 1.0, true);
        auto f = [&](const Tensor& t) {
            return nk::reduce_sum(nk::mul(model.encode(t, Branch::Holistic),
                                          model.encode(t, Branch::Holistic)));
        };
        auto rep = nk::grad_check(f, x, 1e-4);
        CHECK_MESSAGE(rep.pass, "seed ", seed, " max rel err ", rep.max_rel_err);
    }
}

TEST_CASE("denoise output range, time sensitivity, degenerate length") {
    auto cfg = tiny_config();
    Model model(cfg, 2);
    auto sched = diffusion::build_schedule(16, diffusion::ScheduleKind::Cosine);
    Rng rng(7);
    const int L = 8;
    Tensor h = Tensor::randn({L, cfg.input_dim}, rng);
    Tensor p = Tensor::randn({L, cfg.input_dim}, rng);
    auto [cond_h, cond_p] = model.conditions(h, p);
    Tensor y = Tensor::randn({L, cfg.classes}, rng);

    Tensor out1 = model.denoise(y, 3, cond_h, Branch::Holistic);
    for (double v : out1.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    Tensor out2 = model.denoise(y, 13, cond_h, Branch::Holistic);
    double diff = 0;
    for (int i = 0; i < L * cfg.classes; ++i)
        diff = std::max(diff, std::fabs(out1.at(i) - out2.at(i)));
    CHECK(diff > 0.0);

    // L = 1 passes through
    Tensor h1 = Tensor::randn({1, cfg.input_dim}, rng);
    Tensor p1 = Tensor::randn({1, cfg.input_dim}, rng);
    auto [c1, c1p] = model.conditions(h1, p1);
    Tensor o = model.denoise(Tensor::randn({1, cfg.classes}, rng), 2, c1, Branch::Holistic);
    CHECK(o.dim(0) == 1);
}

TEST_CASE("loss hand values and oracle") {
    // perfect binary prediction
    Rng rng(9);
    auto gt_m = random_binary(6, 3, rng);
    Tensor gt = Tensor::zeros({6, 3});
    for (int i = 0; i < 18; ++i) gt.at(i) = gt_m.v[size_t(i)];
    CHECK(Model::loss(gt, gt).item() < 1e-4);

    // constant gt and pred = 0.5: boundary term vanishes, BCE = ln 2
    Tensor const_gt = Tensor::zeros({5, 2});
    Tensor half = Tensor::full({5, 2}, 0.5);
    CHECK(Model::loss(half, const_gt).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // random case against the scalar-loop oracle
    for (int trial = 0; trial < 10; ++trial) {
        auto g_m = random_binary(7, 3, rng);
        Tensor g = Tensor::zeros({7, 3});
        for (int i = 0; i < 21; ++i) g.at(i) = g_m.v[size_t(i)];
        Tensor pr = Tensor::zeros({7, 3});
        for (int i = 0; i < 21; ++i) pr.at(i) = rng.uniform();
        CHECK(std::fabs(Model::loss(pr, g).item() - loss_oracle(pr, g)) <= 1e-10);
    }

    Tensor nonbin = Tensor::full({4, 2}, 0.5);
    CHECK_THROWS_AS(Model::loss(nonbin, nonbin), ContractError);
}

TEST_CASE("loss gradient check end to end through both branches") {
    auto cfg = tiny_config(4, 3);
    cfg.width = 8;
    Model model(cfg, 3);
    auto sched = diffusion::build_schedule(8, diffusion::ScheduleKind::Cosine);
    Rng rng(13);
    const int L = 8;
    Tensor p = Tensor::randn({L, cfg.input_dim}, rng);
    Tensor gt = Tensor::zeros({L, cfg.classes});
    auto gm = random_binary(L, cfg.classes, rng);
    for (int i = 0; i < L * cfg.classes; ++i) gt.at(i) = gm.v[size_t(i)];
    Tensor y_t = Tensor::randn({L, cfg.classes}, rng);

    Tensor x0 = Tensor::randn({L, cfg.input_dim}, rng, 1.0, true);
    auto f = [&](const Tensor& t) {
        auto [ch, cp] = model.conditions(t, p);
        Tensor sh = model.denoise(y_t, 3, ch, Branch::Holistic);
        Tensor sp = model.denoise(y_t, 3, *cp, Branch::Partial);
        return nk::add(Model::loss(sh, gt), Model::loss(sp, gt));
    };
    auto rep = nk::grad_check(f, x0, 1e-4);
    CHECK_MESSAGE(rep.pass, "max rel err ", rep.max_rel_err);
}

TEST_CASE("decoder input width shrinks under no_dft_cond") {
    auto cfg = tiny_config();
    int full_width = cfg.decoder_in();
    cfg.no_dft_cond = true;
    CHECK(full_width - cfg.decoder_in() == 2 * cfg.width);
}

TEST_CASE("training overfits two samples and is deterministic") {
    auto cfg = tiny_config(4, 2);
    cfg.width = 8;
    auto sched = diffusion::build_schedule(32, diffusion::ScheduleKind::Cosine);
    Rng rng(17);
    std::vector<TrainSample> batch = {random_sample(cfg, 12, rng), random_sample(cfg, 12, rng)};

    Model model(cfg, 21);
    AdamConfig adam;
    adam.lr = 5e-3;
    Trainer trainer(model, sched, adam, 21);
    double first = trainer.train_step(batch);
    double last = first;
    for (int i = 1; i < 200; ++i) last = trainer.train_step(batch);
    CHECK(last < 0.1 * first);

    // bit-identical trajectory on a fresh identical run
    Model model2(cfg, 21);
    Trainer trainer2(model2, sched, adam, 21);
    CHECK(trainer2.train_step(batch) == first);
}

TEST_CASE("infer merge rules") {
    auto cfg = tiny_config(4, 2);
    auto sched = diffusion::build_schedule(16, diffusion::ScheduleKind::Cosine);
    Rng rng(23);
    Tensor h = Tensor::randn({6, cfg.input_dim}, rng);
    Tensor p = Tensor::randn({6, cfg.input_dim}, rng);

    Model model(cfg, 31);
    auto r = infer(model, h, p, sched, 8, 5);
    CHECK(r.merged.dim(0) == 6);
    for (int i = 0; i < 12; ++i) {
        CHECK(r.merged.at(i) == doctest::Approx(0.5 * (r.s_h.at(i) + r.s_p.at(i))));
        CHECK(r.merged.at(i) >= 0.0);
        CHECK(r.merged.at(i) <= 1.0);
    }
    // strict threshold: exactly 0.5 binarizes to 0
    for (int t = 0; t < 6; ++t)
        for (int c = 0; c < 2; ++c)
            CHECK(r.binary.at(t, c) == (r.merged.at(t, c) > 0.5 ? 1 : 0));

    // identical runs are bit identical
    auto r2 = infer(model, h, p, sched, 8, 5);
    CHECK(r2.merged.data() == r.merged.data());

    // holistic-only ablation returns the single branch untouched
    cfg.no_partial = true;
    Model solo(cfg, 31);
    auto rs = infer(solo, h, p, sched, 8, 5);
    CHECK_FALSE(rs.s_p.defined());
    for (int i = 0; i < 12; ++i) CHECK(rs.merged.at(i) == rs.s_h.at(i));
}

TEST_CASE("ablation wiring: zero gradients for disabled components") {
    auto base = tiny_config(4, 2);
    auto sched = diffusion::build_schedule(16, diffusion::ScheduleKind::Cosine);
    Rng rng(29);
    std::vector<TrainSample> batch = {random_sample(base, 8, rng)};

    auto grad_norm_by_prefix = [&](const ModelConfig& cfg, const std::string& prefix) {
        Model model(cfg, 41);
        Trainer trainer(model, sched, AdamConfig{}, 41);
        trainer.train_step(batch);
        double norm = 0;
        for (const auto& [name, p] : model.params()) {
            if (name.rfind(prefix, 0) != 0) continue;
            for (double g : p.grad()) norm += g * g;
        }
        return norm;
    };

    ModelConfig cfg = base;
    CHECK(grad_norm_by_prefix(cfg, "enc.p") > 0.0);
    CHECK(grad_norm_by_prefix(cfg, "xl.h") > 0.0);

    cfg = base;
    cfg.no_partial = true;
    CHECK(grad_norm_by_prefix(cfg, "enc.p") == 0.0);
    CHECK(grad_norm_by_prefix(cfg, "dec.p") == 0.0);

    cfg = base;
    cfg.no_hpxlstm = true;
    CHECK(grad_norm_by_prefix(cfg, "xl.h") == 0.0);
    CHECK(grad_norm_by_prefix(cfg, "xl.p") == 0.0);

    cfg = base;
    cfg.no_bca = true;
    CHECK(grad_norm_by_prefix(cfg, "xl.h.W_Q") == 0.0);
    CHECK(grad_norm_by_prefix(cfg, "xl.h.W_V") == 0.0);
    CHECK(grad_norm_by_prefix(cfg, "xl.h.w_i") > 0.0);
}

TEST_CASE("branch independence under no_bca") {
    auto cfg = tiny_config(4, 2);
    cfg.no_bca = true;
    auto sched = diffusion::build_schedule(16, diffusion::ScheduleKind::Cosine);
    Rng rng(37);
    Tensor h = Tensor::randn({6, cfg.input_dim}, rng);
    Tensor p = Tensor::randn({6, cfg.input_dim}, rng);

    Model model(cfg, 43);
    auto r1 = infer(model, h, p, sched, 4, 9);

    // perturb every partial-branch parameter; s_h must not move
    for (const auto& [name, t] : model.params()) {
        if (name.rfind("enc.p", 0) == 0 || name.rfind("xl.p", 0) == 0 ||
            name.rfind("dec.p", 0) == 0) {
            for (double& x : const_cast<Tensor&>(t).data()) x += 0.37;
        }
    }
    auto r2 = infer(model, h, p, sched, 4, 9);
    CHECK(r2.s_h.data() == r1.s_h.data());
    CHECK(r2.s_p.data() != r1.s_p.data());
}

TEST_CASE("w/o-all wiring equals the vanilla single-branch baseline") {
    auto cfg = tiny_config(4, 2);
    cfg.no_partial = cfg.no_hpxlstm = cfg.no_bca = cfg.no_dft_cond = true;
    auto sched = diffusion::build_schedule(16, diffusion::ScheduleKind::Cosine);
    Rng rng(39);
    Tensor h = Tensor::randn({6, cfg.input_dim}, rng);
    Tensor p = Tensor::randn({6, cfg.input_dim}, rng);
    Model model(cfg, 47);

    // under all flags the conditions reduce to (z, z) of the holistic encoder
    auto [cond, cond_p] = model.conditions(h, p);
    Tensor z = model.encode(h, Branch::Holistic);
    CHECK(cond.temporal.data() == z.data());
    CHECK(cond.raw.data() == z.data());
    CHECK_FALSE(cond.frequency.defined());
    CHECK_FALSE(cond_p.has_value());
}

TEST_CASE("checkpoint round trip preserves parameters and config") {
    namespace fs = std::filesystem;
    auto path = (fs::temp_directory_path() / "segdiff_ckpt_test.sdm1").string();
    auto cfg = tiny_config(4, 2);
    Model model(cfg, 51);
    save_checkpoint(path, model);

    auto header = read_checkpoint_header(path);
    CHECK(header.config.width == cfg.width);
    CHECK_FALSE(header.train_state.present);

    Model loaded(header.config, 0);
    load_checkpoint(path, loaded);
    auto a = model.params();
    auto b = loaded.params();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        for (size_t j = 0; j < a[i].second.data().size(); ++j)
            CHECK(b[i].second.data()[j] ==
                  static_cast<double>(static_cast<float>(a[i].second.data()[j])));
    }

    // corrupted magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("NOPE", 4);
    }
    CHECK_THROWS_AS(read_checkpoint_header(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("resume reproduces the next loss bit-exactly") {
    namespace fs = std::filesystem;
    auto path = (fs::temp_directory_path() / "segdiff_resume_test.sdm1").string();
    auto cfg = tiny_config(4, 2);
    auto sched = diffusion::build_schedule(16, diffusion::ScheduleKind::Cosine);
    Rng rng(53);
    std::vector<TrainSample> batch = {random_sample(cfg, 8, rng)};

    Model model(cfg, 57);
    Trainer trainer(model, sched, AdamConfig{}, 57);
    for (int i = 0; i < 5; ++i) trainer.train_step(batch);
    save_checkpoint(path, model, &trainer, 1);

    auto resume_once = [&]() {
        auto header = read_checkpoint_header(path);
        Model m2(header.config, 0);
        Trainer t2(m2, sched, AdamConfig{}, 0);
        load_checkpoint(path, m2, &t2);
        return t2.train_step(batch);
    };
    double a = resume_once();
    double b = resume_once();
    CHECK(a == b);
    std::remove(path.c_str());
}
