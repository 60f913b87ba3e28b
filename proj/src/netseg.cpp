#include "segdiff/netseg.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace segdiff::net {

using json = nlohmann::json;

void ModelConfig::validate() const {
    if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
    if (classes < 1) throw ConfigError("model: classes must be >= 1");
    if (width < 1 || dec_maps < 1) throw ConfigError("model: widths must be >= 1");
    if (enc_layers < 1 || dec_layers < 1) throw ConfigError("model: layer counts must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("model: kernel width must be odd");
    if (time_emb_dim < 2) throw ConfigError("model: time_emb_dim must be >= 2");
    if (dropout_enc < 0 || dropout_enc >= 1 || dropout_dec < 0 || dropout_dec >= 1)
        throw ConfigError("model: dropout rates must be in [0,1)");
}

std::vector<std::pair<std::string, Tensor>> ConvStack::named(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out{{prefix + ".in_w", in_w},
                                                    {prefix + ".in_b", in_b}};
    for (size_t l = 0; l < w.size(); ++l) {
        out.emplace_back(prefix + ".w" + std::to_string(l), w[l]);
        out.emplace_back(prefix + ".b" + std::to_string(l), b[l]);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> DecoderParams::named(const std::string& prefix) const {
    auto out = stack.named(prefix);
    out.emplace_back(prefix + ".temb_w", temb_w);
    out.emplace_back(prefix + ".temb_b", temb_b);
    out.emplace_back(prefix + ".head_w", head_w);
    out.emplace_back(prefix + ".head_b", head_b);
    return out;
}

namespace {

ConvStack make_stack(int in_dim, int width, int layers, int kernel, Rng& rng) {
    ConvStack s;
    const double s_in = 1.0 / std::sqrt(static_cast<double>(in_dim));
    s.in_w = Tensor::randn({1, in_dim, width}, rng, s_in, true);
    s.in_b = Tensor::zeros({width}, true);
    const double s_l = 1.0 / std::sqrt(static_cast<double>(kernel * width));
    for (int l = 0; l < layers; ++l) {
        s.w.push_back(Tensor::randn({kernel, width, width}, rng, s_l, true));
        s.b.push_back(Tensor::zeros({width}, true));
    }
    return s;
}

// Dilated residual stack: h <- h + dropout(relu(conv_dil(h))), dilation 2^l.
Tensor run_stack(const ConvStack& s, const Tensor& x, double dropout_rate, Rng* rng) {
    Tensor h = nk::dilated_conv1d(x, s.in_w, s.in_b, 1);
    int dil = 1;
    for (size_t l = 0; l < s.w.size(); ++l) {
        Tensor hh = nk::relu(nk::dilated_conv1d(h, s.w[l], s.b[l], dil));
        if (rng && dropout_rate > 0) hh = nk::dropout(hh, dropout_rate, *rng);
        h = nk::add(h, hh);
        dil *= 2;
    }
    return h;
}

Tensor sinusoidal_embedding(int t, int dim) {
    std::vector<double> e(static_cast<size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        e[static_cast<size_t>(i)] = std::sin(t * freq);
        e[static_cast<size_t>(half + i)] = std::cos(t * freq);
    }
    return Tensor::from({dim}, std::move(e));
}

}  // namespace

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x90DE1ULL));
    enc_h_ = make_stack(cfg_.input_dim, cfg_.width, cfg_.enc_layers, cfg_.kernel, rng);
    enc_p_ = make_stack(cfg_.input_dim, cfg_.width, cfg_.enc_layers, cfg_.kernel, rng);
    xl_h_ = xlstm::BranchParams::init(cfg_.width, rng);
    xl_p_ = xlstm::BranchParams::init(cfg_.width, rng);
    auto make_decoder = [&](DecoderParams& d) {
        d.stack = make_stack(cfg_.decoder_in(), cfg_.dec_maps, cfg_.dec_layers, cfg_.kernel, rng);
        d.temb_w = Tensor::randn({cfg_.time_emb_dim, cfg_.dec_maps}, rng,
                                 1.0 / std::sqrt(static_cast<double>(cfg_.time_emb_dim)), true);
        d.temb_b = Tensor::zeros({cfg_.dec_maps}, true);
        d.head_w = Tensor::randn({1, cfg_.dec_maps, cfg_.classes}, rng,
                                 1.0 / std::sqrt(static_cast<double>(cfg_.dec_maps)), true);
        d.head_b = Tensor::zeros({cfg_.classes}, true);
    };
    make_decoder(dec_h_);
    make_decoder(dec_p_);
}

Tensor Model::encode(const Tensor& features, Branch which, Rng* dropout_rng) const {
    if (features.ndim() != 2 || features.dim(1) != cfg_.input_dim)
        throw ConfigError("encode: feature width does not match the configured input_dim");
    const ConvStack& s = which == Branch::Holistic ? enc_h_ : enc_p_;
    return run_stack(s, features, cfg_.dropout_enc, dropout_rng);
}

std::pair<fourier::ConditionBundle, std::optional<fourier::ConditionBundle>> Model::conditions(
    const Tensor& holistic, const Tensor& partial, Rng* dropout_rng) const {
    Tensor zh = encode(holistic, Branch::Holistic, dropout_rng);
    fourier::ConditionBundle ch;
    std::optional<fourier::ConditionBundle> cp;
    if (cfg_.no_partial) {
        if (cfg_.no_hpxlstm) {
            ch = fourier::make_conditions(zh, zh);
        } else {
            xlstm::HpOptions opt{cfg_.forget_exp ? xlstm::ForgetGate::Exp
                                                 : xlstm::ForgetGate::Sigmoid};
            ch = fourier::make_conditions(zh, xlstm::mlstm_sequence(zh, xl_h_, opt.forget));
        }
    } else {
        Tensor zp = encode(partial, Branch::Partial, dropout_rng);
        if (cfg_.no_hpxlstm) {
            ch = fourier::make_conditions(zh, zh);
            cp = fourier::make_conditions(zp, zp);
        } else {
            xlstm::HpOptions opt;
            opt.forget = cfg_.forget_exp ? xlstm::ForgetGate::Exp : xlstm::ForgetGate::Sigmoid;
            opt.bca_enabled = !cfg_.no_bca;
            auto [zh_hat, zp_hat] = xlstm::hp_xlstm(zh, zp, xl_h_, xl_p_, opt);
            ch = fourier::make_conditions(zh, zh_hat);
            cp = fourier::make_conditions(zp, zp_hat);
        }
    }
    if (cfg_.no_dft_cond) {
        ch.frequency = Tensor();
        if (cp) cp->frequency = Tensor();
    }
    return {ch, cp};
}

Tensor Model::denoise(const Tensor& y_t, int t, const fourier::ConditionBundle& cond, Branch which,
                      Rng* dropout_rng) const {
    if (y_t.ndim() != 2 || y_t.dim(1) != cfg_.classes)
        throw ContractError("denoise: y_t must be L x classes");
    if (y_t.dim(0) != cond.temporal.dim(0))
        throw ContractError("denoise: condition length mismatch");
    std::vector<Tensor> parts{y_t, cond.temporal};
    if (!cfg_.no_dft_cond) {
        if (!cond.frequency.defined())
            throw ContractError("denoise: frequency condition missing");
        // Spectrum bins grow with L (unnormalized transform); rescale so the
        // frequency channels match the magnitude of the temporal ones.
        parts.push_back(nk::mul_scalar(cond.frequency, 1.0 / y_t.dim(0)));
    }
    parts.push_back(cond.raw);
    Tensor x = nk::concat_cols(parts);

    const DecoderParams& d = which == Branch::Holistic ? dec_h_ : dec_p_;
    Tensor temb = nk::affine(sinusoidal_embedding(t, cfg_.time_emb_dim), d.temb_w, d.temb_b);
    Tensor h = nk::dilated_conv1d(x, d.stack.in_w, d.stack.in_b, 1);
    int dil = 1;
    for (size_t l = 0; l < d.stack.w.size(); ++l) {
        h = nk::add_rowvec(h, temb);
        Tensor hh = nk::relu(nk::dilated_conv1d(h, d.stack.w[l], d.stack.b[l], dil));
        if (dropout_rng && cfg_.dropout_dec > 0) hh = nk::dropout(hh, cfg_.dropout_dec, *dropout_rng);
        h = nk::add(h, hh);
        dil *= 2;
    }
    return nk::sigmoid(nk::dilated_conv1d(h, d.head_w, d.head_b, 1));
}

Tensor Model::loss(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) throw ContractError("loss: shape mismatch");
    for (double g : gt.data())
        if (g != 0.0 && g != 1.0) throw ContractError("loss: ground truth must be binary");
    Tensor p = nk::clamp(pred, 1e-6, 1.0 - 1e-6);
    Tensor one_minus_gt = nk::add_scalar(nk::neg(gt), 1.0);
    Tensor one_minus_p = nk::add_scalar(nk::neg(p), 1.0);
    Tensor bce = nk::neg(nk::reduce_mean(
        nk::add(nk::mul(gt, nk::log(p)), nk::mul(one_minus_gt, nk::log(one_minus_p)))));

    const int L = pred.dim(0);
    if (L < 2) return bce;

    // Boundary term: per-frame transition magnitude (max over classes of the
    // adjacent-frame difference), triangularly smoothed, MSE against the same
    // statistic of the ground truth.
    auto boundary = [&](const Tensor& y) {
        Tensor diff = nk::abs(nk::sub(nk::rows(y, 1, L), nk::rows(y, 0, L - 1)));
        Tensor bmax = nk::reshape(nk::rowwise_max(diff), {L - 1, 1});
        static const Tensor kTri = Tensor::from({3, 1, 1}, {0.25, 0.5, 0.25});
        static const Tensor kTriB = Tensor::zeros({1});
        return nk::dilated_conv1d(bmax, kTri, kTriB, 1);
    };
    Tensor db = nk::sub(boundary(p), boundary(gt));
    Tensor bl = nk::reduce_mean(nk::mul(db, db));
    return nk::add(bce, bl);
}

std::vector<std::pair<std::string, Tensor>> Model::params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto append = [&](std::vector<std::pair<std::string, Tensor>> v) {
        for (auto& p : v) out.push_back(std::move(p));
    };
    append(enc_h_.named("enc.h"));
    append(enc_p_.named("enc.p"));
    append(xl_h_.named("xl.h"));
    append(xl_p_.named("xl.p"));
    append(dec_h_.named("dec.h"));
    append(dec_p_.named("dec.p"));
    return out;
}

Tensor Model::to_diffusion_space(const Tensor& y01) const {
    if (!cfg_.scaled_labels) return y01;
    return nk::add_scalar(nk::mul_scalar(y01, 2.0), -1.0);
}

Tensor Model::to_probabilities(const Tensor& y_diff) const {
    if (!cfg_.scaled_labels) return nk::clamp(y_diff, 0.0, 1.0);
    return nk::clamp(nk::mul_scalar(nk::add_scalar(y_diff, 1.0), 0.5), 0.0, 1.0);
}

InferResult infer(const Model& model, const Tensor& holistic, const Tensor& partial,
                  const diffusion::NoiseSchedule& sched, int steps, uint64_t seed) {
    nk::NoGradGuard guard;
    const auto& cfg = model.config();
    auto [cond_h, cond_p] = model.conditions(holistic, partial, nullptr);
    const int L = holistic.dim(0), C = cfg.classes;

    auto run_branch = [&](const fourier::ConditionBundle& cond, Branch which,
                          uint64_t branch_seed) {
        Tensor last_prob;
        diffusion::Denoiser den = [&](const nk::Tensor& y, int t) {
            last_prob = model.denoise(y, t, cond, which, nullptr);
            return model.to_diffusion_space(last_prob);
        };
        diffusion::sample(den, {L, C}, sched, steps, branch_seed);
        return last_prob;
    };

    InferResult r;
    r.s_h = run_branch(cond_h, Branch::Holistic, mix_seed(seed, 0));
    if (!cfg.no_partial) {
        r.s_p = run_branch(*cond_p, Branch::Partial, mix_seed(seed, 1));
        r.merged = nk::mul_scalar(nk::add(r.s_h, r.s_p), 0.5);
    } else {
        r.merged = r.s_h;
    }
    r.binary = metrics::LabelMatrix::zeros(L, C);
    for (int t = 0; t < L; ++t)
        for (int c = 0; c < C; ++c)
            if (r.merged.at(t, c) > 0.5) r.binary.at(t, c) = 1;
    return r;
}

// ---- trainer ----

Trainer::Trainer(Model& model, diffusion::NoiseSchedule sched, AdamConfig opt, uint64_t seed)
    : model_(model), sched_(std::move(sched)), opt_(opt), rng_(mix_seed(seed, 0x7124EULL)) {
    for (const auto& [name, p] : model_.params()) {
        m_.emplace_back(p.data().size(), 0.0);
        v_.emplace_back(p.data().size(), 0.0);
    }
}

double Trainer::train_step(const std::vector<TrainSample>& batch) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    auto params = model_.params();
    for (auto& [name, p] : params) p.zero_grad();

    Tensor total = Tensor::scalar(0.0);
    for (const auto& s : batch) {
        const int t = rng_.uniform_int(1, sched_.T);
        const int L = s.labels.L, C = s.labels.C;
        std::vector<double> gt(static_cast<size_t>(L) * C);
        for (size_t i = 0; i < gt.size(); ++i) gt[i] = s.labels.v[i];
        Tensor y0 = Tensor::from({L, C}, std::move(gt));
        Tensor y0d = model_.to_diffusion_space(y0);

        auto [cond_h, cond_p] = model_.conditions(s.holistic, s.partial, &rng_);

        Tensor eps_h = Tensor::randn({L, C}, rng_);
        Tensor y_t_h = diffusion::forward_noise(y0d, t, eps_h, sched_);
        Tensor s_h = model_.denoise(y_t_h, t, cond_h, Branch::Holistic, &rng_);
        total = nk::add(total, Model::loss(s_h, y0));

        if (!model_.config().no_partial) {
            Tensor eps_p = Tensor::randn({L, C}, rng_);
            Tensor y_t_p = diffusion::forward_noise(y0d, t, eps_p, sched_);
            Tensor s_p = model_.denoise(y_t_p, t, *cond_p, Branch::Partial, &rng_);
            total = nk::add(total, Model::loss(s_p, y0));
        }
    }
    Tensor mean_loss = nk::mul_scalar(total, 1.0 / static_cast<double>(batch.size()));
    const double loss_value = mean_loss.item();
    if (!std::isfinite(loss_value))
        throw NumericError("train_step: non-finite loss at optimizer step " +
                           std::to_string(step_ + 1));
    nk::backward(mean_loss);

    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].second;
        const auto g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        auto& val = p.data();
        for (size_t j = 0; j < val.size(); ++j) {
            m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
            v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
            val[j] -= opt_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt_.eps);
        }
    }
    return loss_value;
}

// ---- checkpoints ----

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"input_dim", c.input_dim},   {"classes", c.classes},
                {"width", c.width},           {"enc_layers", c.enc_layers},
                {"dec_layers", c.dec_layers}, {"dec_maps", c.dec_maps},
                {"kernel", c.kernel},         {"time_emb_dim", c.time_emb_dim},
                {"dropout_enc", c.dropout_enc}, {"dropout_dec", c.dropout_dec},
                {"forget_exp", c.forget_exp}, {"scaled_labels", c.scaled_labels},
                {"no_partial", c.no_partial}, {"no_hpxlstm", c.no_hpxlstm},
                {"no_bca", c.no_bca},         {"no_dft_cond", c.no_dft_cond}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim");
    c.classes = j.at("classes");
    c.width = j.at("width");
    c.enc_layers = j.at("enc_layers");
    c.dec_layers = j.at("dec_layers");
    c.dec_maps = j.at("dec_maps");
    c.kernel = j.at("kernel");
    c.time_emb_dim = j.at("time_emb_dim");
    c.dropout_enc = j.at("dropout_enc");
    c.dropout_dec = j.at("dropout_dec");
    c.forget_exp = j.at("forget_exp");
    c.scaled_labels = j.at("scaled_labels");
    c.no_partial = j.at("no_partial");
    c.no_hpxlstm = j.at("no_hpxlstm");
    c.no_bca = j.at("no_bca");
    c.no_dft_cond = j.at("no_dft_cond");
    return c;
}

void write_f32_block(std::ostream& os, const std::vector<double>& v) {
    for (double x : v) {
        float f = static_cast<float>(x);
        os.write(reinterpret_cast<const char*>(&f), 4);
    }
}

void read_f32_block(std::istream& is, std::vector<double>& v, const std::string& path) {
    for (auto& x : v) {
        float f;
        if (!is.read(reinterpret_cast<char*>(&f), 4))
            throw FormatError(path + ": truncated parameter payload");
        x = static_cast<double>(f);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const Trainer* trainer,
                     int epoch) {
    auto params = model.params();
    json header;
    header["format"] = 1;
    header["config"] = config_to_json(model.config());
    json tensors = json::array();
    for (const auto& [name, p] : params)
        tensors.push_back({{"name", name}, {"shape", p.shape()}});
    header["tensors"] = tensors;
    if (trainer) {
        header["train_state"] = {{"adam_step", trainer->steps_done()},
                                 {"epoch", epoch},
                                 {"rng", trainer->rng_state()}};
    }
    const std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError(path + ": cannot open for writing");
    os.write("SDM1", 4);
    uint32_t len = static_cast<uint32_t>(hs.size());
    unsigned char b[4] = {static_cast<unsigned char>(len), static_cast<unsigned char>(len >> 8),
                          static_cast<unsigned char>(len >> 16),
                          static_cast<unsigned char>(len >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, p] : params) write_f32_block(os, p.data());
    if (trainer) {
        auto* self = const_cast<Trainer*>(trainer);
        for (const auto& m : self->moments_m()) write_f32_block(os, m);
        for (const auto& v : self->moments_v()) write_f32_block(os, v);
    }
    if (!os) throw FormatError(path + ": write failed");
}

namespace {

json read_header(std::ifstream& is, const std::string& path) {
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError(path + ": truncated at offset 0");
    if (std::memcmp(magic, "SDM1", 4) != 0)
        throw FormatError(path + ": bad magic at offset 0 (expected SDM1)");
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(path + ": truncated at offset 4");
    uint32_t len = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                   (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    std::string hs(len, '\0');
    if (!is.read(hs.data(), static_cast<std::streamsize>(len)))
        throw FormatError(path + ": truncated header");
    try {
        return json::parse(hs);
    } catch (const json::exception& e) {
        throw FormatError(path + ": invalid header JSON (" + e.what() + ")");
    }
}

}  // namespace

LoadedCheckpoint read_checkpoint_header(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(path + ": cannot open");
    json header = read_header(is, path);
    LoadedCheckpoint out;
    out.config = config_from_json(header.at("config"));
    if (header.contains("train_state")) {
        out.train_state.present = true;
        out.train_state.adam_step = header["train_state"].at("adam_step");
        out.train_state.epoch = header["train_state"].at("epoch");
        out.train_state.rng = header["train_state"].at("rng");
    }
    return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path, Model& model, Trainer* trainer) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(path + ": cannot open");
    json header = read_header(is, path);
    LoadedCheckpoint out;
    out.config = config_from_json(header.at("config"));

    auto params = model.params();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size())
        throw FormatError(path + ": tensor count does not match the model");
    for (size_t i = 0; i < params.size(); ++i) {
        if (tensors[i].at("name") != params[i].first)
            throw FormatError(path + ": tensor order mismatch at " + params[i].first);
        std::vector<int> shape = tensors[i].at("shape");
        if (shape != params[i].second.shape())
            throw FormatError(path + ": shape mismatch for " + params[i].first);
        read_f32_block(is, params[i].second.data(), path);
    }
    if (header.contains("train_state")) {
        out.train_state.present = true;
        out.train_state.adam_step = header["train_state"].at("adam_step");
        out.train_state.epoch = header["train_state"].at("epoch");
        out.train_state.rng = header["train_state"].at("rng");
        if (trainer) {
            for (auto& m : trainer->moments_m()) read_f32_block(is, m, path);
            for (auto& v : trainer->moments_v()) read_f32_block(is, v, path);
            trainer->set_step(out.train_state.adam_step);
            trainer->set_rng_state(out.train_state.rng);
        }
    }
    return out;
}

}  // namespace segdiff::net
