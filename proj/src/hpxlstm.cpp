#include "segdiff/hpxlstm.hpp"

#include <cmath>

namespace segdiff::xlstm {

BranchParams BranchParams::init(int d, Rng& rng, double scale) {
    const double s = scale / std::sqrt(static_cast<double>(d));
    BranchParams p;
    p.W_q = Tensor::randn({d, d}, rng, s, true);
    p.W_k = Tensor::randn({d, d}, rng, s, true);
    p.W_v = Tensor::randn({d, d}, rng, s, true);
    p.W_o = Tensor::randn({d, d}, rng, s, true);
    p.b_q = Tensor::zeros({d}, true);
    p.b_k = Tensor::zeros({d}, true);
    p.b_v = Tensor::zeros({d}, true);
    p.b_o = Tensor::zeros({d}, true);
    p.w_i = Tensor::randn({d}, rng, s, true);
    p.w_f = Tensor::randn({d}, rng, s, true);
    p.b_i = Tensor::scalar(0.0, true);
    p.b_f = Tensor::scalar(1.0, true);  // start with a retentive forget gate
    p.W_Q = Tensor::randn({d, d}, rng, s, true);
    p.W_K = Tensor::randn({d, d}, rng, s, true);
    p.W_V = Tensor::randn({d, d}, rng, s, true);
    return p;
}

std::vector<std::pair<std::string, Tensor>> BranchParams::named(const std::string& prefix) const {
    return {{prefix + ".W_q", W_q}, {prefix + ".W_k", W_k}, {prefix + ".W_v", W_v},
            {prefix + ".W_o", W_o}, {prefix + ".b_q", b_q}, {prefix + ".b_k", b_k},
            {prefix + ".b_v", b_v}, {prefix + ".b_o", b_o}, {prefix + ".w_i", w_i},
            {prefix + ".w_f", w_f}, {prefix + ".b_i", b_i}, {prefix + ".b_f", b_f},
            {prefix + ".W_Q", W_Q}, {prefix + ".W_K", W_K}, {prefix + ".W_V", W_V}};
}

std::pair<Tensor, Tensor> bca(const Tensor& zh, const Tensor& zp, const BranchParams& ph,
                              const BranchParams& pp) {
    if (zh.ndim() != 2 || zp.ndim() != 2 || zh.dim(0) != zp.dim(0) || zh.dim(1) != zp.dim(1))
        throw ContractError("bca: sequences must share length and width");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(zh.dim(1)));

    // h -> p: holistic queries attend over partial keys, carrying holistic
    // values into the partial branch's gate path.
    Tensor a_hp = nk::softmax(
        nk::mul_scalar(nk::matmul(nk::matmul(zh, ph.W_Q), nk::transpose(nk::matmul(zp, ph.W_K))),
                       inv_sqrt_d),
        1);
    Tensor xp_tilde = nk::matmul(a_hp, nk::matmul(zh, ph.W_V));

    Tensor a_ph = nk::softmax(
        nk::mul_scalar(nk::matmul(nk::matmul(zp, pp.W_Q), nk::transpose(nk::matmul(zh, pp.W_K))),
                       inv_sqrt_d),
        1);
    Tensor xh_tilde = nk::matmul(a_ph, nk::matmul(zp, pp.W_V));

    return {xh_tilde, xp_tilde};
}

std::pair<MLSTMState, Tensor> mlstm_step(const MLSTMState& state, const Tensor& z_t,
                                         const Tensor& gate_input_tilde, const BranchParams& p,
                                         ForgetGate fg) {
    const int d = p.W_q.dim(0);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor q = nk::affine(z_t, p.W_q, p.b_q);
    Tensor k = nk::affine(z_t, p.W_k, p.b_k, inv_sqrt_d);
    Tensor v = nk::affine(z_t, p.W_v, p.b_v);
    Tensor o = nk::sigmoid(nk::affine(z_t, p.W_o, p.b_o));

    Tensor ftil = nk::add(nk::dot(p.w_f, z_t), p.b_f);
    Tensor logf = (fg == ForgetGate::Exp) ? ftil : nk::logsigmoid(ftil);

    // Log-space stabilizer: m' = max(log f + m, i~); the gates below are the
    // unstabilized ones rescaled by e^{-m'}, so (C, n) stay bounded while the
    // hidden state is exactly the unstabilized one.
    const double m_new = std::max(logf.item() + state.m, gate_input_tilde.item());
    if (std::isnan(m_new)) throw NumericError("mlstm_step: NaN gate pre-activation");
    Tensor i_gate = nk::stable_exp(gate_input_tilde, Tensor::scalar(m_new));
    Tensor f_gate = nk::stable_exp(logf, Tensor::scalar(m_new - state.m));

    MLSTMState out;
    out.C = nk::add(nk::mul(f_gate, state.C), nk::mul(i_gate, nk::outer(v, k)));
    out.n = nk::add(nk::mul(f_gate, state.n), nk::mul(i_gate, k));
    out.m = m_new;

    // Unstabilized denominator is max{|n^T q|, 1}; with n scaled by e^{-m'}
    // the floor becomes e^{-m'}.
    const double floor = std::exp(std::min(-m_new, 700.0));
    Tensor denom = nk::maximum(nk::abs(nk::dot(out.n, q)), Tensor::scalar(floor));
    Tensor h = nk::mul(o, nk::div(nk::matvec(out.C, q), denom));
    for (double x : h.data())
        if (std::isnan(x)) throw NumericError("mlstm_step: NaN hidden state");
    return {out, h};
}

namespace {

Tensor run_branch(const Tensor& z, const Tensor& gate_feats, const BranchParams& p,
                  ForgetGate fg) {
    const int L = z.dim(0), d = z.dim(1);
    MLSTMState state = MLSTMState::zero(d);
    std::vector<Tensor> hs;
    hs.reserve(static_cast<size_t>(L));
    for (int t = 0; t < L; ++t) {
        Tensor z_t = nk::row(z, t);
        Tensor itil = nk::add(nk::dot(p.w_i, nk::row(gate_feats, t)), p.b_i);
        auto [next, h] = mlstm_step(state, z_t, itil, p, fg);
        state = next;
        hs.push_back(h);
    }
    return nk::stack_rows(hs);
}

}  // namespace

std::pair<Tensor, Tensor> hp_xlstm(const Tensor& zh, const Tensor& zp, const BranchParams& ph,
                                   const BranchParams& pp, const HpOptions& opt) {
    if (zh.dim(0) != zp.dim(0)) throw ContractError("hp_xlstm: length mismatch");
    Tensor gh = zh, gp = zp;
    if (opt.bca_enabled) {
        auto [xh, xp] = bca(zh, zp, ph, pp);
        gh = xh;
        gp = xp;
    }
    Tensor zh_hat = run_branch(zh, gh, ph, opt.forget);
    Tensor zp_hat = run_branch(zp, gp, pp, opt.forget);
    return {zh_hat, zp_hat};
}

Tensor mlstm_sequence(const Tensor& z, const BranchParams& p, ForgetGate fg) {
    return run_branch(z, z, p, fg);
}

}  // namespace segdiff::xlstm
