#pragma once

#include <utility>
#include <vector>

#include "segdiff/tensor.hpp"

namespace segdiff::xlstm {

using nk::Tensor;

// Matrix-memory recurrence state for one branch. The memory and normalizer
// are stored stabilized: the unstabilized pair is (C * e^m, n * e^m).
struct MLSTMState {
    Tensor C;  // d x d
    Tensor n;  // d
    double m = 0.0;

    static MLSTMState zero(int d) {
        MLSTMState s;
        s.C = Tensor::zeros({d, d});
        s.n = Tensor::zeros({d});
        s.m = 0.0;
        return s;
    }
};

// Per-branch parameters; the two branches never share these.
struct BranchParams {
    Tensor W_q, W_k, W_v, W_o;  // d x d
    Tensor b_q, b_k, b_v, b_o;  // d
    Tensor w_i, w_f;            // d
    Tensor b_i, b_f;            // scalars
    Tensor W_Q, W_K, W_V;       // d x d cross-attention projections

    static BranchParams init(int d, Rng& rng, double scale = 0.2);
    std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

// Whether the forget gate is sigmoid(f~) or exp(f~) (stabilized).
enum class ForgetGate { Sigmoid, Exp };

// Bidirectional cross-attention over the full sequences. Direction a->b uses
// the source branch's projections: scores = (za W_Q^a)(zb W_K^a)^T / sqrt(d),
// values za W_V^a. Returns the cross-attended gate inputs (x~h, x~p), where
// x~p aggregates holistic content for the partial branch and vice versa.
std::pair<Tensor, Tensor> bca(const Tensor& zh, const Tensor& zp, const BranchParams& ph,
                              const BranchParams& pp);

// One recurrence step. gate_input_tilde is the scalar input-gate
// pre-activation (from the cross-attention path in the full layer).
// Returns the new state and the hidden output h_t.
std::pair<MLSTMState, Tensor> mlstm_step(const MLSTMState& state, const Tensor& z_t,
                                         const Tensor& gate_input_tilde, const BranchParams& p,
                                         ForgetGate fg = ForgetGate::Sigmoid);

struct HpOptions {
    ForgetGate forget = ForgetGate::Sigmoid;
    bool bca_enabled = true;  // false: each branch gates on its own features
};

// The full dual-stream layer: cross-attention once over the sequences, then
// the two coupled recurrences left to right. Returns (zh_hat, zp_hat).
std::pair<Tensor, Tensor> hp_xlstm(const Tensor& zh, const Tensor& zp, const BranchParams& ph,
                                   const BranchParams& pp, const HpOptions& opt = {});

// Single uncoupled recurrence (input-gate pre-activation taken from the
// branch's own features); used by the single-branch ablations.
Tensor mlstm_sequence(const Tensor& z, const BranchParams& p, ForgetGate fg = ForgetGate::Sigmoid);

}  // namespace segdiff::xlstm
