#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "segdiff/error.hpp"
#include "segdiff/rng.hpp"

namespace segdiff::nk {

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One executed operation (or leaf). The tape order is the creation order:
// `seq` is a process-wide monotone counter, and backward() replays nodes in
// strictly decreasing `seq`.
struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily, same length as value
    bool requires_grad = false;
    uint64_t seq = 0;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Value-semantics handle over a graph node. Values are immutable once
// produced by an operation; leaves may be mutated through data() before any
// op consumes them.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
    bool is_scalar() const { return size() == 1; }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    double item() const;

    double at(int i) const { return node_->value[static_cast<size_t>(i)]; }
    double at(int i, int j) const;
    double& at(int i) { return node_->value[static_cast<size_t>(i)]; }
    double& at(int i, int j);

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    // Gradient accumulated by the last backward(); zero if untouched.
    std::vector<double> grad() const;
    void zero_grad();

    detail::NodePtr node() const { return node_; }
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

  private:
    detail::NodePtr node_;
};

// Disables taping in its scope (inference paths).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

// Factory used by ops (including the Fourier module's custom transforms).
// requires_grad of the result follows from the parents and the guard state.
Tensor make_op(std::vector<int> shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backprop);

// ---- elementwise / scalar ----
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or either scalar
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor sigmoid(const Tensor& a);
Tensor logsigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor maximum(const Tensor& a, const Tensor& b);  // same shape or either scalar; ties favor a
// exp(x - m) with m a detached scalar; exponent clamped so the result is
// always finite, and exactly 0.0 below the underflow clamp.
Tensor stable_exp(const Tensor& x, const Tensor& m);

// ---- shape ----
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor transpose(const Tensor& a);
Tensor row(const Tensor& a, int i);                   // 2-D -> 1-D
Tensor rows(const Tensor& a, int i0, int i1);         // half-open row slice
Tensor concat_cols(const std::vector<Tensor>& xs);    // [L x Di] -> [L x sum(Di)]
Tensor stack_rows(const std::vector<Tensor>& xs);     // n 1-D vectors -> [n x d]
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // broadcast 1-D v over rows of a

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matvec(const Tensor& a, const Tensor& x);  // [m x n] . [n] -> [m]
Tensor dot(const Tensor& a, const Tensor& b);     // 1-D . 1-D -> scalar
Tensor outer(const Tensor& u, const Tensor& v);   // [m] x [n] -> [m x n]
// pre_scale * (x . W) + b, x: [in], W: [in x out], b: [out]
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b, double pre_scale = 1.0);

// ---- reductions / rowwise ----
Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);
Tensor reduce_max(const Tensor& a);
Tensor rowwise_max(const Tensor& a);  // [L x C] -> [L]
Tensor softmax(const Tensor& a, int axis);

// ---- structured ----
// x: [L x Din], w: [K x Din x Dout], b: [Dout]; centered, zero padded,
// length preserving. K must be odd.
Tensor dilated_conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int dilation);
// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse execution order.
// Gradients land in each requires_grad tensor's grad() buffer (additive).
void backward(const Tensor& loss);

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    int worst_index = -1;
};

// Central finite differences (h = 1e-5) against the taped gradient of
// f(x) -> scalar, coordinate by coordinate.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double tol,
                           double h = 1e-5);

}  // namespace segdiff::nk
