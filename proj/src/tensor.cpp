#include "segdiff/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace segdiff::nk {

namespace {

std::atomic<uint64_t> g_seq{1};
thread_local bool g_grad_enabled = true;

int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DimensionError("negative dimension");
        n *= d;
    }
    return n;
}

detail::NodePtr new_leaf(std::vector<int> shape, std::vector<double> value, bool rg) {
    auto n = std::make_shared<detail::Node>();
    if (static_cast<int64_t>(value.size()) != numel_of(shape))
        throw DimensionError("data length does not match shape");
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = rg;
    n->seq = g_seq.fetch_add(1);
    return n;
}

std::string shape_str(const std::vector<int>& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + "]";
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value produced");
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::zeros(std::vector<int> shape, bool rg) {
    auto n = numel_of(shape);
    return Tensor(new_leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), rg));
}

Tensor Tensor::full(std::vector<int> shape, double v, bool rg) {
    auto n = numel_of(shape);
    return Tensor(new_leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), v), rg));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool rg) {
    return Tensor(new_leaf(std::move(shape), std::move(data), rg));
}

Tensor Tensor::scalar(double v, bool rg) { return from({1}, {v}, rg); }

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool rg) {
    auto n = numel_of(shape);
    std::vector<double> d(static_cast<size_t>(n));
    for (auto& x : d) x = stddev * rng.normal();
    return from(std::move(shape), std::move(d), rg);
}

double Tensor::item() const {
    if (!is_scalar()) throw ContractError("item(): tensor is not a scalar");
    return node_->value[0];
}

double Tensor::at(int i, int j) const {
    return node_->value[static_cast<size_t>(i) * node_->shape[1] + j];
}

double& Tensor::at(int i, int j) {
    return node_->value[static_cast<size_t>(i) * node_->shape[1] + j];
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.size() == node_->value.size()) return node_->grad;
    return std::vector<double>(node_->value.size(), 0.0);
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

// ---- guard ----

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- op factory ----

Tensor make_op(std::vector<int> shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backprop) {
    auto n = std::make_shared<detail::Node>();
    if (static_cast<int64_t>(value.size()) != numel_of(shape))
        throw DimensionError("make_op: data length does not match shape");
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->seq = g_seq.fetch_add(1);
    bool rg = false;
    if (g_grad_enabled)
        for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

// ---- elementwise helpers ----

namespace {

// a op b where either may be a scalar (the only broadcast allowed).
template <class FwdFn, class BwdFn>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, FwdFn fwd, BwdFn bwd_pair) {
    const bool as = a.is_scalar(), bs = b.is_scalar();
    if (!as && !bs) check_same_shape(a, b, name);
    const Tensor& big = bs ? a : b;
    const size_t n = static_cast<size_t>(big.size());
    std::vector<double> out(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(av[as ? 0 : i], bv[bs ? 0 : i]);
    auto an = a.node();
    auto bn = b.node();
    return make_op(big.shape(), std::move(out), {a, b}, [an, bn, as, bs, bwd_pair](detail::Node& o) {
        const bool need_a = an->requires_grad, need_b = bn->requires_grad;
        if (need_a) an->ensure_grad();
        if (need_b) bn->ensure_grad();
        for (size_t i = 0; i < o.value.size(); ++i) {
            double da = 0, db = 0;
            bwd_pair(an->value[as ? 0 : i], bn->value[bs ? 0 : i], o.value[i], o.grad[i], da, db);
            if (need_a) an->grad[as ? 0 : i] += da;
            if (need_b) bn->grad[bs ? 0 : i] += db;
        }
    });
}

template <class FwdFn, class BwdFn>
Tensor unary_op(const Tensor& a, FwdFn fwd, BwdFn bwd) {
    const size_t n = static_cast<size_t>(a.size());
    std::vector<double> out(n);
    const auto& av = a.data();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, bwd](detail::Node& o) {
        an->ensure_grad();
        for (size_t i = 0; i < o.value.size(); ++i)
            an->grad[i] += bwd(an->value[i], o.value[i]) * o.grad[i];
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                     [](double, double, double, double g, double& da, double& db) {
                         da = g;
                         db = g;
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double, double, double, double g, double& da, double& db) {
                         da = g;
                         db = -g;
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double x, double y, double, double g, double& da, double& db) {
                         da = g * y;
                         db = g * x;
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
    Tensor r = binary_op(a, b, "div", [](double x, double y) { return x / y; },
                         [](double x, double y, double, double g, double& da, double& db) {
                             da = g / y;
                             db = -g * x / (y * y);
                         });
    check_finite(r.data(), "div");
    return r;
}

Tensor neg(const Tensor& a) {
    return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a,
                    [](double x) {
                        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                      : std::exp(x) / (1.0 + std::exp(x));
                    },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor logsigmoid(const Tensor& a) {
    return unary_op(a,
                    [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); },
                    [](double x, double) {
                        // sigma(-x)
                        return x >= 0 ? std::exp(-x) / (1.0 + std::exp(-x))
                                      : 1.0 / (1.0 + std::exp(x));
                    });
}

Tensor relu(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                    [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& a) {
    Tensor r = unary_op(a, [](double x) { return std::log(x); },
                        [](double x, double) { return 1.0 / x; });
    check_finite(r.data(), "log");
    return r;
}

Tensor abs(const Tensor& a) {
    return unary_op(a, [](double x) { return std::fabs(x); },
                    [](double x, double) { return x >= 0 ? 1.0 : -1.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary_op(a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
                    [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
                     [](double x, double y, double, double g, double& da, double& db) {
                         if (x >= y)
                             da = g;
                         else
                             db = g;
                     });
}

Tensor stable_exp(const Tensor& x, const Tensor& m) {
    if (!m.is_scalar()) throw ContractError("stable_exp: stabilizer must be scalar");
    const double mv = m.item();
    const size_t n = static_cast<size_t>(x.size());
    std::vector<double> out(n);
    const auto& xv = x.data();
    for (size_t i = 0; i < n; ++i) {
        double e = xv[i] - mv;
        if (e <= -745.0)
            out[i] = 0.0;  // exact zero below the underflow clamp
        else
            out[i] = std::exp(std::min(e, 700.0));
    }
    auto xn = x.node();
    // m is detached: the stabilized value does not depend on it analytically.
    return make_op(x.shape(), std::move(out), {x}, [xn, mv](detail::Node& o) {
        xn->ensure_grad();
        for (size_t i = 0; i < o.value.size(); ++i) {
            double e = xn->value[i] - mv;
            double d = (e <= -745.0 || e >= 700.0) ? 0.0 : o.value[i];
            xn->grad[i] += d * o.grad[i];
        }
    });
}

// ---- shape ----

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (numel_of(shape) != a.size()) throw DimensionError("reshape: element count mismatch");
    auto an = a.node();
    return make_op(std::move(shape), a.data(), {a}, [an](detail::Node& o) {
        an->ensure_grad();
        for (size_t i = 0; i < o.value.size(); ++i) an->grad[i] += o.grad[i];
    });
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("transpose: expected 2-D");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = a.at(i, j);
    auto an = a.node();
    return make_op({n, m}, std::move(out), {a}, [an, m, n](detail::Node& o) {
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                an->grad[static_cast<size_t>(i) * n + j] += o.grad[static_cast<size_t>(j) * m + i];
    });
}

Tensor row(const Tensor& a, int i) {
    if (a.ndim() != 2) throw DimensionError("row: expected 2-D");
    if (i < 0 || i >= a.dim(0)) throw ContractError("row: index out of range");
    const int n = a.dim(1);
    std::vector<double> out(a.data().begin() + static_cast<size_t>(i) * n,
                            a.data().begin() + static_cast<size_t>(i + 1) * n);
    auto an = a.node();
    return make_op({n}, std::move(out), {a}, [an, i, n](detail::Node& o) {
        an->ensure_grad();
        for (int j = 0; j < n; ++j) an->grad[static_cast<size_t>(i) * n + j] += o.grad[j];
    });
}

Tensor rows(const Tensor& a, int i0, int i1) {
    if (a.ndim() != 2) throw DimensionError("rows: expected 2-D");
    if (i0 < 0 || i1 > a.dim(0) || i0 > i1) throw ContractError("rows: bad slice bounds");
    const int n = a.dim(1);
    std::vector<double> out(a.data().begin() + static_cast<size_t>(i0) * n,
                            a.data().begin() + static_cast<size_t>(i1) * n);
    auto an = a.node();
    return make_op({i1 - i0, n}, std::move(out), {a}, [an, i0, n](detail::Node& o) {
        an->ensure_grad();
        for (size_t k = 0; k < o.value.size(); ++k)
            an->grad[static_cast<size_t>(i0) * n + k] += o.grad[k];
    });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw DimensionError("concat_cols: empty input list");
    const int L = xs[0].dim(0);
    int total = 0;
    for (const auto& x : xs) {
        if (x.ndim() != 2 || x.dim(0) != L) throw DimensionError("concat_cols: row count mismatch");
        total += x.dim(1);
    }
    std::vector<double> out(static_cast<size_t>(L) * total);
    int off = 0;
    for (const auto& x : xs) {
        const int d = x.dim(1);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < d; ++j)
                out[static_cast<size_t>(i) * total + off + j] = x.at(i, j);
        off += d;
    }
    std::vector<int> widths;
    std::vector<detail::NodePtr> nodes;
    for (const auto& x : xs) {
        widths.push_back(x.dim(1));
        nodes.push_back(x.node());
    }
    return make_op({L, total}, std::move(out), xs, [nodes, widths, L, total](detail::Node& o) {
        int off2 = 0;
        for (size_t k = 0; k < nodes.size(); ++k) {
            const int d = widths[k];
            if (nodes[k]->requires_grad) {
                nodes[k]->ensure_grad();
                for (int i = 0; i < L; ++i)
                    for (int j = 0; j < d; ++j)
                        nodes[k]->grad[static_cast<size_t>(i) * d + j] +=
                            o.grad[static_cast<size_t>(i) * total + off2 + j];
            }
            off2 += d;
        }
    });
}

Tensor stack_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw DimensionError("stack_rows: empty input list");
    const int d = static_cast<int>(xs[0].size());
    const int L = static_cast<int>(xs.size());
    std::vector<double> out;
    out.reserve(static_cast<size_t>(L) * d);
    for (const auto& x : xs) {
        if (x.ndim() != 1 || x.size() != d) throw DimensionError("stack_rows: width mismatch");
        out.insert(out.end(), x.data().begin(), x.data().end());
    }
    std::vector<detail::NodePtr> nodes;
    for (const auto& x : xs) nodes.push_back(x.node());
    return make_op({L, d}, std::move(out), xs, [nodes, d](detail::Node& o) {
        for (size_t k = 0; k < nodes.size(); ++k) {
            if (!nodes[k]->requires_grad) continue;
            nodes[k]->ensure_grad();
            for (int j = 0; j < d; ++j) nodes[k]->grad[j] += o.grad[k * d + j];
        }
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    if (a.ndim() != 2 || v.ndim() != 1 || a.dim(1) != v.dim(0))
        throw DimensionError("add_rowvec: shape mismatch");
    const int L = a.dim(0), d = a.dim(1);
    std::vector<double> out(a.data());
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] += v.at(j);
    auto an = a.node();
    auto vn = v.node();
    return make_op({L, d}, std::move(out), {a, v}, [an, vn, L, d](detail::Node& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < o.value.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (vn->requires_grad) {
            vn->ensure_grad();
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < d; ++j) vn->grad[j] += o.grad[static_cast<size_t>(i) * d + j];
        }
    });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw DimensionError("matmul: expected 2-D operands");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) throw DimensionError("matmul: inner dimensions disagree");
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double aip = av[static_cast<size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const size_t bo = static_cast<size_t>(p) * n;
            const size_t oo = static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) out[oo + j] += aip * bv[bo + j];
        }
    auto an = a.node();
    auto bn = b.node();
    return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node& o) {
        if (an->requires_grad) {
            an->ensure_grad();  // gA += G . B^T
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double s = 0;
                    const size_t oo = static_cast<size_t>(i) * n;
                    const size_t bo = static_cast<size_t>(p) * n;
                    for (int j = 0; j < n; ++j) s += o.grad[oo + j] * bn->value[bo + j];
                    an->grad[static_cast<size_t>(i) * k + p] += s;
                }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();  // gB += A^T . G
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < m; ++i) {
                    const double aip = an->value[static_cast<size_t>(i) * k + p];
                    if (aip == 0.0) continue;
                    const size_t oo = static_cast<size_t>(i) * n;
                    const size_t bo = static_cast<size_t>(p) * n;
                    for (int j = 0; j < n; ++j) bn->grad[bo + j] += aip * o.grad[oo + j];
                }
        }
    });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    if (a.ndim() != 2 || x.ndim() != 1 || a.dim(1) != x.dim(0))
        throw DimensionError("matvec: shape mismatch");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
        double s = 0;
        for (int j = 0; j < n; ++j) s += a.at(i, j) * x.at(j);
        out[static_cast<size_t>(i)] = s;
    }
    auto an = a.node();
    auto xn = x.node();
    return make_op({m}, std::move(out), {a, x}, [an, xn, m, n](detail::Node& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    an->grad[static_cast<size_t>(i) * n + j] += o.grad[i] * xn->value[j];
        }
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    xn->grad[j] += an->value[static_cast<size_t>(i) * n + j] * o.grad[i];
        }
    });
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 1 || b.ndim() != 1 || a.size() != b.size())
        throw DimensionError("dot: shape mismatch");
    double s = 0;
    for (int i = 0; i < a.size(); ++i) s += a.at(i) * b.at(i);
    auto an = a.node();
    auto bn = b.node();
    return make_op({1}, {s}, {a, b}, [an, bn](detail::Node& o) {
        const double g = o.grad[0];
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < an->value.size(); ++i) an->grad[i] += g * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < bn->value.size(); ++i) bn->grad[i] += g * an->value[i];
        }
    });
}

Tensor outer(const Tensor& u, const Tensor& v) {
    if (u.ndim() != 1 || v.ndim() != 1) throw DimensionError("outer: expected 1-D operands");
    const int m = static_cast<int>(u.size()), n = static_cast<int>(v.size());
    std::vector<double> out(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = u.at(i) * v.at(j);
    auto un = u.node();
    auto vn = v.node();
    return make_op({m, n}, std::move(out), {u, v}, [un, vn, m, n](detail::Node& o) {
        if (un->requires_grad) {
            un->ensure_grad();
            for (int i = 0; i < m; ++i) {
                double s = 0;
                for (int j = 0; j < n; ++j) s += o.grad[static_cast<size_t>(i) * n + j] * vn->value[j];
                un->grad[i] += s;
            }
        }
        if (vn->requires_grad) {
            vn->ensure_grad();
            for (int j = 0; j < n; ++j) {
                double s = 0;
                for (int i = 0; i < m; ++i) s += o.grad[static_cast<size_t>(i) * n + j] * un->value[i];
                vn->grad[j] += s;
            }
        }
    });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b, double pre_scale) {
    if (x.ndim() != 1 || w.ndim() != 2 || b.ndim() != 1 || w.dim(0) != x.dim(0) ||
        w.dim(1) != b.dim(0))
        throw DimensionError("affine: shape mismatch");
    const int in = w.dim(0), out_d = w.dim(1);
    std::vector<double> out(static_cast<size_t>(out_d));
    for (int j = 0; j < out_d; ++j) {
        double s = 0;
        for (int i = 0; i < in; ++i) s += x.at(i) * w.at(i, j);
        out[static_cast<size_t>(j)] = pre_scale * s + b.at(j);
    }
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return make_op({out_d}, std::move(out), {x, w, b},
                   [xn, wn, bn, in, out_d, pre_scale](detail::Node& o) {
                       if (xn->requires_grad) {
                           xn->ensure_grad();
                           for (int i = 0; i < in; ++i) {
                               double s = 0;
                               for (int j = 0; j < out_d; ++j)
                                   s += wn->value[static_cast<size_t>(i) * out_d + j] * o.grad[j];
                               xn->grad[i] += pre_scale * s;
                           }
                       }
                       if (wn->requires_grad) {
                           wn->ensure_grad();
                           for (int i = 0; i < in; ++i)
                               for (int j = 0; j < out_d; ++j)
                                   wn->grad[static_cast<size_t>(i) * out_d + j] +=
                                       pre_scale * xn->value[i] * o.grad[j];
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (int j = 0; j < out_d; ++j) bn->grad[j] += o.grad[j];
                       }
                   });
}

// ---- reductions ----

Tensor reduce_sum(const Tensor& a) {
    double s = 0;
    for (double x : a.data()) s += x;
    auto an = a.node();
    return make_op({1}, {s}, {a}, [an](detail::Node& o) {
        an->ensure_grad();
        for (size_t i = 0; i < an->value.size(); ++i) an->grad[i] += o.grad[0];
    });
}

Tensor reduce_mean(const Tensor& a) {
    if (a.size() == 0) throw DimensionError("reduce_mean: empty tensor");
    const double inv = 1.0 / static_cast<double>(a.size());
    double s = 0;
    for (double x : a.data()) s += x;
    auto an = a.node();
    return make_op({1}, {s * inv}, {a}, [an, inv](detail::Node& o) {
        an->ensure_grad();
        for (size_t i = 0; i < an->value.size(); ++i) an->grad[i] += inv * o.grad[0];
    });
}

Tensor reduce_max(const Tensor& a) {
    if (a.size() == 0) throw DimensionError("reduce_max: empty tensor");
    size_t arg = 0;
    for (size_t i = 1; i < a.data().size(); ++i)
        if (a.data()[i] > a.data()[arg]) arg = i;
    auto an = a.node();
    return make_op({1}, {a.data()[arg]}, {a}, [an, arg](detail::Node& o) {
        an->ensure_grad();
        an->grad[arg] += o.grad[0];
    });
}

Tensor rowwise_max(const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("rowwise_max: expected 2-D");
    const int L = a.dim(0), C = a.dim(1);
    if (C == 0) throw DimensionError("rowwise_max: empty axis");
    std::vector<double> out(static_cast<size_t>(L));
    std::vector<int> args(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i) {
        int arg = 0;
        for (int j = 1; j < C; ++j)
            if (a.at(i, j) > a.at(i, arg)) arg = j;
        args[static_cast<size_t>(i)] = arg;
        out[static_cast<size_t>(i)] = a.at(i, arg);
    }
    auto an = a.node();
    return make_op({L}, std::move(out), {a}, [an, args, C](detail::Node& o) {
        an->ensure_grad();
        for (size_t i = 0; i < o.value.size(); ++i)
            an->grad[i * C + args[i]] += o.grad[i];
    });
}

Tensor softmax(const Tensor& a, int axis) {
    if (a.ndim() == 1) {
        if (axis != 0) throw DimensionError("softmax: bad axis for 1-D input");
        if (a.size() == 0) throw DimensionError("softmax: empty axis");
        Tensor r2 = softmax(reshape(a, {1, static_cast<int>(a.size())}), 1);
        return reshape(r2, {static_cast<int>(a.size())});
    }
    if (a.ndim() != 2 || axis != 1) throw DimensionError("softmax: expected 2-D with axis=1");
    const int L = a.dim(0), C = a.dim(1);
    if (C == 0) throw DimensionError("softmax: empty axis");
    std::vector<double> out(static_cast<size_t>(L) * C);
    for (int i = 0; i < L; ++i) {
        double mx = a.at(i, 0);
        for (int j = 1; j < C; ++j) mx = std::max(mx, a.at(i, j));
        double s = 0;
        for (int j = 0; j < C; ++j) {
            double e = std::exp(a.at(i, j) - mx);
            out[static_cast<size_t>(i) * C + j] = e;
            s += e;
        }
        for (int j = 0; j < C; ++j) out[static_cast<size_t>(i) * C + j] /= s;
    }
    auto an = a.node();
    return make_op({L, C}, std::move(out), {a}, [an, L, C](detail::Node& o) {
        an->ensure_grad();
        for (int i = 0; i < L; ++i) {
            const size_t off = static_cast<size_t>(i) * C;
            double dotgy = 0;
            for (int j = 0; j < C; ++j) dotgy += o.grad[off + j] * o.value[off + j];
            for (int j = 0; j < C; ++j)
                an->grad[off + j] += o.value[off + j] * (o.grad[off + j] - dotgy);
        }
    });
}

// ---- structured ----

Tensor dilated_conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int dilation) {
    if (x.ndim() != 2 || w.ndim() != 3 || b.ndim() != 1)
        throw DimensionError("dilated_conv1d: expected x[L,Din], w[K,Din,Dout], b[Dout]");
    const int L = x.dim(0), din = x.dim(1);
    const int K = w.dim(0), wdin = w.dim(1), dout = w.dim(2);
    if (wdin != din || b.dim(0) != dout) throw DimensionError("dilated_conv1d: channel mismatch");
    if (K % 2 == 0) throw ConfigError("dilated_conv1d: kernel width must be odd");
    if (dilation < 1) throw ConfigError("dilated_conv1d: dilation must be >= 1");
    const int ctr = K / 2;
    std::vector<double> out(static_cast<size_t>(L) * dout);
    const auto& xv = x.data();
    const auto& wv = w.data();
    for (int t = 0; t < L; ++t) {
        const size_t oo = static_cast<size_t>(t) * dout;
        for (int o = 0; o < dout; ++o) out[oo + o] = b.at(o);
        for (int k = 0; k < K; ++k) {
            const int ts = t + (k - ctr) * dilation;
            if (ts < 0 || ts >= L) continue;
            const size_t xo = static_cast<size_t>(ts) * din;
            const size_t wo = static_cast<size_t>(k) * din * dout;
            for (int i = 0; i < din; ++i) {
                const double xi = xv[xo + i];
                if (xi == 0.0) continue;
                const size_t wio = wo + static_cast<size_t>(i) * dout;
                for (int o = 0; o < dout; ++o) out[oo + o] += xi * wv[wio + o];
            }
        }
    }
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return make_op({L, dout}, std::move(out), {x, w, b},
                   [xn, wn, bn, L, din, K, dout, dilation, ctr](detail::Node& no) {
                       const bool gx = xn->requires_grad, gw = wn->requires_grad,
                                  gb = bn->requires_grad;
                       if (gx) xn->ensure_grad();
                       if (gw) wn->ensure_grad();
                       if (gb) bn->ensure_grad();
                       for (int t = 0; t < L; ++t) {
                           const size_t oo = static_cast<size_t>(t) * dout;
                           if (gb)
                               for (int o = 0; o < dout; ++o) bn->grad[o] += no.grad[oo + o];
                           for (int k = 0; k < K; ++k) {
                               const int ts = t + (k - ctr) * dilation;
                               if (ts < 0 || ts >= L) continue;
                               const size_t xo = static_cast<size_t>(ts) * din;
                               const size_t wo = static_cast<size_t>(k) * din * dout;
                               for (int i = 0; i < din; ++i) {
                                   const size_t wio = wo + static_cast<size_t>(i) * dout;
                                   if (gx) {
                                       double s = 0;
                                       for (int o = 0; o < dout; ++o)
                                           s += wn->value[wio + o] * no.grad[oo + o];
                                       xn->grad[xo + i] += s;
                                   }
                                   if (gw) {
                                       const double xi = xn->value[xo + i];
                                       if (xi != 0.0)
                                           for (int o = 0; o < dout; ++o)
                                               wn->grad[wio + o] += xi * no.grad[oo + o];
                                   }
                               }
                           }
                       }
                   });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
    if (rate == 0.0) return x;
    const double keep = 1.0 - rate;
    const size_t n = static_cast<size_t>(x.size());
    std::vector<double> mask(n);
    for (auto& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = x.data()[i] * mask[i];
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x}, [xn, mask](detail::Node& o) {
        xn->ensure_grad();
        for (size_t i = 0; i < o.value.size(); ++i) xn->grad[i] += mask[i] * o.grad[i];
    });
}

// ---- backward ----

void backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar())
        throw ContractError("backward: loss must be a scalar tensor");
    if (!loss.requires_grad()) return;

    // Collect the reachable subgraph, then replay by decreasing creation seq.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (detail::Node* n : order) {
        if (!n->backprop) continue;
        n->ensure_grad();
        n->backprop(*n);
    }
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double tol,
                           double h) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor y = f(x);
    if (!y.is_scalar()) throw ContractError("grad_check: f must return a scalar");
    backward(y);
    std::vector<double> analytic = x.grad();

    GradCheckReport rep;
    rep.pass = true;
    NoGradGuard guard;
    for (int i = 0; i < x.size(); ++i) {
        const double orig = x.data()[static_cast<size_t>(i)];
        x.data()[static_cast<size_t>(i)] = orig + h;
        const double yp = f(x).item();
        x.data()[static_cast<size_t>(i)] = orig - h;
        const double ym = f(x).item();
        x.data()[static_cast<size_t>(i)] = orig;
        const double numeric = (yp - ym) / (2.0 * h);
        const double a = analytic[static_cast<size_t>(i)];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1.0});
        const double rel = std::fabs(a - numeric) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = i;
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace segdiff::nk
