#include "segdiff/fourier.hpp"

#include <cmath>
#include <complex>
#include <vector>

namespace segdiff::fourier {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT; sign = -1 forward, +1 inverse (no scaling).
void fft_radix2(std::vector<std::complex<double>>& a, int sign) {
    const int n = static_cast<int>(a.size());
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[static_cast<size_t>(i)], a[static_cast<size_t>(j)]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = sign * kTwoPi / len;
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int j = 0; j < len / 2; ++j) {
                auto u = a[static_cast<size_t>(i + j)];
                auto v = a[static_cast<size_t>(i + j + len / 2)] * w;
                a[static_cast<size_t>(i + j)] = u + v;
                a[static_cast<size_t>(i + j + len / 2)] = u + (-v);
                w *= wl;
            }
        }
    }
}

// Per-channel transform of an L x D matrix (re/im pair per entry), sign as
// above. Uses radix-2 when L is a power of two, direct summation otherwise;
// the two paths agree to well below 1e-9 and the direct path is the reference.
void transform(const std::vector<double>& re_in, const std::vector<double>& im_in, int L, int D,
               int sign, std::vector<double>& re_out, std::vector<double>& im_out) {
    re_out.assign(static_cast<size_t>(L) * D, 0.0);
    im_out.assign(static_cast<size_t>(L) * D, 0.0);
    if (is_pow2(L) && L >= 4) {
        std::vector<std::complex<double>> buf(static_cast<size_t>(L));
        for (int d = 0; d < D; ++d) {
            for (int t = 0; t < L; ++t)
                buf[static_cast<size_t>(t)] = {re_in[static_cast<size_t>(t) * D + d],
                                               im_in.empty() ? 0.0
                                                             : im_in[static_cast<size_t>(t) * D + d]};
            fft_radix2(buf, sign);
            for (int k = 0; k < L; ++k) {
                re_out[static_cast<size_t>(k) * D + d] = buf[static_cast<size_t>(k)].real();
                im_out[static_cast<size_t>(k) * D + d] = buf[static_cast<size_t>(k)].imag();
            }
        }
        return;
    }
    for (int k = 0; k < L; ++k) {
        for (int t = 0; t < L; ++t) {
            const double ang = sign * kTwoPi * static_cast<double>(k) * static_cast<double>(t) /
                               static_cast<double>(L);
            const double c = std::cos(ang), s = std::sin(ang);
            const size_t ko = static_cast<size_t>(k) * D, to = static_cast<size_t>(t) * D;
            for (int d = 0; d < D; ++d) {
                const double xr = re_in[to + d];
                const double xi = im_in.empty() ? 0.0 : im_in[to + d];
                re_out[ko + d] += xr * c - xi * s;
                im_out[ko + d] += xr * s + xi * c;
            }
        }
    }
}

}  // namespace

nk::Tensor dft_time(const nk::Tensor& x) {
    if (x.ndim() != 2) throw DimensionError("dft_time: expected L x D input");
    const int L = x.dim(0), D = x.dim(1);
    if (L < 1) throw ContractError("dft_time: L must be >= 1");
    std::vector<double> re, im;
    transform(x.data(), {}, L, D, -1, re, im);
    std::vector<double> out(static_cast<size_t>(L) * 2 * D);
    for (int k = 0; k < L; ++k)
        for (int d = 0; d < D; ++d) {
            out[static_cast<size_t>(k) * 2 * D + d] = re[static_cast<size_t>(k) * D + d];
            out[static_cast<size_t>(k) * 2 * D + D + d] = im[static_cast<size_t>(k) * D + d];
        }
    auto xn = x.node();
    return nk::make_op({L, 2 * D}, std::move(out), {x}, [xn, L, D](nk::detail::Node& o) {
        // Adjoint: g_x(t) = Re( sum_k G_k e^{+2*pi*i*k*t/L} ), G = gRe + i*gIm.
        std::vector<double> gre(static_cast<size_t>(L) * D), gim(static_cast<size_t>(L) * D);
        for (int k = 0; k < L; ++k)
            for (int d = 0; d < D; ++d) {
                gre[static_cast<size_t>(k) * D + d] = o.grad[static_cast<size_t>(k) * 2 * D + d];
                gim[static_cast<size_t>(k) * D + d] =
                    o.grad[static_cast<size_t>(k) * 2 * D + D + d];
            }
        std::vector<double> re2, im2;
        transform(gre, gim, L, D, +1, re2, im2);
        xn->ensure_grad();
        for (size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] += re2[i];
    });
}

nk::Tensor idft_time(const nk::Tensor& f) {
    if (f.ndim() != 2 || f.dim(1) % 2 != 0)
        throw DimensionError("idft_time: expected L x 2D input");
    const int L = f.dim(0), D = f.dim(1) / 2;
    std::vector<double> re(static_cast<size_t>(L) * D), im(static_cast<size_t>(L) * D);
    for (int k = 0; k < L; ++k)
        for (int d = 0; d < D; ++d) {
            re[static_cast<size_t>(k) * D + d] = f.at(k, d);
            im[static_cast<size_t>(k) * D + d] = f.at(k, D + d);
        }
    std::vector<double> re2, im2;
    transform(re, im, L, D, +1, re2, im2);
    const double inv = 1.0 / static_cast<double>(L);
    std::vector<double> out(static_cast<size_t>(L) * D);
    for (size_t i = 0; i < out.size(); ++i) out[i] = re2[i] * inv;
    auto fn = f.node();
    return nk::make_op({L, D}, std::move(out), {f}, [fn, L, D, inv](nk::detail::Node& o) {
        // Adjoint of (1/L) Re(inverse transform) is (1/L) times the forward
        // transform of the incoming gradient.
        std::vector<double> gre2, gim2;
        transform(o.grad, {}, L, D, -1, gre2, gim2);
        fn->ensure_grad();
        for (int k = 0; k < L; ++k)
            for (int d = 0; d < D; ++d) {
                fn->grad[static_cast<size_t>(k) * 2 * D + d] +=
                    inv * gre2[static_cast<size_t>(k) * D + d];
                fn->grad[static_cast<size_t>(k) * 2 * D + D + d] +=
                    inv * gim2[static_cast<size_t>(k) * D + d];
            }
    });
}

ConditionBundle make_conditions(const nk::Tensor& z, const nk::Tensor& z_hat) {
    if (z.ndim() != 2 || z_hat.ndim() != 2 || z.dim(0) != z_hat.dim(0))
        throw ContractError("make_conditions: length mismatch between encoder and recurrent outputs");
    ConditionBundle b;
    b.temporal = z_hat;
    b.frequency = dft_time(z_hat);
    b.raw = z;
    return b;
}

}  // namespace segdiff::fourier
