#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "segdiff/fourier.hpp"
#include "segdiff/tensor.hpp"

using namespace segdiff;
using nk::Tensor;

namespace {

constexpr double kPi = 3.14159265358979323846;

// O(L^2) direct-summation oracle, complex arithmetic
std::vector<std::complex<double>> dft_oracle(const std::vector<double>& x, int L) {
    std::vector<std::complex<double>> out(static_cast<size_t>(L));
    for (int k = 0; k < L; ++k) {
        std::complex<double> acc(0, 0);
        for (int t = 0; t < L; ++t)
            acc += x[static_cast<size_t>(t)] *
                   std::exp(std::complex<double>(0, -2.0 * kPi * k * t / L));
        out[static_cast<size_t>(k)] = acc;
    }
    return out;
}

}  // namespace

TEST_CASE("constant sequence has DC-only spectrum") {
    const int L = 8;
    Tensor x = Tensor::full({L, 1}, 3.0);
    Tensor f = fourier::dft_time(x);
    CHECK(f.at(0, 0) == doctest::Approx(L * 3.0).epsilon(1e-12));
    for (int k = 1; k < L; ++k) {
        CHECK(std::fabs(f.at(k, 0)) <= 1e-10);
        CHECK(std::fabs(f.at(k, 1)) <= 1e-10);
    }
}

TEST_CASE("single tone lands in bins 1 and L-1") {
    const int L = 8;
    Tensor x = Tensor::zeros({L, 1});
    for (int t = 0; t < L; ++t) x.at(t, 0) = std::cos(2.0 * kPi * t / L);
    Tensor f = fourier::dft_time(x);
    CHECK(f.at(1, 0) == doctest::Approx(L / 2.0).epsilon(1e-10));
    CHECK(f.at(L - 1, 0) == doctest::Approx(L / 2.0).epsilon(1e-10));
    for (int k = 0; k < L; ++k) {
        if (k == 1 || k == L - 1) continue;
        CHECK(std::fabs(f.at(k, 0)) <= 1e-10);
    }
}

TEST_CASE("agrees with direct-summation oracle at several lengths") {
    for (int L : {1, 2, 7, 16, 128}) {
        Rng rng(static_cast<uint64_t>(L));
        const int D = 3;
        Tensor x = Tensor::randn({L, D}, rng);
        Tensor f = fourier::dft_time(x);
        for (int d = 0; d < D; ++d) {
            std::vector<double> ch(static_cast<size_t>(L));
            for (int t = 0; t < L; ++t) ch[static_cast<size_t>(t)] = x.at(t, d);
            auto want = dft_oracle(ch, L);
            for (int k = 0; k < L; ++k) {
                CHECK(std::fabs(f.at(k, d) - want[size_t(k)].real()) <= 1e-9);
                CHECK(std::fabs(f.at(k, D + d) - want[size_t(k)].imag()) <= 1e-9);
            }
        }
    }
}

TEST_CASE("idft inverts dft") {
    for (int L : {1, 2, 7, 16, 128}) {
        Rng rng(static_cast<uint64_t>(L) + 99);
        Tensor x = Tensor::randn({L, 2}, rng);
        Tensor back = fourier::idft_time(fourier::dft_time(x));
        for (int i = 0; i < L * 2; ++i) CHECK(std::fabs(back.at(i) - x.at(i)) <= 1e-9);
    }
}

TEST_CASE("zero and DC-only spectra invert trivially") {
    Tensor zero_spec = Tensor::zeros({4, 2});
    Tensor seq = fourier::idft_time(zero_spec);
    for (int i = 0; i < 4; ++i) CHECK(seq.at(i) == 0.0);

    const int L = 5;
    Tensor dc = Tensor::zeros({L, 2});
    dc.at(0, 0) = L * 2.5;
    Tensor c = fourier::idft_time(dc);
    for (int t = 0; t < L; ++t) CHECK(c.at(t) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("linearity") {
    const int L = 16, D = 2;
    Rng rng(4);
    Tensor x = Tensor::randn({L, D}, rng);
    Tensor y = Tensor::randn({L, D}, rng);
    const double a = 1.7, b = -0.3;
    Tensor lhs = fourier::dft_time(nk::add(nk::mul_scalar(x, a), nk::mul_scalar(y, b)));
    Tensor rhs = nk::add(nk::mul_scalar(fourier::dft_time(x), a),
                         nk::mul_scalar(fourier::dft_time(y), b));
    for (int i = 0; i < L * 2 * D; ++i) CHECK(std::fabs(lhs.at(i) - rhs.at(i)) <= 1e-10);
}

TEST_CASE("conjugate symmetry for real input") {
    const int L = 16;
    Rng rng(8);
    Tensor x = Tensor::randn({L, 1}, rng);
    Tensor f = fourier::dft_time(x);
    for (int k = 1; k < L; ++k) {
        CHECK(std::fabs(f.at(k, 0) - f.at(L - k, 0)) <= 1e-10);
        CHECK(std::fabs(f.at(k, 1) + f.at(L - k, 1)) <= 1e-10);
    }
}

TEST_CASE("Parseval identity") {
    for (int L : {1, 2, 7, 16, 128}) {
        Rng rng(static_cast<uint64_t>(L) * 13 + 1);
        const int D = 2;
        Tensor x = Tensor::randn({L, D}, rng);
        Tensor f = fourier::dft_time(x);
        double time_energy = 0, freq_energy = 0;
        for (int i = 0; i < L * D; ++i) time_energy += x.at(i) * x.at(i);
        for (int i = 0; i < L * 2 * D; ++i) freq_energy += f.at(i) * f.at(i);
        CHECK(std::fabs(time_energy - freq_energy / L) <= 1e-9);
    }
}

TEST_CASE("gradient flows through dft_time") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed + 50);
        const int L = 8, D = 2;
        Tensor x = Tensor::randn({L, D}, rng, 1.0, true);
        Tensor wgt = Tensor::randn({L, 2 * D}, rng);
        auto f = [&](const Tensor& t) {
            return nk::reduce_sum(nk::mul(fourier::dft_time(t), wgt));
        };
        auto rep = nk::grad_check(f, x, 1e-6);
        CHECK_MESSAGE(rep.pass, "seed ", seed, " max rel err ", rep.max_rel_err);
    }
}

TEST_CASE("fft fast path agrees with non-power-of-two direct path") {
    // L=64 takes the radix-2 branch; compare against the oracle again
    const int L = 64;
    Rng rng(77);
    Tensor x = Tensor::randn({L, 1}, rng);
    Tensor f = fourier::dft_time(x);
    std::vector<double> ch(static_cast<size_t>(L));
    for (int t = 0; t < L; ++t) ch[static_cast<size_t>(t)] = x.at(t, 0);
    auto want = dft_oracle(ch, L);
    for (int k = 0; k < L; ++k) {
        CHECK(std::fabs(f.at(k, 0) - want[size_t(k)].real()) <= 1e-9);
        CHECK(std::fabs(f.at(k, 1) - want[size_t(k)].imag()) <= 1e-9);
    }
}

TEST_CASE("condition bundle shapes and contents") {
    const int L = 8, d = 3;
    Rng rng(21);
    Tensor z = Tensor::randn({L, d}, rng);
    Tensor zh = Tensor::randn({L, d}, rng);
    auto bundle = fourier::make_conditions(z, zh);
    CHECK(bundle.temporal.dim(1) == d);
    CHECK(bundle.frequency.dim(1) == 2 * d);
    CHECK(bundle.raw.dim(1) == d);
    for (int i = 0; i < L * d; ++i) CHECK(bundle.temporal.at(i) == zh.at(i));
    for (int i = 0; i < L * d; ++i) CHECK(bundle.raw.at(i) == z.at(i));

    auto zero_bundle = fourier::make_conditions(z, Tensor::zeros({L, d}));
    for (int i = 0; i < L * 2 * d; ++i) CHECK(zero_bundle.frequency.at(i) == 0.0);

    CHECK_THROWS_AS(fourier::make_conditions(z, Tensor::zeros({L + 1, d})), ContractError);
}
