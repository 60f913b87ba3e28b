#pragma once

#include "segdiff/tensor.hpp"

namespace segdiff::fourier {

// Frequency features store (Re, Im) concatenated per channel: for an input of
// width D the output is L x 2D with columns [Re_0..Re_{D-1}, Im_0..Im_{D-1}].

// Unnormalized forward DFT along the temporal axis, per channel:
// X_k = sum_t x_t * e^{-2*pi*i*k*t/L}. Differentiable (linear; gradient is
// the adjoint transform).
nk::Tensor dft_time(const nk::Tensor& x);

// Inverse with 1/L normalization; returns the real part, so idft(dft(x)) == x
// for real x.
nk::Tensor idft_time(const nk::Tensor& f);

// Conditioning bundle fed to the denoising decoders.
struct ConditionBundle {
    nk::Tensor temporal;   // L x d   (recurrent-layer output)
    nk::Tensor frequency;  // L x 2d  (its temporal spectrum); undefined when ablated
    nk::Tensor raw;        // L x d   (encoder output)
};

ConditionBundle make_conditions(const nk::Tensor& z, const nk::Tensor& z_hat);

}  // namespace segdiff::fourier
