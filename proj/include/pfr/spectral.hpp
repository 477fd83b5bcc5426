#pragma once

#include "pfr/tensor.hpp"

namespace pfr {

// Discrete Fourier transforms and frequency-domain mixing. 1D transforms act
// along axis -2 with a trailing channel axis: shapes are [..., M, d]. 2D
// transforms act on [..., H, W, d]. All ops are differentiable; gradients use
// the adjoint (conjugate-transpose) of the linear map.

/// Full forward DFT: coeffs[k,c] = sum_x in[x,c] e^(-2*pi*i*k*x/M).
/// Real or complex input, complex output, same shape. Radix-2 FFT fast path
/// when M is a power of two; dft1d_reference is the always-naive O(M^2) path.
Tensor dft1d(const Tensor& x);
Tensor dft1d_reference(const Tensor& x);

/// Inverse DFT with 1/M normalization. Accepts K <= M retained coefficients
/// [..., K, d]; the missing modes are treated as zero. Complex output [..., M, d].
Tensor idft1d(const Tensor& s, std::size_t M);

/// Zero all modes k >= m, keep shape. Requires 1 <= m <= M.
Tensor truncate_modes(const Tensor& s, std::size_t m);

/// Per-mode channel mixing: out[..,k,c'] = sum_c s[..,k,c] w[k,c,c'] for k < m
/// (m = w.shape[0]); modes k >= m are zeroed. w is complex [m,d,d].
Tensor frequency_mix(const Tensor& s, const Tensor& w);

/// First m DFT coefficients of a real signal: [..., M, d] -> [..., m, d].
Tensor dft1d_modes(const Tensor& x, std::size_t m);

/// Inverse of a truncated spectrum of a real signal: reconstructs the
/// conjugate half and returns the real [..., M, d] signal. Requires
/// m <= floor(M/2)+1 so retained modes have no distinct partner in range.
Tensor idft1d_real_from_modes(const Tensor& s, std::size_t M);

// ---- 2D analogues ----------------------------------------------------------

Tensor dft2d(const Tensor& x);
Tensor idft2d(const Tensor& s);  // full [..., H, W, d] spectrum, 1/(HW) normalization

/// Keep the (kh < mh, kw < mw) corner, zero the rest.
Tensor truncate_modes2d(const Tensor& s, std::size_t mh, std::size_t mw);

/// Corner-block mixing with w complex [mh,mw,d,d]; modes outside are zeroed.
Tensor frequency_mix2d(const Tensor& s, const Tensor& w);

/// Corner block of the 2D DFT of a real field: -> [..., mh, mw, d].
Tensor dft2d_modes(const Tensor& x, std::size_t mh, std::size_t mw);

/// Real inverse from a corner block with conjugate completion:
/// -> [..., H, W, d]. Requires mh <= floor(H/2)+1 and mw <= floor(W/2)+1.
Tensor idft2d_real_from_modes(const Tensor& s, std::size_t H, std::size_t W);

}  // namespace pfr
