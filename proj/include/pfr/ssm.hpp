#pragma once

#include "pfr/nn.hpp"
#include "pfr/rng.hpp"
#include "pfr/tensor.hpp"

namespace pfr {

// Selective state-space temporal branch: input-dependent parameter generation,
// zero-order-hold discretization, and the sequential scan over the time axis.

struct SelectiveInputs {
    Tensor x_emb1;  // [B,L,M] conv + silu path, drives the state updates
    Tensor x_emb2;  // [B,L,M] gate used later in block fusion
};

struct SsmParams {
    Tensor b_t;    // [B,L,N] input map per step
    Tensor c_t;    // [B,L,N] observation map per step
    Tensor delta;  // [B,L,M] positive step sizes
};

struct DiscreteSsm {
    Tensor a_bar;  // [B,L,M,N], entries in (0,1) when A<0 and delta>0
    Tensor b_bar;  // [B,L,M,N]
};

/// phi(delta, a) = (exp(delta*a) - 1) / a with an outer-product pairing of
/// delta[B,L,M] and a[M,N] -> [B,L,M,N]. Series fallback for |a| < 1e-8.
/// Differentiable in both arguments.
Tensor zoh_input_factor(const Tensor& delta, const Tensor& a);

/// Zero-order-hold discretization of the per-(channel,state) scalar system:
/// a_bar = exp(delta*a), b_bar = phi(delta,a) * b_t. a is [M,N] with a<0.
DiscreteSsm discretize_zoh(const Tensor& a, const Tensor& delta, const Tensor& b_t);

/// Sequential scan from h=0:
///   h[b,m,:] <- a_bar[b,l,m,:] * h[b,m,:] + b_bar[b,l,m,:] * x[b,l,m]
///   y[b,l,m] = sum_n c_t[b,l,n] h[b,m,n]
Tensor selective_scan(const DiscreteSsm& d, const Tensor& c_t, const Tensor& x);

/// Global-convolution form of the scan, valid only when a_bar, b_bar, c_t are
/// constant along the time axis (checked exactly; UsageError otherwise).
/// Builds the kernel K[l,m] = sum_n c[n] a_bar[m,n]^l b_bar[m,n] and returns
/// the causal convolution with x. Not recorded on any tape.
Tensor scan_as_convolution(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c_t,
                           const Tensor& x);

/// The full temporal feature branch of one block.
class TemporalBranch {
public:
    TemporalBranch() = default;
    TemporalBranch(std::size_t feature_dim, std::size_t state_dim, std::size_t conv_width,
                   Rng& rng);

    SelectiveInputs selective_embed(const Tensor& e_prev) const;
    SsmParams make_params(const SelectiveInputs& sel) const;

    /// State transition matrix A = -exp(a_log), shared across steps.
    Tensor transition() const;

    /// e_prev [B,L,M] -> temporal feature e_t [B,L,M]. When sel_out is given,
    /// the embeddings are exposed for the block's fusion gate.
    Tensor forward(const Tensor& e_prev, SelectiveInputs* sel_out = nullptr) const;

    void visit_params(const std::string& prefix, const ParamVisitor& v);

private:
    Linear emb1_proj_;
    Linear emb2_proj_;
    Linear b_proj_;
    Linear c_proj_;
    Linear dt_proj_;     // no additive bias of its own
    Linear out_proj_;
    Tensor conv_kernel_;  // [M, k] depthwise causal
    Tensor dt_bias_;      // [M] bias inside the softplus
    Tensor a_log_;        // [M, N]; A = -exp(a_log) stays negative
};

}  // namespace pfr
