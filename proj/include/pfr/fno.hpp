#pragma once

#include <vector>

#include "pfr/nn.hpp"
#include "pfr/rng.hpp"
#include "pfr/tensor.hpp"

namespace pfr {

// Fourier-operator layers: learned mixing of low-frequency modes plus a local
// linear path. The 1D stack is the per-time-step spatial branch; the 2D stack
// refines reconstructed fields.

/// Complex per-mode mixing weights stored as separate real parts so the
/// optimizer only ever sees real tensors.
struct SpectralWeights {
    Tensor re;  // [modes..., d, d]
    Tensor im;

    Tensor packed() const { return make_complex(re, im); }
};

struct FnoLayerWeights {
    SpectralWeights modes;  // [m,d,d]
    Linear local;           // [d,d] pointwise path
};

/// v [*, M, d] -> sigma(local(v) + idft(mix(dft_modes(v)))).
Tensor fourier_layer(const Tensor& v, const FnoLayerWeights& w, std::size_t m,
                     Activation act);

/// 1D Fourier-operator stack applied independently per time step.
class FnoStack {
public:
    FnoStack() = default;
    FnoStack(std::size_t signal_len, std::size_t lift_dim, std::size_t modes,
             std::size_t layers, Activation act, bool with_bias, Rng& rng);

    /// Lift one-channel signals [*, M, 1] to [*, M, d].
    Tensor lift(const Tensor& x) const { return proj_in_.forward(x); }

    /// x_emb [B,L,M] -> spatial feature [B,L,M]: per time step, treat the
    /// M-dim feature as a single-channel signal, lift, run the layers,
    /// project back to one channel.
    Tensor forward(const Tensor& x_emb) const;

    void visit_params(const std::string& prefix, const ParamVisitor& v);

    std::size_t modes() const { return modes_; }

private:
    std::size_t signal_len_ = 0;
    std::size_t modes_ = 0;
    Activation act_ = Activation::Silu;
    Linear proj_in_;   // 1 -> d
    Linear proj_out_;  // d -> 1
    std::vector<FnoLayerWeights> layers_;
};

/// 2D Fourier-operator refiner with an external residual connection:
/// refine(u) = u + project(layers(lift(u))).
class Fno2dRefiner {
public:
    Fno2dRefiner() = default;
    Fno2dRefiner(std::size_t height, std::size_t width, std::size_t channels,
                 std::size_t lift_dim, std::size_t modes_h, std::size_t modes_w,
                 std::size_t layers, Activation act, bool with_bias, Rng& rng);

    /// u [B,L,H,W,C] (or [*,H,W,C]) -> refined field of the same shape.
    Tensor refine(const Tensor& u) const;

    void visit_params(const std::string& prefix, const ParamVisitor& v);

private:
    std::size_t height_ = 0, width_ = 0, modes_h_ = 0, modes_w_ = 0;
    Activation act_ = Activation::Silu;
    Linear proj_in_;   // C -> d
    Linear proj_out_;  // d -> C
    struct Layer {
        SpectralWeights modes;  // [mh,mw,d,d]
        Linear local;
    };
    std::vector<Layer> layers_;
};

}  // namespace pfr
