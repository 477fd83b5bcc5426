#include "pfr/fno.hpp"

#include <cmath>

#include "pfr/spectral.hpp"

namespace pfr {

namespace {

SpectralWeights init_spectral(Shape shape, std::size_t lift_dim, Rng& rng) {
    const double scl = 1.0 / static_cast<double>(lift_dim);
    std::vector<double> re(shape_numel(shape)), im(re.size());
    for (double& v : re) v = rng.uniform(-scl, scl);
    for (double& v : im) v = rng.uniform(-scl, scl);
    SpectralWeights w;
    w.re = Tensor::from(shape, std::move(re));
    w.im = Tensor::from(shape, std::move(im));
    return w;
}

}  // namespace

Tensor fourier_layer(const Tensor& v, const FnoLayerWeights& w, std::size_t m, Activation act) {
    const std::size_t M = v.shape()[v.rank() - 2];
    const Tensor spectrum = frequency_mix(dft1d_modes(v, m), w.modes.packed());
    const Tensor spatial = idft1d_real_from_modes(spectrum, M);
    return apply_activation(add(w.local.forward(v), spatial), act);
}

FnoStack::FnoStack(std::size_t signal_len, std::size_t lift_dim, std::size_t modes,
                   std::size_t layers, Activation act, bool with_bias, Rng& rng)
    : signal_len_(signal_len), modes_(modes), act_(act) {
    if (modes < 1 || modes > signal_len / 2 + 1) {
        throw ConfigError("1D mode count " + std::to_string(modes) +
                          " outside [1, floor(M/2)+1] for signal length " +
                          std::to_string(signal_len));
    }
    Rng r_in = rng.split(1000);
    Rng r_out = rng.split(1001);
    proj_in_ = Linear::init(1, lift_dim, r_in, with_bias);
    proj_out_ = Linear::init(lift_dim, 1, r_out, with_bias);
    layers_.resize(layers);
    for (std::size_t i = 0; i < layers; ++i) {
        Rng rl = rng.split(i);
        Rng rw = rl.split(0);
        Rng rloc = rl.split(1);
        layers_[i].modes = init_spectral({modes, lift_dim, lift_dim}, lift_dim, rw);
        layers_[i].local = Linear::init(lift_dim, lift_dim, rloc, with_bias);
    }
}

Tensor FnoStack::forward(const Tensor& x_emb) const {
    if (x_emb.rank() != 3) {
        throw ShapeError("FnoStack expects [B,L,M], got " + shape_str(x_emb.shape()));
    }
    const std::size_t B = x_emb.shape()[0], L = x_emb.shape()[1], M = x_emb.shape()[2];
    if (M != signal_len_) {
        throw ShapeError("FnoStack built for signal length " + std::to_string(signal_len_) +
                         ", got " + std::to_string(M));
    }
    Tensor v = proj_in_.forward(reshape(x_emb, {B * L, M, 1}));
    for (const FnoLayerWeights& w : layers_) v = fourier_layer(v, w, modes_, act_);
    return reshape(proj_out_.forward(v), {B, L, M});
}

void FnoStack::visit_params(const std::string& prefix, const ParamVisitor& v) {
    proj_in_.visit(prefix + ".lift", v);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string lp = prefix + ".layer" + std::to_string(i);
        v(lp + ".modes_re", layers_[i].modes.re);
        v(lp + ".modes_im", layers_[i].modes.im);
        layers_[i].local.visit(lp + ".local", v);
    }
    proj_out_.visit(prefix + ".proj", v);
}

// ---- 2D refiner --------------------------------------------------------------

Fno2dRefiner::Fno2dRefiner(std::size_t height, std::size_t width, std::size_t channels,
                           std::size_t lift_dim, std::size_t modes_h, std::size_t modes_w,
                           std::size_t layers, Activation act, bool with_bias, Rng& rng)
    : height_(height), width_(width), modes_h_(modes_h), modes_w_(modes_w), act_(act) {
    if (modes_h < 1 || modes_h > height / 2 + 1 || modes_w < 1 || modes_w > width / 2 + 1) {
        throw ConfigError("2D mode counts (" + std::to_string(modes_h) + "," +
                          std::to_string(modes_w) + ") outside the conjugate-completion bound for " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    Rng r_in = rng.split(1000);
    Rng r_out = rng.split(1001);
    proj_in_ = Linear::init(channels, lift_dim, r_in, with_bias);
    proj_out_ = Linear::init(lift_dim, channels, r_out, with_bias);
    layers_.resize(layers);
    for (std::size_t i = 0; i < layers; ++i) {
        Rng rl = rng.split(i);
        Rng rw = rl.split(0);
        Rng rloc = rl.split(1);
        layers_[i].modes = init_spectral({modes_h, modes_w, lift_dim, lift_dim}, lift_dim, rw);
        layers_[i].local = Linear::init(lift_dim, lift_dim, rloc, with_bias);
    }
}

Tensor Fno2dRefiner::refine(const Tensor& u) const {
    if (u.rank() < 3) {
        throw ShapeError("Fno2dRefiner expects [..., H, W, C], got " + shape_str(u.shape()));
    }
    const std::size_t H = u.shape()[u.rank() - 3];
    const std::size_t W = u.shape()[u.rank() - 2];
    if (H != height_ || W != width_) {
        throw ShapeError("Fno2dRefiner built for " + std::to_string(height_) + "x" +
                         std::to_string(width_) + ", got " + shape_str(u.shape()));
    }
    Tensor v = proj_in_.forward(u);
    for (const Layer& w : layers_) {
        const Tensor spectrum = frequency_mix2d(dft2d_modes(v, modes_h_, modes_w_), w.modes.packed());
        const Tensor spatial = idft2d_real_from_modes(spectrum, H, W);
        v = apply_activation(add(w.local.forward(v), spatial), act_);
    }
    return add(u, proj_out_.forward(v));
}

void Fno2dRefiner::visit_params(const std::string& prefix, const ParamVisitor& v) {
    proj_in_.visit(prefix + ".lift", v);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string lp = prefix + ".layer" + std::to_string(i);
        v(lp + ".modes_re", layers_[i].modes.re);
        v(lp + ".modes_im", layers_[i].modes.im);
        layers_[i].local.visit(lp + ".local", v);
    }
    proj_out_.visit(prefix + ".proj", v);
}

}  // namespace pfr
