#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "pfr/rng.hpp"
#include "pfr/tensor.hpp"

namespace pfr {

/// Callback over named learnable tensors; mutation replaces the stored value.
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

enum class Activation { Silu, Gelu, Relu };

inline Tensor apply_activation(const Tensor& x, Activation act) {
    switch (act) {
        case Activation::Gelu: return gelu(x);
        case Activation::Relu: return relu(x);
        case Activation::Silu: break;
    }
    return silu(x);
}

/// Pointwise affine map over the trailing axis: x[...,in] -> [...,out].
struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out], unused when has_bias is false
    bool has_bias = true;

    static Linear init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::vector<double> w(in * out);
        for (double& v : w) v = rng.uniform(-bound, bound);
        Linear lin;
        lin.weight = Tensor::from({in, out}, std::move(w));
        lin.has_bias = with_bias;
        if (with_bias) {
            std::vector<double> b(out);
            for (double& v : b) v = rng.uniform(-bound, bound);
            lin.bias = Tensor::from({out}, std::move(b));
        }
        return lin;
    }

    Tensor forward(const Tensor& x) const {
        Tensor y = matmul(x, weight);
        return has_bias ? add(y, bias) : y;
    }

    void visit(const std::string& prefix, const ParamVisitor& v) {
        v(prefix + ".weight", weight);
        if (has_bias) v(prefix + ".bias", bias);
    }
};

}  // namespace pfr
