#include <cmath>
#include <vector>

#include "doctest.h"
#include "pfr/fno.hpp"
#include "pfr/spectral.hpp"
#include "test_support.hpp"

using namespace pfr;
using namespace testing_support;

namespace {

FnoLayerWeights zero_layer(std::size_t m, std::size_t d) {
    FnoLayerWeights w;
    w.modes.re = Tensor::zeros({m, d, d});
    w.modes.im = Tensor::zeros({m, d, d});
    w.local.weight = Tensor::zeros({d, d});
    w.local.bias = Tensor::zeros({d});
    w.local.has_bias = true;
    return w;
}

Tensor identity_matrix(std::size_t d) {
    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    return Tensor::from({d, d}, std::move(eye));
}

void zero_all_params(const std::function<void(const ParamVisitor&)>& visit) {
    visit([](const std::string&, Tensor& t) { t = Tensor::zeros(t.shape()); });
}

}  // namespace

TEST_CASE("lift: ones column on a ones signal, and zero input") {
    Rng rng(1);
    FnoStack stack(6, 4, 3, 1, Activation::Silu, true, rng);
    stack.visit_params("f", [](const std::string& name, Tensor& t) {
        if (name == "f.lift.weight") t = Tensor::full(t.shape(), 1.0);
        if (name == "f.lift.bias") t = Tensor::zeros(t.shape());
    });
    const Tensor v0 = stack.lift(Tensor::full({2, 6, 1}, 1.0));
    CHECK(v0.shape() == Shape{2, 6, 4});
    for (double v : v0.data()) CHECK(v == 1.0);

    const Tensor z = stack.lift(Tensor::zeros({2, 6, 1}));
    for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("lift matches a per-position matmul oracle") {
    Rng rng(2);
    FnoStack stack(5, 3, 2, 1, Activation::Silu, true, rng);
    Tensor w, b;
    stack.visit_params("f", [&](const std::string& name, Tensor& t) {
        if (name == "f.lift.weight") w = t;
        if (name == "f.lift.bias") b = t;
    });
    const Tensor x = rand_tensor(rng, {1, 5, 1});
    const Tensor v0 = stack.lift(x);
    for (std::size_t p = 0; p < 5; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            const double want = x.data()[p] * w.data()[c] + b.data()[c];
            CHECK(v0.data()[p * 3 + c] == doctest::Approx(want).epsilon(1e-14));
        }
    }
}

TEST_CASE("fourier_layer: zero spectral path reduces to silu of the local path") {
    Rng rng(3);
    const std::size_t M = 8, d = 3, m = 3;
    FnoLayerWeights w = zero_layer(m, d);
    w.local.weight = identity_matrix(d);
    const Tensor v = rand_tensor(rng, {2, M, d});
    const Tensor out = fourier_layer(v, w, m, Activation::Silu);
    CHECK(max_abs_diff(out, silu(v)) < 1e-15);
}

TEST_CASE("fourier_layer: constant signal through DC-identity mixing") {
    const std::size_t M = 6, d = 2, m = 2;
    FnoLayerWeights w = zero_layer(m, d);
    // W[0] = I (DC passthrough), other modes zero, local path off.
    std::vector<double> re(m * d * d, 0.0);
    for (std::size_t c = 0; c < d; ++c) re[c * d + c] = 1.0;
    w.modes.re = Tensor::from({m, d, d}, re);
    const Tensor v = Tensor::full({1, M, d}, 0.75);
    const Tensor out = fourier_layer(v, w, m, Activation::Silu);
    // A constant signal lives entirely in DC, so the spectral path returns it.
    CHECK(max_abs_diff(out, silu(v)) < 1e-12);
}

TEST_CASE("fourier_layer matches the composed spectral-op oracle") {
    Rng rng(4);
    const std::size_t M = 10, d = 3, m = 4;
    FnoLayerWeights w;
    w.modes.re = rand_tensor(rng, {m, d, d}, -0.5, 0.5);
    w.modes.im = rand_tensor(rng, {m, d, d}, -0.5, 0.5);
    w.local.weight = rand_tensor(rng, {d, d});
    w.local.bias = rand_tensor(rng, {d});
    const Tensor v = rand_tensor(rng, {2, M, d});
    const Tensor got = fourier_layer(v, w, m, Activation::Silu);

    // Oracle: full-spectrum ops with explicit conjugate completion.
    const Tensor mixed = frequency_mix(truncate_modes(dft1d(v), m), w.modes.packed());
    std::vector<cplx> comp(2 * M * d, cplx(0.0, 0.0));
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t c = 0; c < d; ++c) {
                cplx val = mixed.cdata()[(b * M + k) * d + c];
                if ((2 * k) % M == 0) val = cplx(val.real(), 0.0);
                comp[(b * M + k) * d + c] = val;
                if (k > 0 && (2 * k) % M != 0) {
                    comp[(b * M + (M - k)) * d + c] = std::conj(val);
                }
            }
        }
    }
    const Tensor spatial = real_part(idft1d(Tensor::cfrom({2, M, d}, comp), M));
    const Tensor want = silu(add(w.local.forward(v), spatial));
    CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("fno1d stack: zero weights give zero output; time steps are independent") {
    Rng rng(5);
    FnoStack stack(8, 4, 3, 2, Activation::Silu, true, rng);
    FnoStack zeroed = stack;
    zero_all_params([&](const ParamVisitor& v) { zeroed.visit_params("f", v); });
    const Tensor x = rand_tensor(rng, {2, 5, 8});
    const Tensor out0 = zeroed.forward(x);
    CHECK(max_abs_diff(out0, Tensor::zeros({2, 5, 8})) == 0.0);

    // Permuting time steps permutes outputs identically.
    const Tensor out = stack.forward(x);
    std::vector<double> perm(x.data());
    std::vector<std::size_t> order = {3, 0, 4, 1, 2};
    std::vector<double> xp(x.size());
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t l = 0; l < 5; ++l)
            for (std::size_t mm = 0; mm < 8; ++mm)
                xp[(b * 5 + l) * 8 + mm] = x.data()[(b * 5 + order[l]) * 8 + mm];
    const Tensor outp = stack.forward(Tensor::from({2, 5, 8}, xp));
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t l = 0; l < 5; ++l)
            for (std::size_t mm = 0; mm < 8; ++mm)
                CHECK(outp.data()[(b * 5 + l) * 8 + mm] ==
                      out.data()[(b * 5 + order[l]) * 8 + mm]);
}

TEST_CASE("fno1d stack keeps [B,L,M] shape") {
    Rng rng(6);
    FnoStack stack(12, 8, 4, 4, Activation::Silu, true, rng);
    const Tensor x = rand_tensor(rng, {2, 5, 12});
    CHECK(stack.forward(x).shape() == Shape{2, 5, 12});
}

TEST_CASE("fno1d per-step jacobian is block-diagonal under perturbation") {
    Rng rng(11);
    FnoStack stack(8, 4, 3, 2, Activation::Silu, true, rng);
    const Tensor x = rand_tensor(rng, {1, 5, 8});
    const Tensor y0 = stack.forward(x);
    const std::size_t t0 = 2;
    const Tensor y1 = stack.forward(tweak(x, t0 * 8 + 3, 0.4));
    bool perturbed_step_changed = false;
    for (std::size_t l = 0; l < 5; ++l) {
        for (std::size_t m = 0; m < 8; ++m) {
            const double a = y0.data()[l * 8 + m];
            const double b = y1.data()[l * 8 + m];
            if (l == t0) {
                perturbed_step_changed = perturbed_step_changed || a != b;
            } else {
                CHECK(a == b);  // other time steps are bit-identical
            }
        }
    }
    CHECK(perturbed_step_changed);
}

TEST_CASE("mode-truncation with identity mixing is an energy-contracting low-pass") {
    Rng rng(7);
    const std::size_t M = 16, d = 2, m = 4;
    std::vector<cplx> eye(m * d * d, cplx(0.0, 0.0));
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t c = 0; c < d; ++c) eye[(k * d + c) * d + c] = cplx(1.0, 0.0);
    const Tensor weye = Tensor::cfrom({m, d, d}, eye);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor v = rand_tensor(rng, {1, M, d});
        const Tensor out = idft1d_real_from_modes(frequency_mix(dft1d_modes(v, m), weye), M);
        double ein = 0.0, eout = 0.0;
        for (double x : v.data()) ein += x * x;
        for (double x : out.data()) eout += x * x;
        CHECK(eout <= ein + 1e-10);
    }
}

TEST_CASE("fno2d refiner: zero weights leave the field exactly unchanged") {
    Rng rng(8);
    Fno2dRefiner ref(6, 8, 1, 4, 3, 3, 2, Activation::Silu, true, rng);
    zero_all_params([&](const ParamVisitor& v) { ref.visit_params("r", v); });
    const Tensor u = rand_tensor(rng, {2, 6, 8, 1});
    const Tensor out = ref.refine(u);
    CHECK(max_abs_diff(out, u) == 0.0);
    // Bitwise: the projection contributes exact +0.0 everywhere.
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(out.data()[i] == u.data()[i]);
}

TEST_CASE("fno2d constant field with DC-identity mixing stays position-independent") {
    Rng rng(9);
    Fno2dRefiner ref(4, 6, 1, 2, 2, 2, 1, Activation::Silu, true, rng);
    ref.visit_params("r", [](const std::string& name, Tensor& t) {
        if (name.find("modes_re") != std::string::npos) {
            std::vector<double> v(t.size(), 0.0);
            // W[0,0] = I.
            for (std::size_t c = 0; c < 2; ++c) v[c * 2 + c] = 1.0;
            t = Tensor::from(t.shape(), std::move(v));
        } else if (name.find("modes_im") != std::string::npos ||
                   name.find("local.weight") != std::string::npos ||
                   name.find("local.bias") != std::string::npos) {
            t = Tensor::zeros(t.shape());
        }
    });
    const Tensor u = Tensor::full({1, 4, 6, 1}, 2.0);
    const Tensor out = ref.refine(u);
    CHECK(!has_nonfinite(out));
    const double first = out.data()[0];
    for (double v : out.data()) CHECK(v == doctest::Approx(first).epsilon(1e-12));
}

TEST_CASE("gradients through fourier layers and the 2d refiner match finite differences") {
    Rng rng(10);
    const std::size_t M = 8, d = 2, m = 3;
    const Tensor v = rand_tensor(rng, {1, M, d});
    const Tensor wre = rand_tensor(rng, {m, d, d}, -0.5, 0.5);
    const Tensor wim = rand_tensor(rng, {m, d, d}, -0.5, 0.5);
    const Tensor lw = rand_tensor(rng, {d, d});
    const Tensor lb = rand_tensor(rng, {d});
    CHECK(fd_check({v, wre, wim, lw, lb}, [&](const std::vector<Tensor>& in) {
              FnoLayerWeights w;
              w.modes.re = in[1];
              w.modes.im = in[2];
              w.local.weight = in[3];
              w.local.bias = in[4];
              const Tensor out = fourier_layer(in[0], w, m, Activation::Silu);
              return sum_all(mul(out, out));
          }) < 1e-5);
}
