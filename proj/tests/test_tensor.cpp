#include <cmath>
#include <vector>

#include "doctest.h"
#include "pfr/tensor.hpp"
#include "test_support.hpp"

using namespace pfr;
using namespace testing_support;

TEST_CASE("matmul identity and hand cases") {
    const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(max_abs_diff(matmul(eye, a), a) == 0.0);

    const Tensor row = Tensor::from({1, 2}, {1, 2});
    const Tensor col = Tensor::from({2, 1}, {3, 4});
    CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    const Tensor a = rand_tensor(rng, {3, 4});
    const Tensor b = rand_tensor(rng, {4, 5});
    const Tensor c = matmul(a, b);
    const auto want = matmul_oracle(a.data(), b.data(), 3, 4, 5);
    CHECK(max_abs_diff(c, Tensor::from({3, 5}, want)) < 1e-14);

    // Batched with a shared rank-2 rhs.
    const Tensor ab = rand_tensor(rng, {2, 3, 3, 4});
    const Tensor cb = matmul(ab, b);
    for (std::size_t n = 0; n < 6; ++n) {
        std::vector<double> blk(ab.data().begin() + n * 12, ab.data().begin() + (n + 1) * 12);
        const auto wantb = matmul_oracle(blk, b.data(), 3, 4, 5);
        for (std::size_t i = 0; i < 15; ++i) {
            CHECK(cb.data()[n * 15 + i] == doctest::Approx(wantb[i]).epsilon(1e-13));
        }
    }
}

TEST_CASE("matmul shape error names both shapes") {
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor b = Tensor::zeros({4, 5});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
}

TEST_CASE("elementwise basics") {
    CHECK(exp_op(Tensor::scalar(0.0)).item() == 1.0);
    const double v = expm1_op(Tensor::scalar(1e-12)).item();
    CHECK(std::abs(v - 1e-12) < 1e-18);  // no catastrophic cancellation
    const Tensor s = add(Tensor::from({2}, {1, 2}), Tensor::from({1}, {10}));
    CHECK(s.data()[0] == 11.0);
    CHECK(s.data()[1] == 12.0);
}

TEST_CASE("broadcast add is associative for exactly representable integers") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto ints = [&](Shape shape) {
            std::vector<double> v(shape_numel(shape));
            for (double& x : v) x = static_cast<double>(static_cast<int>(rng.below(2000)) - 1000);
            return Tensor::from(shape, std::move(v));
        };
        const Tensor a = ints({2, 3, 4});
        const Tensor b = ints({3, 1});
        const Tensor c = ints({4});
        CHECK(max_abs_diff(add(add(a, b), c), add(a, add(b, c))) == 0.0);
    }
}

TEST_CASE("reciprocal at zero flags nonfinite") {
    const Tensor r = reciprocal(Tensor::from({2}, {0.0, 2.0}));
    CHECK(std::isinf(r.data()[0]));
    CHECK(has_nonfinite(r));
    CHECK(!has_nonfinite(Tensor::from({2}, {1.0, 2.0})));
}

TEST_CASE("silu values") {
    CHECK(silu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(std::abs(silu(Tensor::scalar(40.0)).item() - 40.0) < 1e-12);
    CHECK(silu(Tensor::scalar(1.0)).item() ==
          doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
}

TEST_CASE("conv1d hand cases") {
    const Tensor x = Tensor::from({1, 3, 1}, {5, 7, 9});
    CHECK(max_abs_diff(conv1d_depthwise(x, Tensor::from({1, 1}, {1})), x) == 0.0);

    const Tensor delayed = conv1d_depthwise(x, Tensor::from({1, 2}, {0, 1}));
    CHECK(delayed.data() == std::vector<double>{0, 5, 7});
}

TEST_CASE("conv1d matches sliding-window oracle") {
    Rng rng(23);
    const std::size_t B = 2, L = 9, M = 3, k = 4;
    const Tensor x = rand_tensor(rng, {B, L, M});
    const Tensor w = rand_tensor(rng, {M, k});
    const Tensor y = conv1d_depthwise(x, w);
    const auto want = conv1d_oracle(x.data(), w.data(), B, L, M, k);
    CHECK(max_abs_diff(y, Tensor::from({B, L, M}, want)) < 1e-14);
}

TEST_CASE("conv1d rejects kernels wider than the sequence") {
    const Tensor x = Tensor::zeros({1, 3, 2});
    const Tensor w = Tensor::zeros({2, 4});
    CHECK_THROWS_AS(conv1d_depthwise(x, w), ConfigError);
}

TEST_CASE("conv1d causality is bit-exact") {
    Rng rng(31);
    const std::size_t B = 1, L = 8, M = 2, k = 3;
    const Tensor x = rand_tensor(rng, {B, L, M});
    const Tensor w = rand_tensor(rng, {M, k});
    const Tensor y0 = conv1d_depthwise(x, w);
    const std::size_t t0 = 5;
    const Tensor xp = tweak(x, (0 * L + t0) * M + 1, 0.5);
    const Tensor y1 = conv1d_depthwise(xp, w);
    for (std::size_t l = 0; l < t0; ++l) {
        for (std::size_t m = 0; m < M; ++m) {
            CHECK(y0.data()[(0 * L + l) * M + m] == y1.data()[(0 * L + l) * M + m]);
        }
    }
}

TEST_CASE("backward: d/dx x^2 at 3 is 6") {
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor x = tape.watch(Tensor::scalar(3.0));
    const Tensor loss = mul(x, x);
    tape.backward(loss);
    CHECK(tape.grad(x).item() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward: silu gradient matches central differences") {
    const Tensor x = Tensor::scalar(1.0);
    const double worst =
        fd_check({x}, [](const std::vector<Tensor>& in) { return sum_all(silu(in[0])); });
    CHECK(worst < 1e-7);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor x = tape.watch(Tensor::from({2}, {1, 2}));
    const Tensor y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), UsageError);
}

TEST_CASE("finite differences agree for every elementwise op") {
    Rng rng(101);
    const Tensor x = rand_tensor(rng, {2, 3});
    auto through = [](Tensor (*op)(const Tensor&)) {
        return [op](const std::vector<Tensor>& in) { return sum_all(op(in[0])); };
    };
    CHECK(fd_check({x}, through(&silu)) < 1e-5);
    CHECK(fd_check({x}, through(&exp_op)) < 1e-5);
    CHECK(fd_check({x}, through(&expm1_op)) < 1e-5);
    CHECK(fd_check({x}, through(&softplus)) < 1e-5);
    CHECK(fd_check({x}, through(&gelu)) < 1e-5);
    CHECK(fd_check({x}, through(&neg)) < 1e-5);

    const Tensor pos = rand_tensor(rng, {2, 3}, 0.5, 2.0);
    CHECK(fd_check({pos}, through(&log1p_op)) < 1e-5);
    CHECK(fd_check({pos}, through(&reciprocal)) < 1e-5);
    CHECK(fd_check({pos}, through(&abs_op)) < 1e-5);
    CHECK(fd_check({pos}, through(&relu)) < 1e-5);
}

TEST_CASE("finite differences agree for broadcast add/mul, matmul, conv, reshape") {
    Rng rng(55);
    const Tensor a = rand_tensor(rng, {2, 3, 4});
    const Tensor b = rand_tensor(rng, {4});
    CHECK(fd_check({a, b}, [](const std::vector<Tensor>& in) {
              return sum_all(mul(add(in[0], in[1]), in[0]));
          }) < 1e-5);

    const Tensor m1 = rand_tensor(rng, {3, 4});
    const Tensor m2 = rand_tensor(rng, {4, 2});
    CHECK(fd_check({m1, m2}, [](const std::vector<Tensor>& in) {
              return sum_all(mul(matmul(in[0], in[1]), matmul(in[0], in[1])));
          }) < 1e-5);

    const Tensor x = rand_tensor(rng, {2, 6, 3});
    const Tensor w = rand_tensor(rng, {3, 2});
    CHECK(fd_check({x, w}, [](const std::vector<Tensor>& in) {
              return sum_all(silu(conv1d_depthwise(in[0], in[1])));
          }) < 1e-5);

    CHECK(fd_check({x}, [](const std::vector<Tensor>& in) {
              return sum_all(mul(reshape(in[0], {6, 6}), reshape(in[0], {6, 6})));
          }) < 1e-5);
}

TEST_CASE("complex pack/unpack round-trips with gradients") {
    Rng rng(77);
    const Tensor re = rand_tensor(rng, {3, 2});
    const Tensor im = rand_tensor(rng, {3, 2});
    const Tensor c = make_complex(re, im);
    CHECK(max_abs_diff(real_part(c), re) == 0.0);
    CHECK(max_abs_diff(imag_part(c), im) == 0.0);

    CHECK(fd_check({re, im}, [](const std::vector<Tensor>& in) {
              const Tensor c2 = make_complex(in[0], in[1]);
              const Tensor r = real_part(c2);
              const Tensor i = imag_part(c2);
              return sum_all(add(mul(r, r), mul(i, i)));
          }) < 1e-5);
}

TEST_CASE("gradients of untouched leaves come back as zeros") {
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor x = tape.watch(Tensor::from({2}, {1, 2}));
    const Tensor unused = tape.watch(Tensor::from({3}, {1, 2, 3}));
    tape.backward(sum_all(mul(x, x)));
    const Tensor g = tape.grad(unused);
    CHECK(g.shape() == Shape{3});
    CHECK(max_abs_diff(g, Tensor::zeros({3})) == 0.0);
}
