#include <cmath>
#include <complex>
#include <vector>

#include "doctest.h"
#include "pfr/spectral.hpp"
#include "pfr/tensor.hpp"
#include "test_support.hpp"

using namespace pfr;
using namespace testing_support;

namespace {

Tensor column(const std::vector<double>& v) {
    const std::size_t n = v.size();
    return Tensor::from({n, 1}, v);
}

std::vector<cplx> spectrum_line(const Tensor& s) {
    // [M,1] complex -> flat vector
    return s.cdata();
}

}  // namespace

TEST_CASE("dft of a delta is flat; dft of a constant is DC only") {
    const Tensor delta = dft1d(column({1, 0, 0, 0}));
    for (const cplx& c : delta.cdata()) {
        CHECK(std::abs(c - cplx(1.0, 0.0)) < 1e-15);
    }
    const Tensor dc = dft1d(column({1, 1, 1, 1}));
    CHECK(std::abs(dc.cdata()[0] - cplx(4.0, 0.0)) < 1e-15);
    for (std::size_t k = 1; k < 4; ++k) CHECK(std::abs(dc.cdata()[k]) < 1e-15);
}

TEST_CASE("dft1d matches the naive double-loop oracle (length 7, real and complex)") {
    Rng rng(3);
    const Tensor xr = rand_tensor(rng, {7, 1});
    std::vector<cplx> asc(7);
    for (std::size_t i = 0; i < 7; ++i) asc[i] = cplx(xr.data()[i], 0.0);
    const auto want = dft_oracle(asc);
    const auto got = spectrum_line(dft1d(xr));
    for (std::size_t k = 0; k < 7; ++k) CHECK(std::abs(got[k] - want[k]) < 1e-12);

    const Tensor xc = rand_ctensor(rng, {7, 1});
    const auto wantc = dft_oracle(xc.cdata());
    const auto gotc = spectrum_line(dft1d(xc));
    for (std::size_t k = 0; k < 7; ++k) CHECK(std::abs(gotc[k] - wantc[k]) < 1e-12);
}

TEST_CASE("fft fast path is bit-compatible with the reference within 1e-12") {
    Rng rng(5);
    for (std::size_t M : {2u, 8u, 32u, 64u}) {
        const Tensor x = rand_ctensor(rng, {M, 3});
        CHECK(max_abs_diff(dft1d(x), dft1d_reference(x)) < 1e-12);
    }
}

TEST_CASE("roundtrip: idft1d(dft1d(x)) == x within 1e-12") {
    Rng rng(9);
    for (std::size_t M : {4u, 7u, 32u}) {
        const Tensor x = rand_tensor(rng, {M, 2});
        const Tensor back = idft1d(dft1d(x), M);
        CHECK(max_abs_diff(real_part(back), x) < 1e-12);
        const Tensor xi = imag_part(back);
        CHECK(max_abs_diff(xi, Tensor::zeros(xi.shape())) < 1e-12);
    }
}

TEST_CASE("retaining only DC of a constant signal preserves it") {
    const Tensor s = truncate_modes(dft1d(column({1, 1, 1, 1})), 1);
    const Tensor back = idft1d(s, 4);
    for (const cplx& c : back.cdata()) CHECK(std::abs(c - cplx(1.0, 0.0)) < 1e-14);
}

TEST_CASE("m=2 truncation of a length-8 signal matches the zero-then-invert oracle") {
    Rng rng(13);
    const Tensor x = rand_tensor(rng, {8, 1});
    const Tensor got = idft1d(truncate_modes(dft1d(x), 2), 8);

    auto full = spectrum_line(dft1d(x));
    for (std::size_t k = 2; k < 8; ++k) full[k] = cplx(0.0, 0.0);
    const auto want = idft_oracle(full);
    for (std::size_t n = 0; n < 8; ++n) CHECK(std::abs(got.cdata()[n] - want[n]) < 1e-12);
}

TEST_CASE("truncate_modes identity, DC-only, range checks, energy") {
    Rng rng(17);
    const Tensor s = dft1d(rand_tensor(rng, {6, 1}));
    CHECK(max_abs_diff(truncate_modes(s, 6), s) == 0.0);
    const Tensor dc = truncate_modes(s, 1);
    for (std::size_t k = 1; k < 6; ++k) CHECK(std::abs(dc.cdata()[k]) == 0.0);
    CHECK_THROWS_AS(truncate_modes(s, 0), ConfigError);
    CHECK_THROWS_AS(truncate_modes(s, 7), ConfigError);

    // Parseval energy of the truncated spectrum never exceeds the original.
    double e_full = 0.0, e_trunc = 0.0;
    const Tensor t3 = truncate_modes(s, 3);
    for (std::size_t k = 0; k < 6; ++k) {
        e_full += std::norm(s.cdata()[k]);
        e_trunc += std::norm(t3.cdata()[k]);
    }
    CHECK(e_trunc <= e_full + 1e-12);
}

TEST_CASE("frequency_mix identity, zero, and triple-loop oracle") {
    Rng rng(19);
    const std::size_t M = 6, d = 3, m = 4;
    const Tensor s = dft1d(rand_tensor(rng, {M, d}));
    const Tensor strunc = truncate_modes(s, m);

    std::vector<cplx> eye(m * d * d, cplx(0.0, 0.0));
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t c = 0; c < d; ++c) eye[(k * d + c) * d + c] = cplx(1.0, 0.0);
    CHECK(max_abs_diff(frequency_mix(strunc, Tensor::cfrom({m, d, d}, eye)), strunc) < 1e-15);

    const Tensor zero_w = Tensor::czeros({m, d, d});
    const Tensor zs = frequency_mix(strunc, zero_w);
    CHECK(max_abs_diff(zs, Tensor::czeros(zs.shape())) == 0.0);

    const Tensor w = rand_ctensor(rng, {m, d, d});
    const Tensor got = frequency_mix(strunc, w);
    for (std::size_t k = 0; k < M; ++k) {
        for (std::size_t c2 = 0; c2 < d; ++c2) {
            cplx want(0.0, 0.0);
            if (k < m) {
                for (std::size_t c = 0; c < d; ++c) {
                    want += strunc.cdata()[k * d + c] * w.cdata()[(k * d + c) * d + c2];
                }
            }
            CHECK(std::abs(got.cdata()[k * d + c2] - want) < 1e-12);
        }
    }
}

TEST_CASE("Parseval and linearity") {
    Rng rng(29);
    for (std::size_t M : {5u, 16u}) {
        const Tensor x = rand_tensor(rng, {M, 1});
        const Tensor s = dft1d(x);
        double ex = 0.0, es = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            ex += x.data()[i] * x.data()[i];
            es += std::norm(s.cdata()[i]);
        }
        CHECK(std::abs(ex - es / static_cast<double>(M)) < 1e-10);
    }

    const Tensor x = rand_tensor(rng, {9, 2});
    const Tensor y = rand_tensor(rng, {9, 2});
    const double a = 1.7, b = -0.4;
    const Tensor lhs = dft1d(add(scale(x, a), scale(y, b)));
    const Tensor rhs = add(scale(dft1d(x), a), scale(dft1d(y), b));
    CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("Hermitian symmetry of real-input spectra is exact") {
    Rng rng(37);
    for (std::size_t M : {6u, 9u, 32u}) {
        const std::size_t d = 2;
        const Tensor s = dft1d(rand_tensor(rng, {M, d}));
        const auto& sd = s.cdata();
        for (std::size_t k = 1; k < M; ++k) {
            for (std::size_t c = 0; c < d; ++c) {
                const cplx lhs = sd[k * d + c];
                const cplx rhs = std::conj(sd[(M - k) * d + c]);
                CHECK(lhs.real() == rhs.real());
                CHECK(lhs.imag() == rhs.imag());
            }
        }
    }
}

TEST_CASE("compact mode ops agree with the full-spectrum compositions") {
    Rng rng(41);
    const std::size_t M = 12, d = 3, m = 5;
    const Tensor x = rand_tensor(rng, {2, M, d});
    const Tensor compact = dft1d_modes(x, m);
    const Tensor full = dft1d(x);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t c = 0; c < d; ++c) {
                CHECK(std::abs(compact.cdata()[(b * m + k) * d + c] -
                               full.cdata()[(b * M + k) * d + c]) < 1e-12);
            }
        }
    }

    // Hermitian inverse vs explicit conjugate completion + full inverse.
    const Tensor w = rand_ctensor(rng, {m, d, d});
    const Tensor mixed = frequency_mix(compact, w);  // compact: all m rows mixed
    const Tensor got = idft1d_real_from_modes(mixed, M);

    std::vector<cplx> fullspec(2 * M * d, cplx(0.0, 0.0));
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t c = 0; c < d; ++c) {
                cplx v = mixed.cdata()[(b * m + k) * d + c];
                if ((2 * k) % M == 0) v = cplx(v.real(), 0.0);
                fullspec[(b * M + k) * d + c] = v;
                if (k > 0 && (2 * k) % M != 0) {
                    fullspec[(b * M + (M - k)) * d + c] = std::conj(v);
                }
            }
        }
    }
    const Tensor want = real_part(idft1d(Tensor::cfrom({2, M, d}, fullspec), M));
    CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("2D: roundtrip, constant field, separability against per-axis oracle") {
    Rng rng(43);
    const std::size_t H = 6, W = 8, d = 2;
    const Tensor x = rand_tensor(rng, {H, W, d});

    const Tensor back = idft2d(dft2d(x));
    CHECK(max_abs_diff(real_part(back), x) < 1e-12);

    const Tensor cf = Tensor::full({H, W, 1}, 3.25);
    const Tensor cs = dft2d(cf);
    CHECK(std::abs(cs.cdata()[0] - cplx(3.25 * H * W, 0.0)) < 1e-10);
    double off_dc = 0.0;
    for (std::size_t i = 1; i < H * W; ++i) off_dc = std::max(off_dc, std::abs(cs.cdata()[i]));
    CHECK(off_dc < 1e-10);

    // Separability: DFT rows (along W) then columns (along H) with the naive oracle.
    std::vector<cplx> tmp(H * W * d), want(H * W * d);
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            std::vector<cplx> line(W);
            for (std::size_t w = 0; w < W; ++w) line[w] = cplx(x.data()[(r * W + w) * d + c], 0.0);
            const auto f = dft_oracle(line);
            for (std::size_t w = 0; w < W; ++w) tmp[(r * W + w) * d + c] = f[w];
        }
    }
    for (std::size_t w = 0; w < W; ++w) {
        for (std::size_t c = 0; c < d; ++c) {
            std::vector<cplx> line(H);
            for (std::size_t r = 0; r < H; ++r) line[r] = tmp[(r * W + w) * d + c];
            const auto f = dft_oracle(line);
            for (std::size_t r = 0; r < H; ++r) want[(r * W + w) * d + c] = f[r];
        }
    }
    CHECK(max_abs_diff(dft2d(x), Tensor::cfrom({H, W, d}, want)) < 1e-12);
}

TEST_CASE("2D corner ops: truncation, mixing, compact transforms, real inverse") {
    Rng rng(47);
    const std::size_t H = 6, W = 8, d = 2, mh = 3, mw = 3;
    const Tensor x = rand_tensor(rng, {H, W, d});
    const Tensor full = dft2d(x);
    const Tensor corner = dft2d_modes(x, mh, mw);
    for (std::size_t kh = 0; kh < mh; ++kh) {
        for (std::size_t kw = 0; kw < mw; ++kw) {
            for (std::size_t c = 0; c < d; ++c) {
                CHECK(std::abs(corner.cdata()[(kh * mw + kw) * d + c] -
                               full.cdata()[(kh * W + kw) * d + c]) < 1e-12);
            }
        }
    }

    const Tensor trunc = truncate_modes2d(full, mh, mw);
    for (std::size_t kh = 0; kh < H; ++kh) {
        for (std::size_t kw = 0; kw < W; ++kw) {
            const bool keep = kh < mh && kw < mw;
            for (std::size_t c = 0; c < d; ++c) {
                const cplx v = trunc.cdata()[(kh * W + kw) * d + c];
                if (keep) {
                    CHECK(v == full.cdata()[(kh * W + kw) * d + c]);
                } else {
                    CHECK(std::abs(v) == 0.0);
                }
            }
        }
    }

    // Real inverse with conjugate completion vs explicit completion oracle.
    const Tensor w = rand_ctensor(rng, {mh, mw, d, d});
    const Tensor mixed = frequency_mix2d(truncate_modes2d(full, mh, mw), w);
    std::vector<cplx> comp(H * W * d, cplx(0.0, 0.0));
    for (std::size_t kh = 0; kh < mh; ++kh) {
        for (std::size_t kw = 0; kw < mw; ++kw) {
            for (std::size_t c = 0; c < d; ++c) {
                cplx v = mixed.cdata()[(kh * W + kw) * d + c];
                const bool self = (2 * kh) % H == 0 && (2 * kw) % W == 0;
                if (self) v = cplx(v.real(), 0.0);
                comp[(kh * W + kw) * d + c] = v;
                if (!self) {
                    const std::size_t rh = (H - kh) % H;
                    const std::size_t rw = (W - kw) % W;
                    comp[(rh * W + rw) * d + c] = std::conj(v);
                }
            }
        }
    }
    const Tensor want = real_part(idft2d(Tensor::cfrom({H, W, d}, comp)));

    // Compact route: gather the corner of `mixed` and invert.
    std::vector<cplx> corner_mixed(mh * mw * d);
    for (std::size_t kh = 0; kh < mh; ++kh)
        for (std::size_t kw = 0; kw < mw; ++kw)
            for (std::size_t c = 0; c < d; ++c)
                corner_mixed[(kh * mw + kw) * d + c] = mixed.cdata()[(kh * W + kw) * d + c];
    const Tensor got =
        idft2d_real_from_modes(Tensor::cfrom({mh, mw, d}, corner_mixed), H, W);
    CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("mode counts beyond the grid are configuration errors") {
    const Tensor s = dft2d(Tensor::zeros({4, 6, 1}));
    CHECK_THROWS_AS(truncate_modes2d(s, 5, 2), ConfigError);
    CHECK_THROWS_AS(truncate_modes2d(s, 2, 7), ConfigError);
    CHECK_THROWS_AS(dft2d_modes(Tensor::zeros({4, 6, 1}), 5, 2), ConfigError);
    CHECK_THROWS_AS(idft2d_real_from_modes(Tensor::czeros({4, 4, 1}), 4, 6), ConfigError);
}

TEST_CASE("adjoint gradients through dft -> mix -> idft match finite differences") {
    Rng rng(53);
    const std::size_t M = 8, d = 2, m = 3;
    const Tensor x = rand_tensor(rng, {M, d});
    const Tensor wre = rand_tensor(rng, {m, d, d}, -0.7, 0.7);
    const Tensor wim = rand_tensor(rng, {m, d, d}, -0.7, 0.7);

    // Full-spectrum pipeline, loss = sum of real part squared.
    CHECK(fd_check({x, wre, wim}, [&](const std::vector<Tensor>& in) {
              const Tensor w = make_complex(in[1], in[2]);
              const Tensor s = truncate_modes(dft1d(in[0]), m);
              const Tensor r = real_part(idft1d(frequency_mix(s, w), M));
              return sum_all(mul(r, r));
          }) < 1e-5);

    // Compact Hermitian pipeline.
    CHECK(fd_check({x, wre, wim}, [&](const std::vector<Tensor>& in) {
              const Tensor w = make_complex(in[1], in[2]);
              const Tensor s = dft1d_modes(in[0], m);
              const Tensor r = idft1d_real_from_modes(frequency_mix(s, w), M);
              return sum_all(mul(r, r));
          }) < 1e-5);

    // 2D compact pipeline.
    const std::size_t H = 4, W = 6, mh = 2, mw = 3;
    const Tensor x2 = rand_tensor(rng, {H, W, d});
    const Tensor w2re = rand_tensor(rng, {mh, mw, d, d}, -0.7, 0.7);
    const Tensor w2im = rand_tensor(rng, {mh, mw, d, d}, -0.7, 0.7);
    CHECK(fd_check({x2, w2re, w2im}, [&](const std::vector<Tensor>& in) {
              const Tensor w = make_complex(in[1], in[2]);
              const Tensor s = dft2d_modes(in[0], mh, mw);
              const Tensor r = idft2d_real_from_modes(frequency_mix2d(s, w), H, W);
              return sum_all(mul(r, r));
          }) < 1e-5);

    // Full 2D transform pair.
    CHECK(fd_check({x2}, [&](const std::vector<Tensor>& in) {
              const Tensor r = real_part(idft2d(truncate_modes2d(dft2d(in[0]), mh, mw)));
              return sum_all(mul(r, r));
          }) < 1e-5);
}
