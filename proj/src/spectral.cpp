#include "pfr/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <unordered_map>

#include "op_utils.hpp"

namespace pfr {

namespace {

constexpr double kTwoPi = 6.283185307179586476925287;

/// exp(-2*pi*i*j/len) for j in [0,len); inverse transforms use conjugates.
/// The upper half mirrors the lower with an exact conjugate and quarter-circle
/// entries are snapped, so tw[len-j] == conj(tw[j]) holds bitwise. That makes
/// real-input spectra Hermitian-symmetric exactly, not just to rounding.
const std::vector<cplx>& twiddles(std::size_t len) {
    thread_local std::unordered_map<std::size_t, std::unique_ptr<std::vector<cplx>>> cache;
    auto& slot = cache[len];
    if (!slot) {
        auto tw = std::make_unique<std::vector<cplx>>(len);
        for (std::size_t j = 0; j <= len / 2; ++j) {
            if (j == 0) {
                (*tw)[j] = cplx(1.0, 0.0);
            } else if (4 * j == len) {
                (*tw)[j] = cplx(0.0, -1.0);
            } else if (2 * j == len) {
                (*tw)[j] = cplx(-1.0, 0.0);
            } else {
                const double ang = -kTwoPi * static_cast<double>(j) / static_cast<double>(len);
                (*tw)[j] = cplx(std::cos(ang), std::sin(ang));
            }
        }
        for (std::size_t j = len / 2 + 1; j < len; ++j) (*tw)[j] = std::conj((*tw)[len - j]);
        slot = std::move(tw);
    }
    return *slot;
}

bool is_pow2(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

/// In-place radix-2 DIT FFT of a gathered line; sign=-1 forward, +1 inverse
/// (no normalization).
void fft_line(std::vector<cplx>& a, int sign) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const auto& tw = twiddles(n);
    for (std::size_t half = 1; half < n; half <<= 1) {
        const std::size_t step = n / (2 * half);
        for (std::size_t start = 0; start < n; start += 2 * half) {
            for (std::size_t j = 0; j < half; ++j) {
                cplx w = tw[j * step];
                if (sign > 0) w = std::conj(w);
                const cplx t = a[start + j + half] * w;
                a[start + j + half] = a[start + j] - t;
                a[start + j] = a[start + j] + t;
            }
        }
    }
}

struct AxisView {
    std::size_t batch;  // slabs before the transform axis
    std::size_t len;    // transform length
    std::size_t inner;  // contiguous elements after the axis
};

/// View [..., len, inner...] as [batch, len, inner]; axis counts from the end
/// (axis=1 means second-to-last, the 1D layout; axis=2 is the H axis of 2D).
AxisView axis_view(const Shape& s, std::size_t axis_from_end) {
    if (s.size() < axis_from_end + 1) {
        throw ShapeError("transform axis out of range for shape " + shape_str(s));
    }
    AxisView v;
    const std::size_t axis = s.size() - 1 - axis_from_end;
    v.len = s[axis];
    v.batch = 1;
    for (std::size_t i = 0; i < axis; ++i) v.batch *= s[i];
    v.inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

/// Core transform along the given axis of a complex buffer.
/// out[b,k,i] = norm * sum_x in[b,x,i] * exp(sign*2*pi*i*k*x/len_out), where the
/// input axis has len_in entries and the output axis len_out (zero-padding when
/// len_in < len_out, truncated output when len_out_keep < len_out).
/// allow_fft enables the radix-2 path for full-length transforms.
std::vector<cplx> transform_axis(const std::vector<cplx>& in, AxisView v, std::size_t len_out,
                                 std::size_t keep, int sign, double norm, bool allow_fft) {
    const std::size_t len_in = v.len;
    std::vector<cplx> out(v.batch * keep * v.inner, cplx(0.0, 0.0));
    const bool fft_ok = allow_fft && len_in == len_out && keep == len_out && is_pow2(len_out);
    if (fft_ok) {
        std::vector<cplx> line(len_out);
        for (std::size_t b = 0; b < v.batch; ++b) {
            for (std::size_t i = 0; i < v.inner; ++i) {
                const cplx* src = in.data() + (b * len_in) * v.inner + i;
                for (std::size_t x = 0; x < len_out; ++x) line[x] = src[x * v.inner];
                fft_line(line, sign);
                cplx* dst = out.data() + (b * keep) * v.inner + i;
                for (std::size_t k = 0; k < keep; ++k) dst[k * v.inner] = norm * line[k];
            }
        }
        return out;
    }
    const auto& tw = twiddles(len_out);
    for (std::size_t b = 0; b < v.batch; ++b) {
        const cplx* src = in.data() + b * len_in * v.inner;
        cplx* dst = out.data() + b * keep * v.inner;
        for (std::size_t k = 0; k < keep; ++k) {
            cplx* drow = dst + k * v.inner;
            for (std::size_t x = 0; x < len_in; ++x) {
                cplx w = tw[(k * x) % len_out];
                if (sign > 0) w = std::conj(w);
                w *= norm;
                const cplx* srow = src + x * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) drow[i] += srow[i] * w;
            }
        }
    }
    return out;
}

std::vector<cplx> to_cplx(const Tensor& t) {
    if (!t.is_real()) return t.cdata();
    const auto& rd = t.data();
    std::vector<cplx> out(rd.size());
    for (std::size_t i = 0; i < rd.size(); ++i) out[i] = cplx(rd[i], 0.0);
    return out;
}

std::vector<double> re_of(const std::vector<cplx>& v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i].real();
    return out;
}

/// Partial real-input DFT along axis -2: keep the first `m` modes.
std::vector<cplx> partial_dft_real(const std::vector<double>& in, AxisView v, std::size_t m) {
    const auto& tw = twiddles(v.len);
    std::vector<cplx> out(v.batch * m * v.inner, cplx(0.0, 0.0));
    for (std::size_t b = 0; b < v.batch; ++b) {
        const double* src = in.data() + b * v.len * v.inner;
        cplx* dst = out.data() + b * m * v.inner;
        for (std::size_t k = 0; k < m; ++k) {
            cplx* drow = dst + k * v.inner;
            for (std::size_t x = 0; x < v.len; ++x) {
                const cplx w = tw[(k * x) % v.len];
                const double* srow = src + x * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) drow[i] += srow[i] * w;
            }
        }
    }
    return out;
}

Shape with_axis(const Shape& s, std::size_t axis_from_end, std::size_t extent) {
    Shape out = s;
    out[out.size() - 1 - axis_from_end] = extent;
    return out;
}

/// Shared forward/adjoint plumbing of the full 1D transform family.
Tensor dft1d_impl(const Tensor& x, bool allow_fft) {
    if (x.rank() < 2) throw ShapeError("dft1d input must be [..., M, d], got " + shape_str(x.shape()));
    const AxisView v = axis_view(x.shape(), 1);
    if (v.len < 1) throw ShapeError("dft1d needs M >= 1");
    Tensor result;
    if (x.is_real()) {
        // Compute the non-negative half and mirror the conjugates so the
        // Hermitian symmetry of the spectrum is exact.
        const std::size_t M = v.len;
        const std::size_t half = M / 2;
        std::vector<cplx> low = partial_dft_real(x.data(), v, half + 1 > M ? M : half + 1);
        const std::size_t nlow = half + 1 > M ? M : half + 1;
        std::vector<cplx> full(v.batch * M * v.inner);
        for (std::size_t b = 0; b < v.batch; ++b) {
            const cplx* src = low.data() + b * nlow * v.inner;
            cplx* dst = full.data() + b * M * v.inner;
            for (std::size_t k = 0; k < nlow; ++k) {
                std::copy(src + k * v.inner, src + (k + 1) * v.inner, dst + k * v.inner);
            }
            for (std::size_t k = nlow; k < M; ++k) {
                const cplx* mirror = src + (M - k) * v.inner;
                cplx* drow = dst + k * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) drow[i] = std::conj(mirror[i]);
            }
        }
        result = Tensor::cfrom(x.shape(), std::move(full));
    } else {
        result = Tensor::cfrom(
            x.shape(), transform_axis(to_cplx(x), v, v.len, v.len, -1, 1.0, allow_fft));
    }

    const int nx = x.node();
    const bool real_in = x.is_real();
    const Shape in_shape = x.shape();
    auto fn = [nx, real_in, in_shape, v, allow_fft](const Tensor& g, const Tape::Accumulator& accum) {
        if (nx < 0) return;
        // Adjoint of F is conj(F)^T: an unnormalized inverse transform.
        std::vector<cplx> gi = transform_axis(g.cdata(), v, v.len, v.len, +1, 1.0, allow_fft);
        if (real_in) {
            accum(nx, Tensor::from(in_shape, re_of(gi)));
        } else {
            accum(nx, Tensor::cfrom(in_shape, std::move(gi)));
        }
    };
    const int node = detail::maybe_record("dft1d", {&x}, std::move(fn));
    return with_node(result, node);
}

}  // namespace

Tensor dft1d(const Tensor& x) { return dft1d_impl(x, true); }
Tensor dft1d_reference(const Tensor& x) { return dft1d_impl(x, false); }

Tensor idft1d(const Tensor& s, std::size_t M) {
    if (s.is_real()) throw ShapeError("idft1d expects a complex spectrum");
    if (s.rank() < 2) throw ShapeError("idft1d input must be [..., K, d]");
    const AxisView v = axis_view(s.shape(), 1);
    if (v.len > M) {
        throw ShapeError("idft1d got " + std::to_string(v.len) + " modes for length " +
                         std::to_string(M));
    }
    const double norm = 1.0 / static_cast<double>(M);
    Tensor result = Tensor::cfrom(with_axis(s.shape(), 1, M),
                                  transform_axis(s.cdata(), v, M, M, +1, norm, true));

    const int ns = s.node();
    const Shape in_shape = s.shape();
    auto fn = [ns, in_shape, v, M, norm](const Tensor& g, const Tape::Accumulator& accum) {
        if (ns < 0) return;
        AxisView gv = v;
        gv.len = M;
        accum(ns, Tensor::cfrom(in_shape,
                                transform_axis(g.cdata(), gv, M, v.len, -1, norm, v.len == M)));
    };
    const int node = detail::maybe_record("idft1d", {&s}, std::move(fn));
    return with_node(result, node);
}

Tensor truncate_modes(const Tensor& s, std::size_t m) {
    if (s.is_real()) throw ShapeError("truncate_modes expects a complex spectrum");
    const AxisView v = axis_view(s.shape(), 1);
    if (m < 1 || m > v.len) {
        throw ConfigError("mode count " + std::to_string(m) + " out of range [1," +
                          std::to_string(v.len) + "]");
    }
    std::vector<cplx> out = s.cdata();
    for (std::size_t b = 0; b < v.batch; ++b) {
        cplx* blk = out.data() + b * v.len * v.inner;
        std::fill(blk + m * v.inner, blk + v.len * v.inner, cplx(0.0, 0.0));
    }
    Tensor result = Tensor::cfrom(s.shape(), std::move(out));

    const int ns = s.node();
    auto fn = [ns, m](const Tensor& g, const Tape::Accumulator& accum) {
        if (ns >= 0) accum(ns, truncate_modes(g, m));
    };
    const int node = detail::maybe_record("truncate_modes", {&s}, std::move(fn));
    return with_node(result, node);
}

namespace {

/// out[..,k,c'] = sum_c s[..,k,c] w[k,c,c'] for k < m; zero outside.
/// conj_w / conj_s select the adjoint variants used in backward.
std::vector<cplx> mix_kernel(const std::vector<cplx>& s, std::size_t batch, std::size_t K,
                             std::size_t d, const std::vector<cplx>& w, std::size_t m,
                             bool conj_w, bool swap_w_index) {
    std::vector<cplx> out(batch * K * d, cplx(0.0, 0.0));
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < m; ++k) {
            const cplx* srow = s.data() + (b * K + k) * d;
            cplx* drow = out.data() + (b * K + k) * d;
            const cplx* wk = w.data() + k * d * d;
            for (std::size_t c = 0; c < d; ++c) {
                const cplx sv = srow[c];
                for (std::size_t c2 = 0; c2 < d; ++c2) {
                    cplx wv = swap_w_index ? wk[c2 * d + c] : wk[c * d + c2];
                    if (conj_w) wv = std::conj(wv);
                    drow[c2] += sv * wv;
                }
            }
        }
    }
    return out;
}

}  // namespace

Tensor frequency_mix(const Tensor& s, const Tensor& w) {
    if (s.is_real() || w.is_real()) throw ShapeError("frequency_mix expects complex tensors");
    if (w.rank() != 3 || w.shape()[1] != w.shape()[2]) {
        throw ShapeError("frequency_mix weights must be [m,d,d], got " + shape_str(w.shape()));
    }
    const AxisView v = axis_view(s.shape(), 1);
    const std::size_t m = w.shape()[0];
    const std::size_t d = w.shape()[1];
    if (v.inner != d) {
        throw ShapeError("frequency_mix channel mismatch: spectrum " + shape_str(s.shape()) +
                         ", weights " + shape_str(w.shape()));
    }
    if (m > v.len) {
        throw ShapeError("frequency_mix has more weight modes than spectrum rows: " +
                         shape_str(w.shape()) + " vs " + shape_str(s.shape()));
    }
    Tensor result =
        Tensor::cfrom(s.shape(), mix_kernel(s.cdata(), v.batch, v.len, d, w.cdata(), m, false, false));

    const int ns = s.node();
    const int nw = w.node();
    const Tensor sv = s.detached();
    const Tensor wv = w.detached();
    auto fn = [ns, nw, sv, wv, v, m, d](const Tensor& g, const Tape::Accumulator& accum) {
        const auto& gd = g.cdata();
        if (ns >= 0) {
            // gs[..,k,c] = sum_c' g[..,k,c'] conj(w[k,c,c'])
            accum(ns, Tensor::cfrom(sv.shape(),
                                    mix_kernel(gd, v.batch, v.len, d, wv.cdata(), m, true, true)));
        }
        if (nw >= 0) {
            // gw[k,c,c'] = sum_batch conj(s[..,k,c]) g[..,k,c']
            const auto& sd = sv.cdata();
            std::vector<cplx> gw(m * d * d, cplx(0.0, 0.0));
            for (std::size_t b = 0; b < v.batch; ++b) {
                for (std::size_t k = 0; k < m; ++k) {
                    const cplx* srow = sd.data() + (b * v.len + k) * d;
                    const cplx* grow = gd.data() + (b * v.len + k) * d;
                    cplx* wk = gw.data() + k * d * d;
                    for (std::size_t c = 0; c < d; ++c) {
                        const cplx sc = std::conj(srow[c]);
                        for (std::size_t c2 = 0; c2 < d; ++c2) wk[c * d + c2] += sc * grow[c2];
                    }
                }
            }
            accum(nw, Tensor::cfrom(wv.shape(), std::move(gw)));
        }
    };
    const int node = detail::maybe_record("frequency_mix", {&s, &w}, std::move(fn));
    return with_node(result, node);
}

namespace {

/// Real inverse of `keep` retained modes with conjugate completion; the
/// per-mode weight doubles every mode without a self-conjugate partner.
std::vector<double> partial_idft_real(const std::vector<cplx>& s, std::size_t batch,
                                      std::size_t keep, std::size_t inner, std::size_t M) {
    const auto& tw = twiddles(M);
    const double norm = 1.0 / static_cast<double>(M);
    std::vector<double> out(batch * M * inner, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        const cplx* src = s.data() + b * keep * inner;
        double* dst = out.data() + b * M * inner;
        for (std::size_t k = 0; k < keep; ++k) {
            const double wk = ((2 * k) % M == 0 ? 1.0 : 2.0) * norm;
            const cplx* srow = src + k * inner;
            for (std::size_t x = 0; x < M; ++x) {
                const cplx e = std::conj(tw[(k * x) % M]);  // e^{+2 pi i k x / M}
                double* drow = dst + x * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    drow[i] += wk * (srow[i].real() * e.real() - srow[i].imag() * e.imag());
                }
            }
        }
    }
    return out;
}

/// Adjoint of partial_idft_real: weighted partial DFT of a real gradient.
std::vector<cplx> partial_idft_real_adjoint(const std::vector<double>& g, std::size_t batch,
                                            std::size_t keep, std::size_t inner, std::size_t M) {
    const auto& tw = twiddles(M);
    const double norm = 1.0 / static_cast<double>(M);
    std::vector<cplx> out(batch * keep * inner, cplx(0.0, 0.0));
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = g.data() + b * M * inner;
        cplx* dst = out.data() + b * keep * inner;
        for (std::size_t k = 0; k < keep; ++k) {
            const double wk = ((2 * k) % M == 0 ? 1.0 : 2.0) * norm;
            cplx* drow = dst + k * inner;
            for (std::size_t x = 0; x < M; ++x) {
                const cplx e = wk * tw[(k * x) % M];  // wk * e^{-2 pi i k x / M}
                const double* srow = src + x * inner;
                for (std::size_t i = 0; i < inner; ++i) drow[i] += srow[i] * e;
            }
        }
    }
    return out;
}

std::size_t hermitian_mode_cap(std::size_t M) { return M / 2 + 1; }

}  // namespace

Tensor dft1d_modes(const Tensor& x, std::size_t m) {
    if (!x.is_real()) throw ShapeError("dft1d_modes expects a real signal");
    const AxisView v = axis_view(x.shape(), 1);
    if (m < 1 || m > v.len) {
        throw ConfigError("mode count " + std::to_string(m) + " out of range for length " +
                          std::to_string(v.len));
    }
    Tensor result = Tensor::cfrom(with_axis(x.shape(), 1, m), partial_dft_real(x.data(), v, m));

    const int nx = x.node();
    const Shape in_shape = x.shape();
    auto fn = [nx, in_shape, v, m](const Tensor& g, const Tape::Accumulator& accum) {
        if (nx < 0) return;
        // gx[x,c] = Re(sum_{k<m} g[k,c] e^{+2 pi i k x / M})
        const auto& tw = twiddles(v.len);
        const auto& gd = g.cdata();
        std::vector<double> gx(shape_numel(in_shape), 0.0);
        for (std::size_t b = 0; b < v.batch; ++b) {
            const cplx* src = gd.data() + b * m * v.inner;
            double* dst = gx.data() + b * v.len * v.inner;
            for (std::size_t k = 0; k < m; ++k) {
                const cplx* srow = src + k * v.inner;
                for (std::size_t x = 0; x < v.len; ++x) {
                    const cplx e = std::conj(tw[(k * x) % v.len]);
                    double* drow = dst + x * v.inner;
                    for (std::size_t i = 0; i < v.inner; ++i) {
                        drow[i] += srow[i].real() * e.real() - srow[i].imag() * e.imag();
                    }
                }
            }
        }
        accum(nx, Tensor::from(in_shape, std::move(gx)));
    };
    const int node = detail::maybe_record("dft1d_modes", {&x}, std::move(fn));
    return with_node(result, node);
}

Tensor idft1d_real_from_modes(const Tensor& s, std::size_t M) {
    if (s.is_real()) throw ShapeError("idft1d_real_from_modes expects a complex spectrum");
    const AxisView v = axis_view(s.shape(), 1);
    if (v.len > hermitian_mode_cap(M)) {
        throw ConfigError("retained modes " + std::to_string(v.len) +
                          " exceed the conjugate-completion bound floor(M/2)+1 for M=" +
                          std::to_string(M));
    }
    Tensor result = Tensor::from(with_axis(s.shape(), 1, M),
                                 partial_idft_real(s.cdata(), v.batch, v.len, v.inner, M));

    const int ns = s.node();
    const Shape in_shape = s.shape();
    auto fn = [ns, in_shape, v, M](const Tensor& g, const Tape::Accumulator& accum) {
        if (ns < 0) return;
        accum(ns, Tensor::cfrom(in_shape,
                                partial_idft_real_adjoint(g.data(), v.batch, v.len, v.inner, M)));
    };
    const int node = detail::maybe_record("idft1d_real_from_modes", {&s}, std::move(fn));
    return with_node(result, node);
}

// ---- 2D --------------------------------------------------------------------

namespace {

AxisView axis_view_2d_w(const Shape& s) { return axis_view(s, 1); }   // W axis
AxisView axis_view_2d_h(const Shape& s) { return axis_view(s, 2); }   // H axis

std::vector<cplx> transform_2d(const std::vector<cplx>& in, const Shape& shape, int sign,
                               double norm) {
    // W axis first (inner = d), then H axis (inner = W*d).
    const AxisView vw = axis_view_2d_w(shape);
    std::vector<cplx> tmp = transform_axis(in, vw, vw.len, vw.len, sign, 1.0, true);
    const AxisView vh = axis_view_2d_h(shape);
    return transform_axis(tmp, vh, vh.len, vh.len, sign, norm, true);
}

}  // namespace

Tensor dft2d(const Tensor& x) {
    if (x.rank() < 3) throw ShapeError("dft2d input must be [..., H, W, d], got " + shape_str(x.shape()));
    Tensor result = Tensor::cfrom(x.shape(), transform_2d(to_cplx(x), x.shape(), -1, 1.0));

    const int nx = x.node();
    const bool real_in = x.is_real();
    const Shape in_shape = x.shape();
    auto fn = [nx, real_in, in_shape](const Tensor& g, const Tape::Accumulator& accum) {
        if (nx < 0) return;
        std::vector<cplx> gi = transform_2d(g.cdata(), in_shape, +1, 1.0);
        if (real_in) {
            accum(nx, Tensor::from(in_shape, re_of(gi)));
        } else {
            accum(nx, Tensor::cfrom(in_shape, std::move(gi)));
        }
    };
    const int node = detail::maybe_record("dft2d", {&x}, std::move(fn));
    return with_node(result, node);
}

Tensor idft2d(const Tensor& s) {
    if (s.is_real()) throw ShapeError("idft2d expects a complex spectrum");
    if (s.rank() < 3) throw ShapeError("idft2d input must be [..., H, W, d]");
    const AxisView vh = axis_view_2d_h(s.shape());
    const AxisView vw = axis_view_2d_w(s.shape());
    const double norm = 1.0 / static_cast<double>(vh.len * vw.len);
    Tensor result = Tensor::cfrom(s.shape(), transform_2d(s.cdata(), s.shape(), +1, norm));

    const int ns = s.node();
    const Shape in_shape = s.shape();
    auto fn = [ns, in_shape, norm](const Tensor& g, const Tape::Accumulator& accum) {
        if (ns < 0) return;
        accum(ns, Tensor::cfrom(in_shape, transform_2d(g.cdata(), in_shape, -1, norm)));
    };
    const int node = detail::maybe_record("idft2d", {&s}, std::move(fn));
    return with_node(result, node);
}

Tensor truncate_modes2d(const Tensor& s, std::size_t mh, std::size_t mw) {
    if (s.is_real()) throw ShapeError("truncate_modes2d expects a complex spectrum");
    if (s.rank() < 3) throw ShapeError("truncate_modes2d input must be [..., H, W, d]");
    const AxisView vh = axis_view_2d_h(s.shape());
    const AxisView vw = axis_view_2d_w(s.shape());
    if (mh < 1 || mh > vh.len || mw < 1 || mw > vw.len) {
        throw ConfigError("2D mode counts (" + std::to_string(mh) + "," + std::to_string(mw) +
                          ") out of range for " + shape_str(s.shape()));
    }
    const std::size_t H = vh.len, W = vw.len, d = vw.inner;
    std::vector<cplx> out = s.cdata();
    const std::size_t batch = vh.batch;
    for (std::size_t b = 0; b < batch; ++b) {
        cplx* blk = out.data() + b * H * W * d;
        for (std::size_t r = 0; r < H; ++r) {
            for (std::size_t c = 0; c < W; ++c) {
                if (r < mh && c < mw) continue;
                cplx* cell = blk + (r * W + c) * d;
                std::fill(cell, cell + d, cplx(0.0, 0.0));
            }
        }
    }
    Tensor result = Tensor::cfrom(s.shape(), std::move(out));

    const int ns = s.node();
    auto fn = [ns, mh, mw](const Tensor& g, const Tape::Accumulator& accum) {
        if (ns >= 0) accum(ns, truncate_modes2d(g, mh, mw));
    };
    const int node = detail::maybe_record("truncate_modes2d", {&s}, std::move(fn));
    return with_node(result, node);
}

Tensor frequency_mix2d(const Tensor& s, const Tensor& w) {
    if (s.is_real() || w.is_real()) throw ShapeError("frequency_mix2d expects complex tensors");
    if (w.rank() != 4 || w.shape()[2] != w.shape()[3]) {
        throw ShapeError("frequency_mix2d weights must be [mh,mw,d,d], got " + shape_str(w.shape()));
    }
    if (s.rank() < 3) throw ShapeError("frequency_mix2d input must be [..., H, W, d]");
    const AxisView vh = axis_view_2d_h(s.shape());
    const AxisView vw = axis_view_2d_w(s.shape());
    const std::size_t mh = w.shape()[0], mw = w.shape()[1], d = w.shape()[2];
    if (vw.inner != d || mh > vh.len || mw > vw.len) {
        throw ShapeError("frequency_mix2d shape mismatch: spectrum " + shape_str(s.shape()) +
                         ", weights " + shape_str(w.shape()));
    }
    const std::size_t H = vh.len, W = vw.len, batch = vh.batch;
    const auto& sd = s.cdata();
    const auto& wd = w.cdata();
    std::vector<cplx> out(sd.size(), cplx(0.0, 0.0));
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t kh = 0; kh < mh; ++kh) {
            for (std::size_t kw = 0; kw < mw; ++kw) {
                const cplx* srow = sd.data() + ((b * H + kh) * W + kw) * d;
                cplx* drow = out.data() + ((b * H + kh) * W + kw) * d;
                const cplx* wk = wd.data() + (kh * mw + kw) * d * d;
                for (std::size_t c = 0; c < d; ++c) {
                    const cplx sv = srow[c];
                    for (std::size_t c2 = 0; c2 < d; ++c2) drow[c2] += sv * wk[c * d + c2];
                }
            }
        }
    }
    Tensor result = Tensor::cfrom(s.shape(), std::move(out));

    const int ns = s.node();
    const int nw = w.node();
    const Tensor sv = s.detached();
    const Tensor wv = w.detached();
    auto fn = [ns, nw, sv, wv, batch, H, W, mh, mw, d](const Tensor& g,
                                                       const Tape::Accumulator& accum) {
        const auto& gd = g.cdata();
        if (ns >= 0) {
            const auto& wd2 = wv.cdata();
            std::vector<cplx> gs(sv.cdata().size(), cplx(0.0, 0.0));
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t kh = 0; kh < mh; ++kh) {
                    for (std::size_t kw = 0; kw < mw; ++kw) {
                        const cplx* grow = gd.data() + ((b * H + kh) * W + kw) * d;
                        cplx* drow = gs.data() + ((b * H + kh) * W + kw) * d;
                        const cplx* wk = wd2.data() + (kh * mw + kw) * d * d;
                        for (std::size_t c = 0; c < d; ++c) {
                            cplx acc(0.0, 0.0);
                            for (std::size_t c2 = 0; c2 < d; ++c2) {
                                acc += grow[c2] * std::conj(wk[c * d + c2]);
                            }
                            drow[c] += acc;
                        }
                    }
                }
            }
            accum(ns, Tensor::cfrom(sv.shape(), std::move(gs)));
        }
        if (nw >= 0) {
            const auto& sd2 = sv.cdata();
            std::vector<cplx> gw(mh * mw * d * d, cplx(0.0, 0.0));
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t kh = 0; kh < mh; ++kh) {
                    for (std::size_t kw = 0; kw < mw; ++kw) {
                        const cplx* srow = sd2.data() + ((b * H + kh) * W + kw) * d;
                        const cplx* grow = gd.data() + ((b * H + kh) * W + kw) * d;
                        cplx* wk = gw.data() + (kh * mw + kw) * d * d;
                        for (std::size_t c = 0; c < d; ++c) {
                            const cplx sc = std::conj(srow[c]);
                            for (std::size_t c2 = 0; c2 < d; ++c2) wk[c * d + c2] += sc * grow[c2];
                        }
                    }
                }
            }
            accum(nw, Tensor::cfrom(wv.shape(), std::move(gw)));
        }
    };
    const int node = detail::maybe_record("frequency_mix2d", {&s, &w}, std::move(fn));
    return with_node(result, node);
}

namespace {

Shape corner_shape(const Shape& s, std::size_t mh, std::size_t mw) {
    Shape out = s;
    out[out.size() - 3] = mh;
    out[out.size() - 2] = mw;
    return out;
}

}  // namespace

Tensor dft2d_modes(const Tensor& x, std::size_t mh, std::size_t mw) {
    if (!x.is_real()) throw ShapeError("dft2d_modes expects a real field");
    if (x.rank() < 3) throw ShapeError("dft2d_modes input must be [..., H, W, d]");
    const AxisView vh = axis_view_2d_h(x.shape());
    const AxisView vw = axis_view_2d_w(x.shape());
    const std::size_t H = vh.len, W = vw.len, d = vw.inner;
    if (mh < 1 || mh > H || mw < 1 || mw > W) {
        throw ConfigError("2D mode counts (" + std::to_string(mh) + "," + std::to_string(mw) +
                          ") out of range for " + shape_str(x.shape()));
    }
    // Stage 1: partial transform along W; stage 2: partial transform along H.
    std::vector<cplx> tmp = partial_dft_real(x.data(), vw, mw);  // [*, H, mw, d] per batch block
    Shape tmp_shape = with_axis(x.shape(), 1, mw);
    const AxisView vth = axis_view_2d_h(tmp_shape);
    std::vector<cplx> out = transform_axis(tmp, vth, H, mh, -1, 1.0, false);
    Tensor result = Tensor::cfrom(corner_shape(x.shape(), mh, mw), std::move(out));

    const int nx = x.node();
    const Shape in_shape = x.shape();
    auto fn = [nx, in_shape, H, W, d, mh, mw, vh, vw](const Tensor& g,
                                                      const Tape::Accumulator& accum) {
        if (nx < 0) return;
        // gx[r,c] = Re( sum_{kh<mh,kw<mw} g[kh,kw] e^{+2 pi i (kh r/H + kw c/W)} )
        const auto& gd = g.cdata();
        // Inverse-direction stage along H first: [*, mh, mw, d] -> [*, H, mw, d].
        Shape gshape = corner_shape(in_shape, mh, mw);
        const AxisView vgh = axis_view_2d_h(gshape);
        std::vector<cplx> tmp2 = transform_axis(gd, vgh, H, H, +1, 1.0, false);
        // Then along W with real projection.
        const std::size_t batch = vh.batch;
        const auto& tww = twiddles(W);
        std::vector<double> gx(shape_numel(in_shape), 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t r = 0; r < H; ++r) {
                const cplx* src = tmp2.data() + (b * H + r) * mw * d;
                double* dst = gx.data() + (b * H + r) * W * d;
                for (std::size_t kw = 0; kw < mw; ++kw) {
                    const cplx* srow = src + kw * d;
                    for (std::size_t c = 0; c < W; ++c) {
                        const cplx e = std::conj(tww[(kw * c) % W]);
                        double* drow = dst + c * d;
                        for (std::size_t i = 0; i < d; ++i) {
                            drow[i] += srow[i].real() * e.real() - srow[i].imag() * e.imag();
                        }
                    }
                }
            }
        }
        accum(nx, Tensor::from(in_shape, std::move(gx)));
    };
    const int node = detail::maybe_record("dft2d_modes", {&x}, std::move(fn));
    return with_node(result, node);
}

Tensor idft2d_real_from_modes(const Tensor& s, std::size_t H, std::size_t W) {
    if (s.is_real()) throw ShapeError("idft2d_real_from_modes expects a complex spectrum");
    if (s.rank() < 3) throw ShapeError("idft2d_real_from_modes input must be [..., mh, mw, d]");
    const AxisView vh = axis_view_2d_h(s.shape());
    const AxisView vw = axis_view_2d_w(s.shape());
    const std::size_t mh = vh.len, mw = vw.len, d = vw.inner;
    if (mh > hermitian_mode_cap(H) || mw > hermitian_mode_cap(W)) {
        throw ConfigError("corner block (" + std::to_string(mh) + "," + std::to_string(mw) +
                          ") exceeds the conjugate-completion bound for grid " + std::to_string(H) +
                          "x" + std::to_string(W));
    }
    const std::size_t batch = vh.batch;
    const auto& sd = s.cdata();
    const auto& twh = twiddles(H);
    const auto& tww = twiddles(W);
    const double norm = 1.0 / static_cast<double>(H * W);

    // x = 2 Re(T)/HW with T the corner partial inverse, minus one copy of each
    // self-conjugate mode which the doubling counted twice.
    Shape out_shape = s.shape();
    out_shape[out_shape.size() - 3] = H;
    out_shape[out_shape.size() - 2] = W;
    std::vector<double> out(shape_numel(out_shape), 0.0);
    std::vector<cplx> tmp(H * mw * d);
    for (std::size_t b = 0; b < batch; ++b) {
        const cplx* src = sd.data() + b * mh * mw * d;
        // Stage along H: tmp[r,kw,i] = sum_kh s[kh,kw,i] e^{+2 pi i kh r/H}
        std::fill(tmp.begin(), tmp.end(), cplx(0.0, 0.0));
        for (std::size_t kh = 0; kh < mh; ++kh) {
            for (std::size_t r = 0; r < H; ++r) {
                const cplx e = std::conj(twh[(kh * r) % H]);
                const cplx* srow = src + kh * mw * d;
                cplx* trow = tmp.data() + r * mw * d;
                for (std::size_t j = 0; j < mw * d; ++j) trow[j] += srow[j] * e;
            }
        }
        // Stage along W with 2 Re projection.
        double* dst = out.data() + b * H * W * d;
        for (std::size_t r = 0; r < H; ++r) {
            const cplx* trow = tmp.data() + r * mw * d;
            double* drow0 = dst + r * W * d;
            for (std::size_t kw = 0; kw < mw; ++kw) {
                const cplx* srow = trow + kw * d;
                for (std::size_t c = 0; c < W; ++c) {
                    const cplx e = std::conj(tww[(kw * c) % W]);
                    double* drow = drow0 + c * d;
                    for (std::size_t i = 0; i < d; ++i) {
                        drow[i] += 2.0 * norm *
                                   (srow[i].real() * e.real() - srow[i].imag() * e.imag());
                    }
                }
            }
        }
        // Self-conjugate corrections.
        for (std::size_t kh = 0; kh < mh; ++kh) {
            if ((2 * kh) % H != 0) continue;
            for (std::size_t kw = 0; kw < mw; ++kw) {
                if ((2 * kw) % W != 0) continue;
                const cplx* srow = src + (kh * mw + kw) * d;
                for (std::size_t r = 0; r < H; ++r) {
                    const double eh = std::conj(twh[(kh * r) % H]).real();  // +/-1
                    for (std::size_t c = 0; c < W; ++c) {
                        const double ew = std::conj(tww[(kw * c) % W]).real();
                        double* drow = dst + (r * W + c) * d;
                        for (std::size_t i = 0; i < d; ++i) {
                            drow[i] -= norm * srow[i].real() * eh * ew;
                        }
                    }
                }
            }
        }
    }
    Tensor result = Tensor::from(out_shape, std::move(out));

    const int ns = s.node();
    const Shape in_shape = s.shape();
    auto fn = [ns, in_shape, batch, mh, mw, d, H, W, norm](const Tensor& g,
                                                           const Tape::Accumulator& accum) {
        if (ns < 0) return;
        // gs[kh,kw] = w_{kh,kw}/(HW) * sum_{r,c} g[r,c] e^{-2 pi i (kh r/H + kw c/W)}
        const auto& gd = g.data();
        const auto& twh = twiddles(H);
        const auto& tww = twiddles(W);
        std::vector<cplx> gs(batch * mh * mw * d, cplx(0.0, 0.0));
        std::vector<cplx> tmp2(mh * W * d);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* src = gd.data() + b * H * W * d;
            // Stage along H: tmp2[kh,c,i] = sum_r g[r,c,i] e^{-2 pi i kh r/H}
            std::fill(tmp2.begin(), tmp2.end(), cplx(0.0, 0.0));
            for (std::size_t kh = 0; kh < mh; ++kh) {
                cplx* trow0 = tmp2.data() + kh * W * d;
                for (std::size_t r = 0; r < H; ++r) {
                    const cplx e = twh[(kh * r) % H];
                    const double* srow = src + r * W * d;
                    for (std::size_t j = 0; j < W * d; ++j) trow0[j] += srow[j] * e;
                }
            }
            cplx* dst = gs.data() + b * mh * mw * d;
            for (std::size_t kh = 0; kh < mh; ++kh) {
                const bool sh = (2 * kh) % H == 0;
                for (std::size_t kw = 0; kw < mw; ++kw) {
                    const double wk = (sh && (2 * kw) % W == 0) ? 1.0 : 2.0;
                    cplx* drow = dst + (kh * mw + kw) * d;
                    for (std::size_t c = 0; c < W; ++c) {
                        const cplx e = (wk * norm) * tww[(kw * c) % W];
                        const cplx* trow = tmp2.data() + (kh * W + c) * d;
                        for (std::size_t i = 0; i < d; ++i) drow[i] += trow[i] * e;
                    }
                }
            }
        }
        // The doubled formula discards Im(s) on self-conjugate modes; the
        // adjoint must therefore zero those imaginary parts.
        for (std::size_t b = 0; b < batch; ++b) {
            cplx* dst = gs.data() + b * mh * mw * d;
            for (std::size_t kh = 0; kh < mh; ++kh) {
                if ((2 * kh) % H != 0) continue;
                for (std::size_t kw = 0; kw < mw; ++kw) {
                    if ((2 * kw) % W != 0) continue;
                    cplx* drow = dst + (kh * mw + kw) * d;
                    for (std::size_t i = 0; i < d; ++i) drow[i] = cplx(drow[i].real(), 0.0);
                }
            }
        }
        accum(ns, Tensor::cfrom(in_shape, std::move(gs)));
    };
    const int node = detail::maybe_record("idft2d_real_from_modes", {&s}, std::move(fn));
    return with_node(result, node);
}

}  // namespace pfr
