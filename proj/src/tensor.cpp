#include "pfr/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <sstream>

#include "op_utils.hpp"

namespace pfr {

namespace {

thread_local Tape* tl_active_tape = nullptr;

}  // namespace

Tensor with_node(const Tensor& t, int node) {
    Tensor out = t;
    out.node_ = node;
    return out;
}

// ---- shapes ---------------------------------------------------------------

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
        }
        out[r - 1 - i] = std::max(da, db);
    }
    return out;
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() {
    rdata_ = std::make_shared<const std::vector<double>>(1, 0.0);
}

std::size_t Tensor::size() const { return shape_numel(shape_); }

Tensor Tensor::zeros(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::czeros(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return cfrom(std::move(shape), std::vector<cplx>(n, cplx(0.0, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return from(Shape{}, {value}); }

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = Dtype::Real64;
    t.rdata_ = std::make_shared<const std::vector<double>>(std::move(values));
    t.cdata_.reset();
    return t;
}

Tensor Tensor::cfrom(Shape shape, std::vector<cplx> values) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = Dtype::Complex128;
    t.cdata_ = std::make_shared<const std::vector<cplx>>(std::move(values));
    t.rdata_.reset();
    return t;
}

const std::vector<double>& Tensor::data() const {
    if (dtype_ != Dtype::Real64) throw UsageError("real data requested from a complex tensor");
    return *rdata_;
}

const std::vector<cplx>& Tensor::cdata() const {
    if (dtype_ != Dtype::Complex128) throw UsageError("complex data requested from a real tensor");
    return *cdata_;
}

double Tensor::item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape_));
    return data()[0];
}

std::size_t Tensor::offset(const std::vector<std::size_t>& idx) const {
    if (idx.size() != shape_.size()) {
        throw ShapeError("index rank " + std::to_string(idx.size()) + " vs shape " +
                         shape_str(shape_));
    }
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= shape_[i]) throw ShapeError("index out of range in " + shape_str(shape_));
        off = off * shape_[i] + idx[i];
    }
    return off;
}

double Tensor::at(const std::vector<std::size_t>& idx) const { return data()[offset(idx)]; }

Tensor Tensor::detached() const {
    Tensor out = *this;
    out.node_ = -1;
    return out;
}

bool has_nonfinite(const Tensor& t) {
    if (t.is_real()) {
        for (double v : t.data()) {
            if (!std::isfinite(v)) return true;
        }
    } else {
        for (const cplx& v : t.cdata()) {
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return true;
        }
    }
    return false;
}

// ---- Tape -----------------------------------------------------------------

Tape* Tape::active() { return tl_active_tape; }

Tape::Scope::Scope(Tape& tape) : prev_(tl_active_tape) { tl_active_tape = &tape; }
Tape::Scope::~Scope() { tl_active_tape = prev_; }

namespace {

/// Suspends recording for the duration of a backward sweep.
struct TapeSuspend {
    Tape* prev;
    TapeSuspend() : prev(tl_active_tape) { tl_active_tape = nullptr; }
    ~TapeSuspend() { tl_active_tape = prev; }
};

void add_into(std::optional<Tensor>& slot, const Tensor& g) {
    if (!slot) {
        slot = g.detached();
        return;
    }
    const Tensor& cur = *slot;
    if (cur.shape() != g.shape() || cur.dtype() != g.dtype()) {
        throw UsageError("gradient accumulation shape/dtype mismatch: " + shape_str(cur.shape()) +
                         " vs " + shape_str(g.shape()));
    }
    if (cur.is_real()) {
        std::vector<double> out = cur.data();
        const auto& add = g.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += add[i];
        slot = Tensor::from(cur.shape(), std::move(out));
    } else {
        std::vector<cplx> out = cur.cdata();
        const auto& add = g.cdata();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += add[i];
        slot = Tensor::cfrom(cur.shape(), std::move(out));
    }
}

}  // namespace

Tensor Tape::watch(const Tensor& t) {
    if (t.tracked()) throw UsageError("watch() on a tensor already recorded on a tape");
    nodes_.push_back(Node{"leaf", {}, nullptr, t.shape(), t.dtype()});
    return with_node(t, static_cast<int>(nodes_.size()) - 1);
}

int Tape::record(const char* op, std::vector<int> inputs, BackwardFn backward) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(backward), {}, Dtype::Real64});
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int node, const Tensor& g) {
    add_into(grads_[static_cast<std::size_t>(node)], g);
}

void Tape::backward(const Tensor& loss) {
    if (!loss.is_real() || loss.size() != 1) {
        throw UsageError("backward() requires a real scalar loss, got shape " +
                         shape_str(loss.shape()));
    }
    if (!loss.tracked() || loss.node() >= static_cast<int>(nodes_.size())) {
        throw UsageError("loss is not recorded on this tape");
    }
    TapeSuspend suspend;
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[static_cast<std::size_t>(loss.node())] = Tensor::full(loss.shape(), 1.0);
    Accumulator accum = [this](int node, const Tensor& g) { accumulate(node, g); };
    for (int i = loss.node(); i >= 0; --i) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.backward) continue;
        const auto& slot = grads_[static_cast<std::size_t>(i)];
        if (!slot) continue;
        n.backward(*slot, accum);
    }
}

Tensor Tape::grad(const Tensor& leaf) const {
    if (!leaf.tracked() || leaf.node() >= static_cast<int>(nodes_.size())) {
        throw UsageError("grad() on a tensor not recorded on this tape");
    }
    const auto& slot = grads_[static_cast<std::size_t>(leaf.node())];
    if (slot) return *slot;
    return leaf.is_real() ? Tensor::zeros(leaf.shape()) : Tensor::czeros(leaf.shape());
}

// ---- broadcast helpers ------------------------------------------------------

namespace {

/// Row-major strides, 0 on axes broadcast up to `out` rank/extents.
std::vector<std::size_t> bcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t axis_in = in.size() - 1 - i;
        const std::size_t axis_out = out.size() - 1 - i;
        strides[axis_out] = (in[axis_in] == 1 && out[axis_out] != 1) ? 0 : stride;
        stride *= in[axis_in];
    }
    return strides;
}

}  // namespace

namespace detail {

/// Sum g over the axes that were broadcast to reach g.shape from target.
Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g.detached();
    const Shape& gs = g.shape();
    const std::vector<std::size_t> tstr = bcast_strides(target, gs);
    const std::size_t n = g.size();
    std::vector<std::size_t> idx(gs.size(), 0);
    if (g.is_real()) {
        std::vector<double> out(shape_numel(target), 0.0);
        const auto& gd = g.data();
        for (std::size_t flat = 0; flat < n; ++flat) {
            std::size_t off = 0;
            for (std::size_t a = 0; a < gs.size(); ++a) off += idx[a] * tstr[a];
            out[off] += gd[flat];
            for (std::size_t a = gs.size(); a-- > 0;) {
                if (++idx[a] < gs[a]) break;
                idx[a] = 0;
            }
        }
        return Tensor::from(target, std::move(out));
    }
    std::vector<cplx> out(shape_numel(target), cplx(0.0, 0.0));
    const auto& gd = g.cdata();
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t off = 0;
        for (std::size_t a = 0; a < gs.size(); ++a) off += idx[a] * tstr[a];
        out[off] += gd[flat];
        for (std::size_t a = gs.size(); a-- > 0;) {
            if (++idx[a] < gs[a]) break;
            idx[a] = 0;
        }
    }
    return Tensor::cfrom(target, std::move(out));
}

int maybe_record(const char* op, std::initializer_list<const Tensor*> inputs,
                 Tape::BackwardFn fn) {
    Tape* t = tl_active_tape;
    if (!t) return -1;
    bool any = false;
    std::vector<int> ids;
    for (const Tensor* in : inputs) {
        if (in->tracked()) any = true;
        ids.push_back(in->node());
    }
    if (!any) return -1;
    return t->record(op, std::move(ids), std::move(fn));
}

}  // namespace detail

using detail::maybe_record;
using detail::reduce_to_shape;

// ---- binary elementwise -----------------------------------------------------

namespace {

template <typename T, typename F>
std::vector<T> broadcast_apply(const std::vector<T>& a, const Shape& sa, const std::vector<T>& b,
                               const Shape& sb, const Shape& out, F&& f) {
    const std::size_t n = shape_numel(out);
    std::vector<T> r(n);
    if (sa == out && sb == out) {
        for (std::size_t i = 0; i < n; ++i) r[i] = f(a[i], b[i]);
        return r;
    }
    const auto astr = bcast_strides(sa, out);
    const auto bstr = bcast_strides(sb, out);
    std::vector<std::size_t> idx(out.size(), 0);
    std::size_t aoff = 0, boff = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        r[flat] = f(a[aoff], b[boff]);
        for (std::size_t ax = out.size(); ax-- > 0;) {
            ++idx[ax];
            aoff += astr[ax];
            boff += bstr[ax];
            if (idx[ax] < out[ax]) break;
            aoff -= astr[ax] * out[ax];
            boff -= bstr[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    return r;
}

enum class BinKind { Add, Mul };

Tensor binary_op(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
    if (a.dtype() != b.dtype()) {
        throw ShapeError(std::string(name) + ": dtype mismatch");
    }
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    Tensor result;
    if (a.is_real()) {
        auto vals = kind == BinKind::Add
                        ? broadcast_apply<double>(a.data(), a.shape(), b.data(), b.shape(),
                                                  out_shape, [](double x, double y) { return x + y; })
                        : broadcast_apply<double>(a.data(), a.shape(), b.data(), b.shape(),
                                                  out_shape, [](double x, double y) { return x * y; });
        result = Tensor::from(out_shape, std::move(vals));
    } else {
        auto vals = kind == BinKind::Add
                        ? broadcast_apply<cplx>(a.cdata(), a.shape(), b.cdata(), b.shape(),
                                                out_shape, [](cplx x, cplx y) { return x + y; })
                        : broadcast_apply<cplx>(a.cdata(), a.shape(), b.cdata(), b.shape(),
                                                out_shape, [](cplx x, cplx y) { return x * y; });
        result = Tensor::cfrom(out_shape, std::move(vals));
    }

    const int na = a.node();
    const int nb = b.node();
    Tape::BackwardFn fn;
    if (kind == BinKind::Add) {
        const Shape sa = a.shape();
        const Shape sb = b.shape();
        fn = [na, nb, sa, sb](const Tensor& g, const Tape::Accumulator& accum) {
            if (na >= 0) accum(na, reduce_to_shape(g, sa));
            if (nb >= 0) accum(nb, reduce_to_shape(g, sb));
        };
    } else {
        const Tensor av = a.detached();
        const Tensor bv = b.detached();
        fn = [na, nb, av, bv](const Tensor& g, const Tape::Accumulator& accum) {
            // Wirtinger packed convention for complex: d/da (a*b) pairs with conj(b).
            if (av.is_real()) {
                if (na >= 0) accum(na, reduce_to_shape(mul(g, bv), av.shape()));
                if (nb >= 0) accum(nb, reduce_to_shape(mul(g, av), bv.shape()));
            } else {
                auto conj_of = [](const Tensor& t) {
                    std::vector<cplx> v = t.cdata();
                    for (cplx& z : v) z = std::conj(z);
                    return Tensor::cfrom(t.shape(), std::move(v));
                };
                if (na >= 0) accum(na, reduce_to_shape(mul(g, conj_of(bv)), av.shape()));
                if (nb >= 0) accum(nb, reduce_to_shape(mul(g, conj_of(av)), bv.shape()));
            }
        };
    }
    const int node = maybe_record(name, {&a, &b}, std::move(fn));
    return with_node(result, node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinKind::Add, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinKind::Mul, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

// ---- unary elementwise ------------------------------------------------------

namespace {

/// Real unary op; dfn(x, fx) returns the local derivative.
template <typename F, typename DF>
Tensor unary_op(const char* name, const Tensor& x, F&& f, DF&& dfn) {
    if (!x.is_real()) throw ShapeError(std::string(name) + " requires a real tensor");
    const auto& xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
    Tensor result = Tensor::from(x.shape(), std::move(out));

    const int nx = x.node();
    const Tensor xv = x.detached();
    const Tensor fv = result;
    auto fn = [nx, xv, fv, dfn](const Tensor& g, const Tape::Accumulator& accum) {
        if (nx < 0) return;
        const auto& gd = g.data();
        const auto& xd2 = xv.data();
        const auto& fd = fv.data();
        std::vector<double> gi(gd.size());
        for (std::size_t i = 0; i < gd.size(); ++i) gi[i] = gd[i] * dfn(xd2[i], fd[i]);
        accum(nx, Tensor::from(xv.shape(), std::move(gi)));
    };
    const int node = maybe_record(name, {&x}, std::move(fn));
    return with_node(result, node);
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

Tensor neg(const Tensor& x) {
    Tensor result;
    if (x.is_real()) {
        std::vector<double> out = x.data();
        for (double& v : out) v = -v;
        result = Tensor::from(x.shape(), std::move(out));
    } else {
        std::vector<cplx> out = x.cdata();
        for (cplx& v : out) v = -v;
        result = Tensor::cfrom(x.shape(), std::move(out));
    }
    const int nx = x.node();
    auto fn = [nx](const Tensor& g, const Tape::Accumulator& accum) {
        if (nx >= 0) accum(nx, neg(g));
    };
    const int node = maybe_record("neg", {&x}, std::move(fn));
    return with_node(result, node);
}

Tensor exp_op(const Tensor& x) {
    return unary_op("exp", x, [](double v) { return std::exp(v); },
                    [](double, double f) { return f; });
}

Tensor expm1_op(const Tensor& x) {
    return unary_op("expm1", x, [](double v) { return std::expm1(v); },
                    [](double, double f) { return f + 1.0; });
}

Tensor log1p_op(const Tensor& x) {
    return unary_op("log1p", x, [](double v) { return std::log1p(v); },
                    [](double v, double) { return 1.0 / (1.0 + v); });
}

Tensor reciprocal(const Tensor& x) {
    return unary_op("reciprocal", x, [](double v) { return 1.0 / v; },
                    [](double, double f) { return -f * f; });
}

Tensor abs_op(const Tensor& x) {
    return unary_op("abs", x, [](double v) { return std::abs(v); },
                    [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor silu(const Tensor& x) {
    return unary_op("silu", x, [](double v) { return v * sigmoid(v); },
                    [](double v, double) {
                        const double s = sigmoid(v);
                        return s * (1.0 + v * (1.0 - s));
                    });
}

Tensor relu(const Tensor& x) {
    return unary_op("relu", x, [](double v) { return v > 0 ? v : 0.0; },
                    [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary_op("gelu", x,
                    [&](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
                    [&](double v, double) {
                        const double phi = inv_sqrt2pi * std::exp(-0.5 * v * v);
                        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * phi;
                    });
}

Tensor softplus(const Tensor& x) {
    return unary_op("softplus", x,
                    [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
                    [](double v, double) { return sigmoid(v); });
}

Tensor scale(const Tensor& x, double c) {
    Tensor result;
    if (x.is_real()) {
        std::vector<double> out = x.data();
        for (double& v : out) v *= c;
        result = Tensor::from(x.shape(), std::move(out));
    } else {
        std::vector<cplx> out = x.cdata();
        for (cplx& v : out) v *= c;
        result = Tensor::cfrom(x.shape(), std::move(out));
    }
    const int nx = x.node();
    auto fn = [nx, c](const Tensor& g, const Tape::Accumulator& accum) {
        if (nx >= 0) accum(nx, scale(g, c));
    };
    const int node = maybe_record("scale", {&x}, std::move(fn));
    return with_node(result, node);
}

// ---- matmul -----------------------------------------------------------------

namespace {

/// C[p,r] += sum_k opA(A)[p,k] * opB(B)[k,r]; A,B raw row-major blocks.
template <typename T, bool TransA, bool TransB, bool ConjA, bool ConjB>
void gemm_block(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
    auto conj_if = [](T v, bool flag) {
        if constexpr (std::is_same_v<T, cplx>) {
            return flag ? std::conj(v) : v;
        } else {
            (void)flag;
            return v;
        }
    };
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t k = 0; k < q; ++k) {
            const T aik = conj_if(TransA ? a[k * p + i] : a[i * q + k], ConjA);
            T* crow = c + i * r;
            const T* brow = TransB ? nullptr : b + k * r;
            if constexpr (!TransB) {
                for (std::size_t j = 0; j < r; ++j) crow[j] += aik * conj_if(brow[j], ConjB);
            } else {
                for (std::size_t j = 0; j < r; ++j) crow[j] += aik * conj_if(b[j * q + k], ConjB);
            }
        }
    }
}

struct MatShapes {
    std::size_t batch;  // number of matrix pairs
    std::size_t p, q, r;
    bool shared_b;  // b is rank-2, reused across the batch
    Shape out_shape;
};

MatShapes matmul_shapes(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul requires rank >= 2: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const std::size_t p = sa[sa.size() - 2];
    const std::size_t q = sa[sa.size() - 1];
    const std::size_t qb = sb[sb.size() - 2];
    const std::size_t r = sb[sb.size() - 1];
    if (q != qb) {
        throw ShapeError("matmul inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
    }
    MatShapes m;
    m.p = p;
    m.q = q;
    m.r = r;
    if (b.rank() == 2) {
        m.shared_b = true;
        m.batch = 1;
        for (std::size_t i = 0; i + 2 < sa.size(); ++i) m.batch *= sa[i];
        m.out_shape = sa;
        m.out_shape.back() = r;
    } else {
        if (sa.size() != sb.size() ||
            !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
            throw ShapeError("matmul batch dims differ: " + shape_str(sa) + " x " + shape_str(sb));
        }
        m.shared_b = false;
        m.batch = 1;
        for (std::size_t i = 0; i + 2 < sa.size(); ++i) m.batch *= sa[i];
        m.out_shape = sa;
        m.out_shape.back() = r;
    }
    return m;
}

template <typename T>
std::vector<T> matmul_impl(const std::vector<T>& a, const std::vector<T>& b, const MatShapes& m) {
    std::vector<T> c(m.batch * m.p * m.r, T{});
    for (std::size_t n = 0; n < m.batch; ++n) {
        const T* ab = a.data() + n * m.p * m.q;
        const T* bb = b.data() + (m.shared_b ? 0 : n * m.q * m.r);
        gemm_block<T, false, false, false, false>(ab, bb, c.data() + n * m.p * m.r, m.p, m.q, m.r);
    }
    return c;
}

/// gA = gC * B^T (conjugated for complex), gB = A^T * gC, batched like forward.
template <typename T>
void matmul_backward(const std::vector<T>& a, const std::vector<T>& b, const std::vector<T>& gc,
                     const MatShapes& m, std::vector<T>* ga, std::vector<T>* gb) {
    if (ga) ga->assign(a.size(), T{});
    if (gb) gb->assign(b.size(), T{});
    for (std::size_t n = 0; n < m.batch; ++n) {
        const T* ab = a.data() + n * m.p * m.q;
        const T* bb = b.data() + (m.shared_b ? 0 : n * m.q * m.r);
        const T* gcb = gc.data() + n * m.p * m.r;
        if (ga) {
            // gA[p,q] = gC[p,r] * conj(B)[q,r]^T
            gemm_block<T, false, true, false, true>(gcb, bb, ga->data() + n * m.p * m.q, m.p, m.r,
                                                    m.q);
        }
        if (gb) {
            T* gbb = gb->data() + (m.shared_b ? 0 : n * m.q * m.r);
            // gB[q,r] = conj(A)[p,q]^T * gC[p,r]
            gemm_block<T, true, false, true, false>(ab, gcb, gbb, m.q, m.p, m.r);
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dtype() != b.dtype()) throw ShapeError("matmul dtype mismatch");
    const MatShapes m = matmul_shapes(a, b);
    Tensor result;
    if (a.is_real()) {
        result = Tensor::from(m.out_shape, matmul_impl<double>(a.data(), b.data(), m));
    } else {
        result = Tensor::cfrom(m.out_shape, matmul_impl<cplx>(a.cdata(), b.cdata(), m));
    }

    const int na = a.node();
    const int nb = b.node();
    const Tensor av = a.detached();
    const Tensor bv = b.detached();
    auto fn = [na, nb, av, bv, m](const Tensor& g, const Tape::Accumulator& accum) {
        if (av.is_real()) {
            std::vector<double> ga, gb;
            matmul_backward<double>(av.data(), bv.data(), g.data(), m, na >= 0 ? &ga : nullptr,
                                    nb >= 0 ? &gb : nullptr);
            if (na >= 0) accum(na, Tensor::from(av.shape(), std::move(ga)));
            if (nb >= 0) accum(nb, Tensor::from(bv.shape(), std::move(gb)));
        } else {
            std::vector<cplx> ga, gb;
            matmul_backward<cplx>(av.cdata(), bv.cdata(), g.cdata(), m, na >= 0 ? &ga : nullptr,
                                  nb >= 0 ? &gb : nullptr);
            if (na >= 0) accum(na, Tensor::cfrom(av.shape(), std::move(ga)));
            if (nb >= 0) accum(nb, Tensor::cfrom(bv.shape(), std::move(gb)));
        }
    };
    const int node = maybe_record("matmul", {&a, &b}, std::move(fn));
    return with_node(result, node);
}

// ---- depthwise causal conv1d --------------------------------------------------

Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel) {
    if (!x.is_real() || !kernel.is_real()) throw ShapeError("conv1d requires real tensors");
    if (x.rank() != 3) throw ShapeError("conv1d input must be [B,L,M], got " + shape_str(x.shape()));
    if (kernel.rank() != 2) {
        throw ShapeError("conv1d kernel must be [M,k], got " + shape_str(kernel.shape()));
    }
    const std::size_t B = x.shape()[0], L = x.shape()[1], M = x.shape()[2];
    const std::size_t k = kernel.shape()[1];
    if (kernel.shape()[0] != M) {
        throw ShapeError("conv1d channel mismatch: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(kernel.shape()));
    }
    if (k < 1) throw ConfigError("conv1d kernel width must be >= 1");
    if (k > L) {
        throw ConfigError("conv1d kernel width " + std::to_string(k) +
                          " exceeds sequence length " + std::to_string(L));
    }

    const auto& xd = x.data();
    const auto& wd = kernel.data();
    std::vector<double> out(B * L * M, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t jmax = std::min(k - 1, l);
            double* orow = out.data() + (b * L + l) * M;
            for (std::size_t j = 0; j <= jmax; ++j) {
                const double* xrow = xd.data() + (b * L + (l - j)) * M;
                for (std::size_t mch = 0; mch < M; ++mch) {
                    orow[mch] += wd[mch * k + j] * xrow[mch];
                }
            }
        }
    }
    Tensor result = Tensor::from(x.shape(), std::move(out));

    const int nx = x.node();
    const int nw = kernel.node();
    const Tensor xv = x.detached();
    const Tensor wv = kernel.detached();
    auto fn = [nx, nw, xv, wv, B, L, M, k](const Tensor& g, const Tape::Accumulator& accum) {
        const auto& gd = g.data();
        if (nx >= 0) {
            // gx[b,l,m] = sum_j w[m,j] * gy[b,l+j,m]
            const auto& wd2 = wv.data();
            std::vector<double> gx(B * L * M, 0.0);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t l = 0; l < L; ++l) {
                    double* gxrow = gx.data() + (b * L + l) * M;
                    const std::size_t jmax = std::min(k - 1, L - 1 - l);
                    for (std::size_t j = 0; j <= jmax; ++j) {
                        const double* grow = gd.data() + (b * L + (l + j)) * M;
                        for (std::size_t mch = 0; mch < M; ++mch) {
                            gxrow[mch] += wd2[mch * k + j] * grow[mch];
                        }
                    }
                }
            }
            accum(nx, Tensor::from(xv.shape(), std::move(gx)));
        }
        if (nw >= 0) {
            // gw[m,j] = sum_{b,l} gy[b,l,m] * x[b,l-j,m]
            const auto& xd2 = xv.data();
            std::vector<double> gw(M * k, 0.0);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t l = 0; l < L; ++l) {
                    const double* grow = gd.data() + (b * L + l) * M;
                    const std::size_t jmax = std::min(k - 1, l);
                    for (std::size_t j = 0; j <= jmax; ++j) {
                        const double* xrow = xd2.data() + (b * L + (l - j)) * M;
                        for (std::size_t mch = 0; mch < M; ++mch) {
                            gw[mch * k + j] += grow[mch] * xrow[mch];
                        }
                    }
                }
            }
            accum(nw, Tensor::from(wv.shape(), std::move(gw)));
        }
    };
    const int node = maybe_record("conv1d", {&x, &kernel}, std::move(fn));
    return with_node(result, node);
}

// ---- shape & reduction ops ----------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    }
    Tensor result = x.is_real() ? Tensor::from(shape, x.data()) : Tensor::cfrom(shape, x.cdata());
    const int nx = x.node();
    const Shape orig = x.shape();
    auto fn = [nx, orig](const Tensor& g, const Tape::Accumulator& accum) {
        if (nx >= 0) accum(nx, reshape(g, orig));
    };
    const int node = maybe_record("reshape", {&x}, std::move(fn));
    return with_node(result, node);
}

Tensor sum_all(const Tensor& x) {
    if (!x.is_real()) throw ShapeError("sum_all requires a real tensor");
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor result = Tensor::scalar(s);
    const int nx = x.node();
    const Shape orig = x.shape();
    auto fn = [nx, orig](const Tensor& g, const Tape::Accumulator& accum) {
        if (nx >= 0) accum(nx, Tensor::full(orig, g.data()[0]));
    };
    const int node = maybe_record("sum_all", {&x}, std::move(fn));
    return with_node(result, node);
}

// ---- complex packing ------------------------------------------------------------

Tensor make_complex(const Tensor& re, const Tensor& im) {
    if (!re.is_real() || !im.is_real()) throw ShapeError("make_complex requires real inputs");
    if (re.shape() != im.shape()) {
        throw ShapeError("make_complex shape mismatch: " + shape_str(re.shape()) + " vs " +
                         shape_str(im.shape()));
    }
    const auto& rd = re.data();
    const auto& id = im.data();
    std::vector<cplx> out(rd.size());
    for (std::size_t i = 0; i < rd.size(); ++i) out[i] = cplx(rd[i], id[i]);
    Tensor result = Tensor::cfrom(re.shape(), std::move(out));

    const int nr = re.node();
    const int ni = im.node();
    const Shape s = re.shape();
    auto fn = [nr, ni, s](const Tensor& g, const Tape::Accumulator& accum) {
        const auto& gd = g.cdata();
        if (nr >= 0) {
            std::vector<double> gr(gd.size());
            for (std::size_t i = 0; i < gd.size(); ++i) gr[i] = gd[i].real();
            accum(nr, Tensor::from(s, std::move(gr)));
        }
        if (ni >= 0) {
            std::vector<double> gi(gd.size());
            for (std::size_t i = 0; i < gd.size(); ++i) gi[i] = gd[i].imag();
            accum(ni, Tensor::from(s, std::move(gi)));
        }
    };
    const int node = maybe_record("make_complex", {&re, &im}, std::move(fn));
    return with_node(result, node);
}

Tensor real_part(const Tensor& c) {
    if (c.is_real()) throw ShapeError("real_part expects a complex tensor");
    const auto& cd = c.cdata();
    std::vector<double> out(cd.size());
    for (std::size_t i = 0; i < cd.size(); ++i) out[i] = cd[i].real();
    Tensor result = Tensor::from(c.shape(), std::move(out));
    const int nc = c.node();
    const Shape s = c.shape();
    auto fn = [nc, s](const Tensor& g, const Tape::Accumulator& accum) {
        if (nc < 0) return;
        const auto& gd = g.data();
        std::vector<cplx> gc(gd.size());
        for (std::size_t i = 0; i < gd.size(); ++i) gc[i] = cplx(gd[i], 0.0);
        accum(nc, Tensor::cfrom(s, std::move(gc)));
    };
    const int node = maybe_record("real_part", {&c}, std::move(fn));
    return with_node(result, node);
}

Tensor imag_part(const Tensor& c) {
    if (c.is_real()) throw ShapeError("imag_part expects a complex tensor");
    const auto& cd = c.cdata();
    std::vector<double> out(cd.size());
    for (std::size_t i = 0; i < cd.size(); ++i) out[i] = cd[i].imag();
    Tensor result = Tensor::from(c.shape(), std::move(out));
    const int nc = c.node();
    const Shape s = c.shape();
    auto fn = [nc, s](const Tensor& g, const Tape::Accumulator& accum) {
        if (nc < 0) return;
        const auto& gd = g.data();
        std::vector<cplx> gc(gd.size());
        for (std::size_t i = 0; i < gd.size(); ++i) gc[i] = cplx(0.0, gd[i]);
        accum(nc, Tensor::cfrom(s, std::move(gc)));
    };
    const int node = maybe_record("imag_part", {&c}, std::move(fn));
    return with_node(result, node);
}

}  // namespace pfr
