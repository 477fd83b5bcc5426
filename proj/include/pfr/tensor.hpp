#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pfr/errors.hpp"

namespace pfr {

using cplx = std::complex<double>;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Trailing-dimension broadcast of two shapes (numpy rules). Throws ShapeError.
Shape broadcast_shape(const Shape& a, const Shape& b);

enum class Dtype { Real64, Complex128 };

/// Dense row-major N-d array, real64 or complex128, immutable after
/// construction. Copying shares the underlying buffer. A tensor may carry a
/// tape node id, in which case operations on it are recorded for reverse-mode
/// differentiation.
class Tensor {
public:
    Tensor();  // rank-0 real zero

    static Tensor zeros(Shape shape);
    static Tensor czeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor cfrom(Shape shape, std::vector<cplx> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const;  // element count
    Dtype dtype() const { return dtype_; }
    bool is_real() const { return dtype_ == Dtype::Real64; }

    const std::vector<double>& data() const;
    const std::vector<cplx>& cdata() const;

    /// Value of a rank-0 / single-element real tensor.
    double item() const;

    /// Row-major flat offset of a multi-index (bounds-checked).
    std::size_t offset(const std::vector<std::size_t>& idx) const;
    double at(const std::vector<std::size_t>& idx) const;

    int node() const { return node_; }
    bool tracked() const { return node_ >= 0; }
    /// Same tensor detached from any tape.
    Tensor detached() const;

private:
    friend class Tape;
    friend Tensor with_node(const Tensor& t, int node);

    Shape shape_;
    Dtype dtype_ = Dtype::Real64;
    std::shared_ptr<const std::vector<double>> rdata_;
    std::shared_ptr<const std::vector<cplx>> cdata_;
    int node_ = -1;
};

/// True if any element is NaN or infinite.
bool has_nonfinite(const Tensor& t);

/// Reverse-mode tape. Nodes are recorded in execution order; backward()
/// sweeps them in strict reverse order, which is a valid reverse topological
/// order because an op can only consume already-created nodes.
class Tape {
public:
    using Accumulator = std::function<void(int, const Tensor&)>;
    using BackwardFn = std::function<void(const Tensor& grad_out, const Accumulator& accum)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Register a leaf; returns a tracked copy of t.
    Tensor watch(const Tensor& t);

    /// Record an interior node; returns its id.
    int record(const char* op, std::vector<int> inputs, BackwardFn backward);

    /// Seed d(loss)/d(loss)=1 and run the reverse sweep.
    /// loss must be a real scalar recorded on this tape.
    void backward(const Tensor& loss);

    /// Gradient of a watched leaf after backward(); zeros if untouched.
    Tensor grad(const Tensor& leaf) const;

    std::size_t node_count() const { return nodes_.size(); }
    const char* op_name(int node) const { return nodes_[static_cast<std::size_t>(node)].op; }

    /// Currently active tape on this thread (nullptr if none).
    static Tape* active();

    /// RAII activation scope.
    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

private:
    struct Node {
        const char* op;
        std::vector<int> inputs;
        BackwardFn backward;
        Shape shape;
        Dtype dtype;
    };

    void accumulate(int node, const Tensor& g);

    std::vector<Node> nodes_;
    std::vector<std::optional<Tensor>> grads_;
};

// ---- differentiable operations -------------------------------------------

/// Elementwise with trailing-dimension broadcasting; dtypes must match.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Elementwise unary (real only unless noted).
Tensor neg(const Tensor& x);  // real or complex
Tensor exp_op(const Tensor& x);
Tensor expm1_op(const Tensor& x);
Tensor log1p_op(const Tensor& x);
Tensor reciprocal(const Tensor& x);
Tensor abs_op(const Tensor& x);  // d/dx at 0 defined as 0
Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);

/// Multiply by a compile-time-known real constant.
Tensor scale(const Tensor& x, double c);

/// Batched matrix product a[...,p,q] x b[...,q,r] -> [...,p,r].
/// b may be rank-2 (shared across batch); otherwise leading dims must match.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Depthwise causal 1D convolution over the time axis.
/// x: [B,L,M], kernel: [M,k]; y[b,l,m] = sum_j kernel[m,j] * x[b,l-j,m],
/// out-of-range input treated as zero. Requires k <= L.
Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel);

/// Metadata-only reshape (same element count).
Tensor reshape(const Tensor& x, Shape shape);

/// Sum of all elements -> rank-0 tensor (real only).
Tensor sum_all(const Tensor& x);

/// Pack two real tensors into one complex tensor (and project back).
Tensor make_complex(const Tensor& re, const Tensor& im);
Tensor real_part(const Tensor& c);
Tensor imag_part(const Tensor& c);

}  // namespace pfr
