#pragma once

// Internal helpers for authoring differentiable ops. Not installed.

#include <initializer_list>

#include "pfr/tensor.hpp"

namespace pfr {

Tensor with_node(const Tensor& t, int node);

namespace detail {

/// Record a node on the active tape if any input is tracked; -1 otherwise.
int maybe_record(const char* op, std::initializer_list<const Tensor*> inputs,
                 Tape::BackwardFn fn);

/// Sum g over axes broadcast relative to target (gradient reduction).
Tensor reduce_to_shape(const Tensor& g, const Shape& target);

}  // namespace detail
}  // namespace pfr
