#pragma once

#include <cstddef>
#include <memory>
#include <unordered_map>
#include <vector>

#include "minv/tensor.hpp"

namespace minv::ad {

// Primitive operations.  Values are computed eagerly when a node is built, so
// a graph is simultaneously a record of the computation (for backward passes)
// and its result.
enum class Op {
  kLeaf,
  kAdd,
  kAddScalar,
  kMul,       // elementwise
  kScale,     // by a compile-time-constant scalar
  kMatmul,    // [m,n]x[n,p] -> [m,p], or [m,n]x[n] -> [m]
  kTranspose, // 2-D
  kReshape,
  kRelu,
  kTanh,
  kExp,
  kLog,
  kSqrt,
  kRecip,
  kSum,       // all entries -> shape {1}
  kBroadcast, // shape {1} -> given shape
  kSlice,     // 1-D contiguous range
  kEmbed,     // 1-D placed into zeros of a longer 1-D
  kConcat,    // 1-D inputs
  kSoftmax,   // 1-D, numerically stable
};

const char* op_name(Op op);

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Op op;
  int id;
  std::vector<Var> inputs;
  Tensor value;
  // Payload: scalar constant for kScale/kAddScalar, offsets for slice/embed.
  double c = 0.0;
  std::size_t off = 0;
};

// Graph construction.  Every factory validates shapes (DimensionError naming
// the offending node) and rejects non-finite results (NumericError).
Var leaf(Tensor value);
Var add(const Var& a, const Var& b);
Var add_scalar(const Var& a, double c);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
Var transpose2d(const Var& a);
Var reshape(const Var& a, std::vector<std::size_t> shape);
Var relu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var recip(const Var& a);
Var sum(const Var& a);
Var broadcast(const Var& a, std::vector<std::size_t> shape);
Var slice(const Var& a, std::size_t offset, std::size_t len);
Var embed(const Var& a, std::size_t offset, std::size_t full_len);
Var concat(const std::vector<Var>& parts);
Var softmax(const Var& a);

// Compositions (no dedicated node kind).
Var sub(const Var& a, const Var& b);
Var neg(const Var& a);
Var dot(const Var& a, const Var& b);
// Euclidean norm.  The value at the zero vector is 0, but the backward pass
// through it produces non-finite values (the norm is not differentiable there).
Var norm2(const Var& a);
Var logsumexp(const Var& a);  // stable: max is subtracted before exp

// Reverse-mode sweep.  Walks the graph below `root` once and returns, for
// every node that influences `root`, the adjoint seed^T * d(root)/d(node).
// Adjoints are themselves graphs built from the primitives above, so they can
// be differentiated again (that is what the second-order training term uses).
using AdjointMap = std::unordered_map<const Node*, Var>;
AdjointMap backprop(const Var& root, const Var& seed);

// Adjoint lookup; zero tensor of the node's shape when the node does not
// influence the root.
Tensor adjoint_value(const AdjointMap& adj, const Var& node);
Var adjoint_var(const AdjointMap& adj, const Var& node);

}  // namespace minv::ad
