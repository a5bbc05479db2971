#include "minv/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <utility>

#include "minv/errors.hpp"

namespace minv::ad {

namespace {

std::atomic<int> g_next_id{0};

std::string node_tag(Op op, int id) {
  return "node #" + std::to_string(id) + " (" + op_name(op) + ")";
}

Var finish(Op op, std::vector<Var> inputs, Tensor value, double c = 0.0,
           std::size_t off = 0) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->inputs = std::move(inputs);
  n->value = std::move(value);
  n->c = c;
  n->off = off;
  if (!n->value.all_finite()) {
    throw NumericError("non-finite value produced at " + node_tag(op, n->id));
  }
  return n;
}

[[noreturn]] void shape_fail(Op op, const std::string& detail) {
  throw DimensionError(std::string(op_name(op)) + ": " + detail + " at " +
                       node_tag(op, g_next_id.load()));
}

void require_1d(Op op, const Var& a) {
  if (a->value.rank() != 1) shape_fail(op, "expected 1-D input, got " + a->value.shape_str());
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kAddScalar: return "add-scalar";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kReshape: return "reshape";
    case Op::kRelu: return "relu";
    case Op::kTanh: return "tanh";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSqrt: return "sqrt";
    case Op::kRecip: return "recip";
    case Op::kSum: return "sum";
    case Op::kBroadcast: return "broadcast";
    case Op::kSlice: return "slice";
    case Op::kEmbed: return "embed";
    case Op::kConcat: return "concat";
    case Op::kSoftmax: return "softmax";
  }
  return "?";
}

Var leaf(Tensor value) { return finish(Op::kLeaf, {}, std::move(value)); }

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) {
    shape_fail(Op::kAdd, a->value.shape_str() + " vs " + b->value.shape_str());
  }
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return finish(Op::kAdd, {a, b}, std::move(out));
}

Var add_scalar(const Var& a, double c) {
  Tensor out = a->value;
  for (double& v : out.data()) v += c;
  return finish(Op::kAddScalar, {a}, std::move(out), c);
}

Var mul(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) {
    shape_fail(Op::kMul, a->value.shape_str() + " vs " + b->value.shape_str());
  }
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return finish(Op::kMul, {a, b}, std::move(out));
}

Var scale(const Var& a, double c) {
  Tensor out = a->value;
  for (double& v : out.data()) v *= c;
  return finish(Op::kScale, {a}, std::move(out), c);
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.rank() != 2) shape_fail(Op::kMatmul, "lhs must be 2-D, got " + a->value.shape_str());
  if (b->value.rank() != 1 && b->value.rank() != 2) {
    shape_fail(Op::kMatmul, "rhs must be 1-D or 2-D, got " + b->value.shape_str());
  }
  const std::size_t inner = b->value.rank() == 1 ? b->value.size() : b->value.rows();
  if (a->value.cols() != inner) {
    shape_fail(Op::kMatmul, a->value.shape_str() + " x " + b->value.shape_str());
  }
  return finish(Op::kMatmul, {a, b}, minv::matmul(a->value, b->value));
}

Var transpose2d(const Var& a) {
  if (a->value.rank() != 2) shape_fail(Op::kTranspose, "expected 2-D, got " + a->value.shape_str());
  return finish(Op::kTranspose, {a}, minv::transpose(a->value));
}

Var reshape(const Var& a, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape), a->value.data());
  return finish(Op::kReshape, {a}, std::move(out));
}

Var relu(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return finish(Op::kRelu, {a}, std::move(out));
}

Var tanh(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.data()) v = std::tanh(v);
  return finish(Op::kTanh, {a}, std::move(out));
}

Var exp(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.data()) v = std::exp(v);
  return finish(Op::kExp, {a}, std::move(out));
}

Var log(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.data()) v = std::log(v);
  return finish(Op::kLog, {a}, std::move(out));
}

Var sqrt(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.data()) v = std::sqrt(v);
  return finish(Op::kSqrt, {a}, std::move(out));
}

Var recip(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.data()) v = 1.0 / v;
  return finish(Op::kRecip, {a}, std::move(out));
}

Var sum(const Var& a) {
  return finish(Op::kSum, {a}, Tensor::scalar(a->value.sum()));
}

Var broadcast(const Var& a, std::vector<std::size_t> shape) {
  if (a->value.size() != 1) {
    shape_fail(Op::kBroadcast, "expected scalar input, got " + a->value.shape_str());
  }
  return finish(Op::kBroadcast, {a}, Tensor::full(std::move(shape), a->value[0]));
}

Var slice(const Var& a, std::size_t offset, std::size_t len) {
  require_1d(Op::kSlice, a);
  if (offset + len > a->value.size()) {
    shape_fail(Op::kSlice, "range [" + std::to_string(offset) + ", " +
                               std::to_string(offset + len) + ") exceeds size " +
                               std::to_string(a->value.size()));
  }
  Tensor out({len});
  for (std::size_t i = 0; i < len; ++i) out[i] = a->value[offset + i];
  return finish(Op::kSlice, {a}, std::move(out), 0.0, offset);
}

Var embed(const Var& a, std::size_t offset, std::size_t full_len) {
  require_1d(Op::kEmbed, a);
  if (offset + a->value.size() > full_len) {
    shape_fail(Op::kEmbed, "input of size " + std::to_string(a->value.size()) +
                               " at offset " + std::to_string(offset) +
                               " exceeds target size " + std::to_string(full_len));
  }
  Tensor out({full_len});
  for (std::size_t i = 0; i < a->value.size(); ++i) out[offset + i] = a->value[i];
  return finish(Op::kEmbed, {a}, std::move(out), 0.0, offset);
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) shape_fail(Op::kConcat, "no inputs");
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_1d(Op::kConcat, p);
    total += p->value.size();
  }
  Tensor out({total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < p->value.size(); ++i) out[off + i] = p->value[i];
    off += p->value.size();
  }
  return finish(Op::kConcat, parts, std::move(out));
}

Var softmax(const Var& a) {
  require_1d(Op::kSoftmax, a);
  const Tensor& x = a->value;
  const double m = x.max_value();
  Tensor out({x.size()});
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    z += out[i];
  }
  for (double& v : out.data()) v /= z;
  return finish(Op::kSoftmax, {a}, std::move(out));
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }
Var neg(const Var& a) { return scale(a, -1.0); }
Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }
Var norm2(const Var& a) { return sqrt(sum(mul(a, a))); }

Var logsumexp(const Var& a) {
  require_1d(Op::kSoftmax, a);
  // The max is detached (a plain constant): the value is unchanged and the
  // gradient of m + log(sum(exp(x - m))) w.r.t. x is softmax(x) either way.
  const double m = a->value.max_value();
  return add_scalar(log(sum(exp(add_scalar(a, -m)))), m);
}

namespace {

// Post-order (inputs before users) of every node reachable from root.
std::vector<Var> topo_order(const Var& root) {
  std::vector<Var> order;
  std::unordered_map<const Node*, bool> state;  // false=open, true=done
  std::vector<std::pair<Var, std::size_t>> stack;
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [node, next_input] = stack.back();
    if (next_input == 0) {
      auto it = state.find(node.get());
      if (it != state.end()) {
        stack.pop_back();
        continue;
      }
      state[node.get()] = false;
    }
    if (next_input < node->inputs.size()) {
      const Var& child = node->inputs[next_input++];
      if (state.find(child.get()) == state.end()) stack.emplace_back(child, 0);
    } else {
      state[node.get()] = true;
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void accumulate(AdjointMap& adj, const Var& node, const Var& contribution) {
  auto it = adj.find(node.get());
  if (it == adj.end()) {
    adj.emplace(node.get(), contribution);
  } else {
    it->second = add(it->second, contribution);
  }
}

}  // namespace

AdjointMap backprop(const Var& root, const Var& seed) {
  if (!root->value.same_shape(seed->value)) {
    throw DimensionError("backprop: seed shape " + seed->value.shape_str() +
                         " does not match output shape " + root->value.shape_str());
  }
  std::vector<Var> order = topo_order(root);
  AdjointMap adj;
  adj.emplace(root.get(), seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Var& n = *it;
    auto found = adj.find(n.get());
    if (found == adj.end()) continue;  // does not influence root
    const Var g = found->second;
    switch (n->op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
        accumulate(adj, n->inputs[0], g);
        accumulate(adj, n->inputs[1], g);
        break;
      case Op::kAddScalar:
        accumulate(adj, n->inputs[0], g);
        break;
      case Op::kMul:
        accumulate(adj, n->inputs[0], mul(g, n->inputs[1]));
        accumulate(adj, n->inputs[1], mul(g, n->inputs[0]));
        break;
      case Op::kScale:
        accumulate(adj, n->inputs[0], scale(g, n->c));
        break;
      case Op::kMatmul: {
        const Var& a = n->inputs[0];
        const Var& b = n->inputs[1];
        if (b->value.rank() == 1) {
          const std::size_t m = a->value.rows(), k = a->value.cols();
          accumulate(adj, a, matmul(reshape(g, {m, 1}), reshape(b, {1, k})));
          accumulate(adj, b, matmul(transpose2d(a), g));
        } else {
          accumulate(adj, a, matmul(g, transpose2d(b)));
          accumulate(adj, b, matmul(transpose2d(a), g));
        }
        break;
      }
      case Op::kTranspose:
        accumulate(adj, n->inputs[0], transpose2d(g));
        break;
      case Op::kReshape:
        accumulate(adj, n->inputs[0], reshape(g, n->inputs[0]->value.shape()));
        break;
      case Op::kRelu: {
        // d(relu)/dx is the 0/1 activity mask; it is locally constant, so a
        // detached leaf is the correct derivative (second order included).
        Tensor mask = n->inputs[0]->value;
        for (double& v : mask.data()) v = v > 0.0 ? 1.0 : 0.0;
        accumulate(adj, n->inputs[0], mul(g, leaf(std::move(mask))));
        break;
      }
      case Op::kTanh:
        accumulate(adj, n->inputs[0], mul(g, add_scalar(scale(mul(n, n), -1.0), 1.0)));
        break;
      case Op::kExp:
        accumulate(adj, n->inputs[0], mul(g, n));
        break;
      case Op::kLog:
        accumulate(adj, n->inputs[0], mul(g, recip(n->inputs[0])));
        break;
      case Op::kSqrt:
        accumulate(adj, n->inputs[0], mul(g, scale(recip(n), 0.5)));
        break;
      case Op::kRecip:
        accumulate(adj, n->inputs[0], neg(mul(g, mul(n, n))));
        break;
      case Op::kSum:
        accumulate(adj, n->inputs[0], broadcast(g, n->inputs[0]->value.shape()));
        break;
      case Op::kBroadcast:
        accumulate(adj, n->inputs[0], sum(g));
        break;
      case Op::kSlice:
        accumulate(adj, n->inputs[0], embed(g, n->off, n->inputs[0]->value.size()));
        break;
      case Op::kEmbed:
        accumulate(adj, n->inputs[0], slice(g, n->off, n->inputs[0]->value.size()));
        break;
      case Op::kConcat: {
        std::size_t off = 0;
        for (const Var& part : n->inputs) {
          accumulate(adj, part, slice(g, off, part->value.size()));
          off += part->value.size();
        }
        break;
      }
      case Op::kSoftmax: {
        const Var& p = n;
        Var t = sum(mul(g, p));
        accumulate(adj, n->inputs[0], mul(p, sub(g, broadcast(t, p->value.shape()))));
        break;
      }
    }
  }
  return adj;
}

Tensor adjoint_value(const AdjointMap& adj, const Var& node) {
  auto it = adj.find(node.get());
  if (it == adj.end()) return Tensor(node->value.shape());
  return it->second->value;
}

Var adjoint_var(const AdjointMap& adj, const Var& node) {
  auto it = adj.find(node.get());
  if (it == adj.end()) return leaf(Tensor(node->value.shape()));
  return it->second;
}

}  // namespace minv::ad
