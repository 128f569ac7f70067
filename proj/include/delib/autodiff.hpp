#pragma once

#include <deque>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "delib/params.hpp"
#include "delib/tensor.hpp"

namespace delib {

/// Differentiable primitives. Shape rules (all tensors are 2-D):
///   matmul        [m x k] . [k x n] -> [m x n]
///   add, sub, mul same shape, elementwise
///   add_row       [m x n] + [1 x n] broadcast over rows
///   tanh, sigmoid, exp, log   elementwise (log needs x > 0)
///   concat_rows   stack inputs with equal cols vertically
///   concat_cols   join inputs with equal rows horizontally
///   lookup        row `index` of a matrix -> [1 x n]
///   sum           all entries -> [1 x 1]
///   softmax, log_softmax      row-wise
///   scale         factor * x + shift
///   transpose
///   pick          flat entry `index` -> [1 x 1]
///   straight_through(soft, hard)  value of hard, gradient routed to soft
enum class Primitive {
  matmul,
  add,
  sub,
  mul,
  add_row,
  tanh,
  sigmoid,
  exp,
  log,
  concat_rows,
  concat_cols,
  lookup,
  sum,
  softmax,
  log_softmax,
  scale,
  transpose,
  pick,
  straight_through,
};

const char* primitive_name(Primitive kind);

struct PrimitiveArgs {
  int index = 0;
  double factor = 1.0;
  double shift = 0.0;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  bool valid() const noexcept { return graph != nullptr && id >= 0; }
};

/// Append-only tape of primitive applications. Nodes are stored in creation
/// order, which is a topological order; backward() walks it once in reverse.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to external parameter storage. The storage must outlive the
  /// graph and stay unmodified while it is in use. Repeated calls with the same
  /// (storage, group) return the same leaf so gradients accumulate in one place.
  Var param(const std::string& name, const Tensor& storage, int group = 0);

  Var apply(Primitive kind, std::span<const Var> inputs, PrimitiveArgs args = {});
  Var apply(Primitive kind, std::initializer_list<Var> inputs, PrimitiveArgs args = {}) {
    return apply(kind, std::span<const Var>(inputs.begin(), inputs.size()), args);
  }

  const Tensor& value(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a [1x1] loss; fills adjoints of every node.
  void backward(Var loss);
  /// Gradients of the last backward() for the leaves of `group` named in
  /// `wrt`. Parameters not on the graph receive a zero tensor.
  GradientMap gradients(const ParameterTable& wrt, int group = 0) const;
  GradientMap backward(Var loss, const ParameterTable& wrt, int group = 0) {
    backward(loss);
    return gradients(wrt, group);
  }
  /// Adjoint of an arbitrary node after backward(); zero if unreached.
  Tensor adjoint(Var v) const;

 private:
  struct Node {
    Primitive op = Primitive::matmul;
    bool leaf = false;
    std::vector<int> inputs;
    PrimitiveArgs args;
    Tensor value;
    const Tensor* external = nullptr;
    std::string name;
    int group = 0;
  };

  const Tensor& node_value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  Tensor forward(Primitive kind, std::span<const Var> inputs, const PrimitiveArgs& args) const;
  void propagate(int id, const Tensor& grad_out);
  Tensor& grad_slot(int id);

  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> live_;
  std::unordered_map<const Tensor*, std::vector<std::pair<int, int>>> leaf_index_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var m, Var row);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var lookup(Var table, int row);
Var sum(Var a);
Var softmax(Var a);
Var log_softmax(Var a);
Var scale(Var a, double factor, double shift = 0.0);
Var transpose(Var a);
Var pick(Var a, int flat_index);
Var straight_through(Var soft, Var hard);

}  // namespace delib
