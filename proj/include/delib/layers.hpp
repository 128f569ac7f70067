#pragma once

#include <span>
#include <string>

#include "delib/autodiff.hpp"

namespace delib {

/// Gated recurrent cell:
///   z = sigmoid(x Wz + h Uz + bz)
///   r = sigmoid(x Wr + h Ur + br)
///   n = tanh(x Wn + (r * h) Un + bn)
///   h' = (1 - z) * n + z * h
struct GruCell {
  Var Wz, Wr, Wn, Uz, Ur, Un, bz, br, bn;
  int hidden = 0;

  static void declare(ParameterTable& table, const std::string& prefix, int input, int hidden);
  static GruCell bind(Graph& g, const ParameterTable& table, const std::string& prefix, int group);

  Var step(Var input, Var state) const;
  /// Runs the cell from a zero state and stacks the states into [len x hidden].
  Var run(std::span<const Var> inputs) const;
};

/// Encoder states and their precomputed key projections.
struct AttentionMemory {
  Var states;  // [L x d]
  Var keys;    // [L x a]
  int length = 0;
};

struct Attended {
  Var alpha;    // [1 x L], row-stochastic
  Var context;  // [1 x d]
};

/// Additive scoring: e_l = v^T tanh(Ws s + Wh h_l).
struct AdditiveAttention {
  Var Ws, Wh, v;

  static void declare(ParameterTable& table, const std::string& prefix, int query, int key, int width);
  static AdditiveAttention bind(Graph& g, const ParameterTable& table, const std::string& prefix,
                                int group);

  AttentionMemory memory(Var states) const;
  Attended attend(const AttentionMemory& mem, Var query) const;
};

Var bind_param(Graph& g, const ParameterTable& table, const std::string& name, int group);

}  // namespace delib
