#include "delib/layers.hpp"

namespace delib {

Var bind_param(Graph& g, const ParameterTable& table, const std::string& name, int group) {
  return g.param(name, table.at(name), group);
}

void GruCell::declare(ParameterTable& table, const std::string& prefix, int input, int hidden) {
  for (const char* gate : {"z", "r", "n"}) {
    table.add(prefix + ".W" + gate, Tensor(input, hidden));
    table.add(prefix + ".U" + gate, Tensor(hidden, hidden));
    table.add(prefix + ".b" + gate, Tensor(1, hidden));
  }
}

GruCell GruCell::bind(Graph& g, const ParameterTable& table, const std::string& prefix, int group) {
  auto p = [&](const char* leaf) { return bind_param(g, table, prefix + "." + leaf, group); };
  GruCell c{p("Wz"), p("Wr"), p("Wn"), p("Uz"), p("Ur"), p("Un"), p("bz"), p("br"), p("bn"), 0};
  c.hidden = c.Uz.value().rows();
  return c;
}

Var GruCell::step(Var input, Var state) const {
  Var z = sigmoid(add(add(matmul(input, Wz), matmul(state, Uz)), bz));
  Var r = sigmoid(add(add(matmul(input, Wr), matmul(state, Ur)), br));
  Var n = tanh(add(add(matmul(input, Wn), matmul(mul(r, state), Un)), bn));
  // (1 - z) * n + z * h  ==  n + z * (h - n)
  return add(n, mul(z, sub(state, n)));
}

Var GruCell::run(std::span<const Var> inputs) const {
  if (inputs.empty()) throw ContractViolation("GruCell::run: empty input sequence");
  Graph& g = *inputs.front().graph;
  Var h = g.constant(Tensor(1, hidden));
  std::vector<Var> states;
  states.reserve(inputs.size());
  for (Var x : inputs) {
    h = step(x, h);
    states.push_back(h);
  }
  return concat_rows(states);
}

void AdditiveAttention::declare(ParameterTable& table, const std::string& prefix, int query, int key,
                                int width) {
  table.add(prefix + ".Ws", Tensor(query, width));
  table.add(prefix + ".Wh", Tensor(key, width));
  table.add(prefix + ".v", Tensor(width, 1));
}

AdditiveAttention AdditiveAttention::bind(Graph& g, const ParameterTable& table,
                                          const std::string& prefix, int group) {
  return {bind_param(g, table, prefix + ".Ws", group), bind_param(g, table, prefix + ".Wh", group),
          bind_param(g, table, prefix + ".v", group)};
}

AttentionMemory AdditiveAttention::memory(Var states) const {
  const int len = states.value().rows();
  if (len < 1) throw ContractViolation("attention memory is empty");
  return {states, matmul(states, Wh), len};
}

Attended AdditiveAttention::attend(const AttentionMemory& mem, Var query) const {
  if (!mem.states.valid() || mem.length < 1) {
    throw ContractViolation("attention over an empty memory");
  }
  Var scores = transpose(matmul(tanh(add_row(mem.keys, matmul(query, Ws))), v));
  Var alpha = softmax(scores);
  return {alpha, matmul(alpha, mem.states)};
}

}  // namespace delib
