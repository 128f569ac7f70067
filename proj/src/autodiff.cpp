#include "delib/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace delib {

namespace {

std::string shapes_of(std::span<const Tensor* const> ts) {
  std::string s;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (i) s += " vs ";
    s += ts[i]->shape_string();
  }
  return s;
}

[[noreturn]] void shape_error(Primitive kind, std::span<const Tensor* const> ts) {
  throw ContractViolation(std::string(primitive_name(kind)) + ": shape mismatch " + shapes_of(ts));
}

void require_finite(Primitive kind, const Tensor& t) {
  if (!t.all_finite()) {
    throw NumericDomainError(std::string(primitive_name(kind)) + ": non-finite input " +
                             t.shape_string());
  }
}

void matmul_into(const Tensor& a, const Tensor& b, Tensor& c) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    double* crow = c.data() + static_cast<std::size_t>(i) * n;
    const double* arow = a.data() + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b.data() + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void softmax_rows(const Tensor& x, Tensor& y) {
  for (int r = 0; r < x.rows(); ++r) {
    double mx = x(r, 0);
    for (int c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double z = 0.0;
    for (int c = 0; c < x.cols(); ++c) {
      y(r, c) = std::exp(x(r, c) - mx);
      z += y(r, c);
    }
    for (int c = 0; c < x.cols(); ++c) y(r, c) /= z;
  }
}

}  // namespace

const char* primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::sub: return "sub";
    case Primitive::mul: return "mul";
    case Primitive::add_row: return "add_row";
    case Primitive::tanh: return "tanh";
    case Primitive::sigmoid: return "sigmoid";
    case Primitive::exp: return "exp";
    case Primitive::log: return "log";
    case Primitive::concat_rows: return "concat_rows";
    case Primitive::concat_cols: return "concat_cols";
    case Primitive::lookup: return "lookup";
    case Primitive::sum: return "sum";
    case Primitive::softmax: return "softmax";
    case Primitive::log_softmax: return "log_softmax";
    case Primitive::scale: return "scale";
    case Primitive::transpose: return "transpose";
    case Primitive::pick: return "pick";
    case Primitive::straight_through: return "straight_through";
  }
  return "?";
}

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::constant(Tensor value) {
  if (value.empty()) throw ContractViolation("constant: empty tensor");
  if (!value.all_finite()) throw NumericDomainError("constant: non-finite value");
  Node n;
  n.leaf = true;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(const std::string& name, const Tensor& storage, int group) {
  auto& bucket = leaf_index_[&storage];
  for (auto [g, id] : bucket) {
    if (g == group) return Var{this, id};
  }
  Node n;
  n.leaf = true;
  n.external = &storage;
  n.name = name;
  n.group = group;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  bucket.emplace_back(group, id);
  return Var{this, id};
}

const Tensor& Graph::value(Var v) const {
  if (v.graph != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw ContractViolation("variable does not belong to this graph");
  }
  return node_value(v.id);
}

Var Graph::apply(Primitive kind, std::span<const Var> inputs, PrimitiveArgs args) {
  for (const Var& v : inputs) {
    if (v.graph != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw ContractViolation(std::string(primitive_name(kind)) +
                              ": input does not belong to this graph");
    }
  }
  Tensor out = forward(kind, inputs, args);
  Node n;
  n.op = kind;
  n.args = args;
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) n.inputs.push_back(v.id);
  n.value = std::move(out);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Graph::forward(Primitive kind, std::span<const Var> inputs, const PrimitiveArgs& args) const {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ContractViolation(std::string(primitive_name(kind)) + ": expected " +
                              std::to_string(n) + " inputs, got " +
                              std::to_string(inputs.size()));
    }
  };
  auto in = [&](std::size_t i) -> const Tensor& { return node_value(inputs[i].id); };

  switch (kind) {
    case Primitive::matmul: {
      arity(2);
      const Tensor &a = in(0), &b = in(1);
      if (a.cols() != b.rows()) {
        const Tensor* ts[] = {&a, &b};
        shape_error(kind, ts);
      }
      Tensor c(a.rows(), b.cols());
      matmul_into(a, b, c);
      return c;
    }
    case Primitive::add:
    case Primitive::sub:
    case Primitive::mul: {
      arity(2);
      const Tensor &a = in(0), &b = in(1);
      if (!a.same_shape(b)) {
        const Tensor* ts[] = {&a, &b};
        shape_error(kind, ts);
      }
      Tensor c(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) {
        c[i] = kind == Primitive::add ? a[i] + b[i] : kind == Primitive::sub ? a[i] - b[i] : a[i] * b[i];
      }
      return c;
    }
    case Primitive::add_row: {
      arity(2);
      const Tensor &m = in(0), &r = in(1);
      if (r.rows() != 1 || r.cols() != m.cols()) {
        const Tensor* ts[] = {&m, &r};
        shape_error(kind, ts);
      }
      Tensor c = m;
      for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) c(i, j) += r(0, j);
      }
      return c;
    }
    case Primitive::tanh:
    case Primitive::sigmoid:
    case Primitive::exp:
    case Primitive::log: {
      arity(1);
      const Tensor& a = in(0);
      Tensor c(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        switch (kind) {
          case Primitive::tanh: c[i] = std::tanh(x); break;
          case Primitive::sigmoid:
            c[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            break;
          case Primitive::exp:
            c[i] = std::exp(x);
            if (!std::isfinite(c[i])) throw NumericDomainError("exp: overflow at input " + std::to_string(x));
            break;
          default:
            if (!(x > 0.0) || !std::isfinite(x)) {
              throw NumericDomainError("log: input outside (0, inf): " + std::to_string(x));
            }
            c[i] = std::log(x);
        }
      }
      return c;
    }
    case Primitive::concat_rows:
    case Primitive::concat_cols: {
      if (inputs.empty()) throw ContractViolation(std::string(primitive_name(kind)) + ": no inputs");
      const bool by_rows = kind == Primitive::concat_rows;
      int total = 0;
      const Tensor& first = in(0);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& t = in(i);
        if ((by_rows && t.cols() != first.cols()) || (!by_rows && t.rows() != first.rows())) {
          const Tensor* ts[] = {&first, &t};
          shape_error(kind, ts);
        }
        total += by_rows ? t.rows() : t.cols();
      }
      Tensor c = by_rows ? Tensor(total, first.cols()) : Tensor(first.rows(), total);
      int offset = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& t = in(i);
        for (int r = 0; r < t.rows(); ++r) {
          for (int k = 0; k < t.cols(); ++k) {
            if (by_rows) c(offset + r, k) = t(r, k);
            else c(r, offset + k) = t(r, k);
          }
        }
        offset += by_rows ? t.rows() : t.cols();
      }
      return c;
    }
    case Primitive::lookup: {
      arity(1);
      const Tensor& t = in(0);
      if (args.index < 0 || args.index >= t.rows()) {
        throw ContractViolation("lookup: row " + std::to_string(args.index) + " outside " +
                                t.shape_string());
      }
      Tensor c(1, t.cols());
      for (int k = 0; k < t.cols(); ++k) c(0, k) = t(args.index, k);
      return c;
    }
    case Primitive::sum: {
      arity(1);
      double s = 0.0;
      for (double v : in(0).values()) s += v;
      return Tensor::scalar(s);
    }
    case Primitive::softmax:
    case Primitive::log_softmax: {
      arity(1);
      const Tensor& x = in(0);
      require_finite(kind, x);
      Tensor y(x.rows(), x.cols());
      if (kind == Primitive::softmax) {
        softmax_rows(x, y);
        return y;
      }
      for (int r = 0; r < x.rows(); ++r) {
        double mx = x(r, 0);
        for (int c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
        double z = 0.0;
        for (int c = 0; c < x.cols(); ++c) z += std::exp(x(r, c) - mx);
        const double lse = mx + std::log(z);
        for (int c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) - lse;
      }
      return y;
    }
    case Primitive::scale: {
      arity(1);
      const Tensor& a = in(0);
      Tensor c(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) c[i] = args.factor * a[i] + args.shift;
      return c;
    }
    case Primitive::transpose: {
      arity(1);
      const Tensor& a = in(0);
      Tensor c(a.cols(), a.rows());
      for (int r = 0; r < a.rows(); ++r) {
        for (int k = 0; k < a.cols(); ++k) c(k, r) = a(r, k);
      }
      return c;
    }
    case Primitive::pick: {
      arity(1);
      const Tensor& a = in(0);
      if (args.index < 0 || static_cast<std::size_t>(args.index) >= a.size()) {
        throw ContractViolation("pick: index " + std::to_string(args.index) + " outside " +
                                a.shape_string());
      }
      return Tensor::scalar(a[args.index]);
    }
    case Primitive::straight_through: {
      arity(2);
      const Tensor &soft = in(0), &hard = in(1);
      if (!soft.same_shape(hard)) {
        const Tensor* ts[] = {&soft, &hard};
        shape_error(kind, ts);
      }
      return hard;
    }
  }
  throw ContractViolation("unknown primitive");
}

Tensor& Graph::grad_slot(int id) {
  Tensor& g = grads_[id];
  if (g.empty()) {
    const Tensor& v = node_value(id);
    g = Tensor(v.rows(), v.cols());
  }
  return g;
}

void Graph::backward(Var loss) {
  const Tensor& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractViolation("backward: loss must be [1x1], got " + lv.shape_string());
  }
  grads_.assign(nodes_.size(), Tensor());

  // Only nodes downstream of a parameter leaf need adjoints.
  live_.assign(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.leaf) {
      live_[i] = n.external != nullptr;
    } else {
      for (int in : n.inputs) live_[i] |= live_[in];
    }
  }
  grad_slot(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    if (grads_[id].empty() || nodes_[id].leaf || !live_[id]) continue;
    propagate(id, grads_[id]);
  }
}

void Graph::propagate(int id, const Tensor& gout) {
  const Node& n = nodes_[id];
  const Tensor& y = n.value;
  auto needs = [&](std::size_t i) { return live_[n.inputs[i]] != 0; };
  auto in = [&](std::size_t i) -> const Tensor& { return node_value(n.inputs[i]); };

  switch (n.op) {
    case Primitive::matmul: {
      const Tensor &a = in(0), &b = in(1);
      const int m = a.rows(), k = a.cols(), cols = b.cols();
      if (needs(0)) {
        Tensor& ga = grad_slot(n.inputs[0]);
        for (int i = 0; i < m; ++i) {
          for (int p = 0; p < k; ++p) {
            double s = 0.0;
            for (int j = 0; j < cols; ++j) s += gout(i, j) * b(p, j);
            ga(i, p) += s;
          }
        }
      }
      if (needs(1)) {
        Tensor& gb = grad_slot(n.inputs[1]);
        for (int i = 0; i < m; ++i) {
          for (int p = 0; p < k; ++p) {
            const double av = a(i, p);
            double* grow = gb.data() + static_cast<std::size_t>(p) * cols;
            const double* orow = gout.data() + static_cast<std::size_t>(i) * cols;
            for (int j = 0; j < cols; ++j) grow[j] += av * orow[j];
          }
        }
      }
      return;
    }
    case Primitive::add:
    case Primitive::sub: {
      if (needs(0)) {
        Tensor& ga = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
      }
      if (needs(1)) {
        Tensor& gb = grad_slot(n.inputs[1]);
        const double sign = n.op == Primitive::add ? 1.0 : -1.0;
        for (std::size_t i = 0; i < gout.size(); ++i) gb[i] += sign * gout[i];
      }
      return;
    }
    case Primitive::mul: {
      const Tensor &a = in(0), &b = in(1);
      if (needs(0)) {
        Tensor& ga = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * b[i];
      }
      if (needs(1)) {
        Tensor& gb = grad_slot(n.inputs[1]);
        for (std::size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i] * a[i];
      }
      return;
    }
    case Primitive::add_row: {
      if (needs(0)) {
        Tensor& gm = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < gout.size(); ++i) gm[i] += gout[i];
      }
      if (needs(1)) {
        Tensor& gr = grad_slot(n.inputs[1]);
        for (int i = 0; i < gout.rows(); ++i) {
          for (int j = 0; j < gout.cols(); ++j) gr(0, j) += gout(i, j);
        }
      }
      return;
    }
    case Primitive::tanh:
    case Primitive::sigmoid:
    case Primitive::exp:
    case Primitive::log: {
      if (!needs(0)) return;
      Tensor& ga = grad_slot(n.inputs[0]);
      const Tensor& x = in(0);
      for (std::size_t i = 0; i < gout.size(); ++i) {
        double d;
        switch (n.op) {
          case Primitive::tanh: d = 1.0 - y[i] * y[i]; break;
          case Primitive::sigmoid: d = y[i] * (1.0 - y[i]); break;
          case Primitive::exp: d = y[i]; break;
          default: d = 1.0 / x[i];
        }
        ga[i] += gout[i] * d;
      }
      return;
    }
    case Primitive::concat_rows:
    case Primitive::concat_cols: {
      const bool by_rows = n.op == Primitive::concat_rows;
      int offset = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const Tensor& t = in(i);
        if (needs(i)) {
          Tensor& gt = grad_slot(n.inputs[i]);
          for (int r = 0; r < t.rows(); ++r) {
            for (int k = 0; k < t.cols(); ++k) {
              gt(r, k) += by_rows ? gout(offset + r, k) : gout(r, offset + k);
            }
          }
        }
        offset += by_rows ? t.rows() : t.cols();
      }
      return;
    }
    case Primitive::lookup: {
      if (!needs(0)) return;
      Tensor& gt = grad_slot(n.inputs[0]);
      for (int k = 0; k < gout.cols(); ++k) gt(n.args.index, k) += gout(0, k);
      return;
    }
    case Primitive::sum: {
      if (!needs(0)) return;
      Tensor& ga = grad_slot(n.inputs[0]);
      const double g = gout[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
      return;
    }
    case Primitive::softmax: {
      if (!needs(0)) return;
      Tensor& ga = grad_slot(n.inputs[0]);
      for (int r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (int c = 0; c < y.cols(); ++c) dot += gout(r, c) * y(r, c);
        for (int c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (gout(r, c) - dot);
      }
      return;
    }
    case Primitive::log_softmax: {
      if (!needs(0)) return;
      Tensor& ga = grad_slot(n.inputs[0]);
      for (int r = 0; r < y.rows(); ++r) {
        double total = 0.0;
        for (int c = 0; c < y.cols(); ++c) total += gout(r, c);
        for (int c = 0; c < y.cols(); ++c) ga(r, c) += gout(r, c) - std::exp(y(r, c)) * total;
      }
      return;
    }
    case Primitive::scale: {
      if (!needs(0)) return;
      Tensor& ga = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += n.args.factor * gout[i];
      return;
    }
    case Primitive::transpose: {
      if (!needs(0)) return;
      Tensor& ga = grad_slot(n.inputs[0]);
      for (int r = 0; r < ga.rows(); ++r) {
        for (int k = 0; k < ga.cols(); ++k) ga(r, k) += gout(k, r);
      }
      return;
    }
    case Primitive::pick: {
      if (!needs(0)) return;
      grad_slot(n.inputs[0])[n.args.index] += gout[0];
      return;
    }
    case Primitive::straight_through: {
      if (!needs(0)) return;
      Tensor& gs = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < gout.size(); ++i) gs[i] += gout[i];
      return;
    }
  }
}

GradientMap Graph::gradients(const ParameterTable& wrt, int group) const {
  GradientMap out = GradientMap::zeros_like(wrt);
  if (grads_.size() != nodes_.size()) return out;
  for (const auto& [name, storage] : wrt) {
    auto it = leaf_index_.find(storage.get());
    if (it == leaf_index_.end()) continue;
    for (auto [g, id] : it->second) {
      if (g != group || grads_[id].empty()) continue;
      Tensor& dst = out[name];
      const Tensor& src = grads_[id];
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
  }
  return out;
}

Tensor Graph::adjoint(Var v) const {
  const Tensor& val = value(v);
  if (grads_.size() != nodes_.size() || grads_[v.id].empty()) return Tensor(val.rows(), val.cols());
  return grads_[v.id];
}

namespace {

Var unary(Primitive kind, Var a, PrimitiveArgs args = {}) { return a.graph->apply(kind, {a}, args); }
Var binary(Primitive kind, Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) {
    throw ContractViolation(std::string(primitive_name(kind)) + ": operands on different graphs");
  }
  return a.graph->apply(kind, {a, b});
}
Var many(Primitive kind, std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation(std::string(primitive_name(kind)) + ": no inputs");
  return parts.front().graph->apply(kind, parts);
}

}  // namespace

Var matmul(Var a, Var b) { return binary(Primitive::matmul, a, b); }
Var add(Var a, Var b) { return binary(Primitive::add, a, b); }
Var sub(Var a, Var b) { return binary(Primitive::sub, a, b); }
Var mul(Var a, Var b) { return binary(Primitive::mul, a, b); }
Var add_row(Var m, Var row) { return binary(Primitive::add_row, m, row); }
Var tanh(Var a) { return unary(Primitive::tanh, a); }
Var sigmoid(Var a) { return unary(Primitive::sigmoid, a); }
Var exp(Var a) { return unary(Primitive::exp, a); }
Var log(Var a) { return unary(Primitive::log, a); }
Var concat_rows(std::span<const Var> parts) { return many(Primitive::concat_rows, parts); }
Var concat_cols(std::span<const Var> parts) { return many(Primitive::concat_cols, parts); }
Var concat_cols(std::initializer_list<Var> parts) {
  return many(Primitive::concat_cols, std::span<const Var>(parts.begin(), parts.size()));
}
Var lookup(Var table, int row) { return unary(Primitive::lookup, table, {.index = row}); }
Var sum(Var a) { return unary(Primitive::sum, a); }
Var softmax(Var a) { return unary(Primitive::softmax, a); }
Var log_softmax(Var a) { return unary(Primitive::log_softmax, a); }
Var scale(Var a, double factor, double shift) {
  return unary(Primitive::scale, a, {.factor = factor, .shift = shift});
}
Var transpose(Var a) { return unary(Primitive::transpose, a); }
Var pick(Var a, int flat_index) { return unary(Primitive::pick, a, {.index = flat_index}); }
Var straight_through(Var soft, Var hard) { return binary(Primitive::straight_through, soft, hard); }

}  // namespace delib
