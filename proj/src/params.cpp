#include "delib/params.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "delib/rng.hpp"

namespace delib {

ParameterTable::ParameterTable(const ParameterTable& other) {
  for (const auto& [name, storage] : other.entries_) {
    entries_.emplace(name, std::make_shared<Tensor>(*storage));
  }
}

ParameterTable& ParameterTable::operator=(const ParameterTable& other) {
  if (this != &other) {
    ParameterTable copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void ParameterTable::add(const std::string& name, Tensor value) {
  share(name, std::make_shared<Tensor>(std::move(value)));
}

void ParameterTable::share(const std::string& name, std::shared_ptr<Tensor> storage) {
  if (!storage || storage->empty()) {
    throw ContractViolation("parameter '" + name + "' has no storage");
  }
  if (!entries_.emplace(name, std::move(storage)).second) {
    throw ContractViolation("duplicate parameter name '" + name + "'");
  }
}

void ParameterTable::rebind(const std::string& name, std::shared_ptr<Tensor> storage) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  if (!storage || !storage->same_shape(*it->second)) {
    throw ContractViolation("rebind of '" + name + "' needs storage of shape " +
                            it->second->shape_string());
  }
  it->second = std::move(storage);
}

const Tensor& ParameterTable::at(const std::string& name) const { return *handle(name); }

Tensor& ParameterTable::at(const std::string& name) { return *handle(name); }

std::shared_ptr<Tensor> ParameterTable::handle(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParameterTable::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParameterTable::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t->size();
  return n;
}

ParameterTable ParameterTable::view_union(const ParameterTable& a, const ParameterTable& b) {
  ParameterTable out;
  out.entries_ = a.entries_;
  for (const auto& [name, storage] : b.entries_) {
    auto [it, inserted] = out.entries_.emplace(name, storage);
    if (!inserted && it->second != storage) {
      throw ContractViolation("parameter '" + name + "' refers to different storage in union");
    }
  }
  return out;
}

void initialize_uniform(ParameterTable& table, Rng& rng, double bound) {
  for (const auto& name : table.names()) {
    Tensor& t = table.at(name);
    const auto dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    const bool bias = !leaf.empty() && leaf[0] == 'b';
    for (double& v : t.values()) v = bias ? 0.0 : rng.uniform(-bound, bound);
  }
}

GradientMap GradientMap::zeros_like(const ParameterTable& params) {
  GradientMap g;
  for (const auto& [name, storage] : params) {
    g.grads_.emplace(name, Tensor(storage->rows(), storage->cols()));
  }
  return g;
}

const Tensor& GradientMap::at(const std::string& name) const {
  auto it = grads_.find(name);
  if (it == grads_.end()) throw ContractViolation("no gradient for '" + name + "'");
  return it->second;
}

std::vector<std::string> GradientMap::keys() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : grads_) out.push_back(name);
  return out;
}

void GradientMap::accumulate(const GradientMap& other, double scale) {
  for (const auto& [name, g] : other.grads_) {
    auto it = grads_.find(name);
    if (it == grads_.end()) {
      Tensor t(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) t[i] = scale * g[i];
      grads_.emplace(name, std::move(t));
      continue;
    }
    if (!it->second.same_shape(g)) {
      throw ContractViolation("gradient '" + name + "' shape " + it->second.shape_string() +
                              " vs " + g.shape_string());
    }
    Tensor& dst = it->second;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
  }
}

void GradientMap::scale(double factor) {
  for (auto& [_, g] : grads_) {
    for (double& v : g.values()) v *= factor;
  }
}

double GradientMap::squared_norm() const {
  double s = 0.0;
  for (const auto& [_, g] : grads_) {
    for (double v : g.values()) s += v * v;
  }
  return s;
}

bool GradientMap::all_finite() const {
  return std::all_of(grads_.begin(), grads_.end(),
                     [](const auto& kv) { return kv.second.all_finite(); });
}

std::vector<double> GradientMap::flatten() const {
  std::vector<double> out;
  for (const auto& [_, g] : grads_) out.insert(out.end(), g.values().begin(), g.values().end());
  return out;
}

double max_abs_difference(const GradientMap& a, const GradientMap& b) {
  double worst = 0.0;
  auto scan = [&](const GradientMap& x, const GradientMap& y, bool skip_common) {
    for (const auto& [name, gx] : x) {
      if (y.contains(name)) {
        if (skip_common) continue;
        const Tensor& gy = y.at(name);
        if (!gx.same_shape(gy)) return std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < gx.size(); ++i) worst = std::max(worst, std::abs(gx[i] - gy[i]));
      } else {
        for (double v : gx.values()) worst = std::max(worst, std::abs(v));
      }
    }
    return worst;
  };
  if (std::isinf(scan(a, b, false))) return std::numeric_limits<double>::infinity();
  scan(b, a, true);
  return worst;
}

}  // namespace delib
