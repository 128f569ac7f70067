#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "delib/tensor.hpp"

namespace delib {

class Rng;

/// Named parameter tensors. Each entry is held through a shared handle so two
/// tables can alias the same storage (see share()). Copying a table deep-copies
/// every tensor; aliases between tables are not preserved by a copy.
class ParameterTable {
 public:
  ParameterTable() = default;
  ParameterTable(const ParameterTable& other);
  ParameterTable& operator=(const ParameterTable& other);
  ParameterTable(ParameterTable&&) noexcept = default;
  ParameterTable& operator=(ParameterTable&&) noexcept = default;

  void add(const std::string& name, Tensor value);
  /// Registers an existing storage handle under `name` (no copy).
  void share(const std::string& name, std::shared_ptr<Tensor> storage);
  /// Points an existing entry at different storage (shapes must agree).
  void rebind(const std::string& name, std::shared_ptr<Tensor> storage);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::shared_ptr<Tensor> handle(const std::string& name) const;

  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Table whose entries alias those of `a` and `b`; names present in both
  /// must refer to the same storage.
  static ParameterTable view_union(const ParameterTable& a, const ParameterTable& b);

 private:
  std::map<std::string, std::shared_ptr<Tensor>> entries_;
};

/// uniform(-bound, bound) for every entry whose name does not end in a bias
/// suffix; biases are zeroed.
void initialize_uniform(ParameterTable& table, Rng& rng, double bound = 0.08);

/// Parameter name -> gradient tensor of the same shape.
class GradientMap {
 public:
  GradientMap() = default;
  /// Zero gradient for every entry of `params`.
  static GradientMap zeros_like(const ParameterTable& params);

  Tensor& operator[](const std::string& name) { return grads_[name]; }
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return grads_.count(name) != 0; }
  std::vector<std::string> keys() const;
  std::size_t size() const { return grads_.size(); }

  /// this += scale * other; keys missing here are inserted.
  void accumulate(const GradientMap& other, double scale = 1.0);
  void scale(double factor);
  double squared_norm() const;
  bool all_finite() const;
  /// Coordinates flattened in key order.
  std::vector<double> flatten() const;

  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

  friend bool operator==(const GradientMap&, const GradientMap&) = default;

 private:
  std::map<std::string, Tensor> grads_;
};

/// Largest absolute coordinate difference over the union of keys (missing = 0).
double max_abs_difference(const GradientMap& a, const GradientMap& b);

}  // namespace delib
