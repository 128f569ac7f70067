#include "delib/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace delib {

double EstimatorStats::max_abs_z(std::size_t begin, std::size_t end) const {
  end = std::min(end, z.size());
  double worst = 0.0;
  for (std::size_t i = begin; i < end; ++i) worst = std::max(worst, std::abs(z[i]));
  return worst;
}

std::size_t EstimatorStats::worst_coordinate() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    if (std::abs(z[i]) > std::abs(z[best])) best = i;
  }
  return best;
}

PassGradients estimator_draw(const DelibModel& model, const Batch& batch, const Scheme& scheme,
                             int M, int max_len, std::uint64_t seed) {
  const auto samples = draw_batch_samples(model.first, batch, M, SamplingStrategy::ancestral(),
                                          IntermediateMode::free_running, max_len, seed,
                                          Execution::serial);
  switch (scheme.kind) {
    case Scheme::Kind::joint_grad:
      return joint_grad_step(model, batch, samples, Execution::serial).grads;
    case Scheme::Kind::joint_loss:
      return joint_loss_step(model, batch, samples, scheme.temperature, scheme.relaxation, max_len,
                             Execution::serial)
          .grads;
    case Scheme::Kind::separate: {
      PassGradients g;
      g.first = nll_teacher_forcing(model.first, batch, Execution::serial).grad;
      g.second = separate_train_second(model.second, batch, samples, Execution::serial).grads.second;
      return g;
    }
  }
  throw ContractViolation("unknown scheme");
}

namespace {

std::vector<std::string> coordinate_labels(const PassGradients& g) {
  std::vector<std::string> out;
  for (const auto* part : {&g.first, &g.second}) {
    const char* tag = part == &g.first ? "first/" : "second/";
    for (const auto& [name, t] : *part) {
      for (std::size_t i = 0; i < t.size(); ++i) out.push_back(tag + name + "[" + std::to_string(i) + "]");
    }
  }
  return out;
}

}  // namespace

EstimatorStats verify_estimator(const DelibModel& model, const Batch& batch, const Scheme& scheme,
                                int M, std::size_t trials, std::uint64_t seed, int max_len,
                                Execution exec, std::uint64_t cap) {
  if (trials < 2) throw ContractViolation("estimator verification needs at least 2 trials");
  if (M < 1) throw ContractViolation("sample count M must be >= 1");
  const EnumeratedSpace space = enumerate_space(model.config().vocab_size, max_len, cap);
  const PassGradients exact = exact_gradients(model, batch, space, Objective::bound, exec);

  EstimatorStats st;
  st.labels = coordinate_labels(exact);
  st.exact = exact.flatten();
  st.first_count = exact.first.flatten().size();
  st.trials = trials;
  st.samples = M;
  const std::size_t n = st.exact.size();
  st.mean.assign(n, 0.0);
  std::vector<double> m2(n, 0.0);

  // Welford updates in ascending trial order.
  map_fold<std::vector<double>>(
      trials, exec,
      [&](std::size_t k) { return estimator_draw(model, batch, scheme, M, max_len, Rng::mix(seed, k)).flatten(); },
      [&](std::size_t k, const std::vector<double>& v) {
        if (v.size() != n) throw ContractViolation("estimator returned a gradient of the wrong size");
        const double count = static_cast<double>(k + 1);
        for (std::size_t i = 0; i < n; ++i) {
          const double delta = v[i] - st.mean[i];
          st.mean[i] += delta / count;
          m2[i] += delta * (v[i] - st.mean[i]);
        }
      });

  st.variance.resize(n);
  st.z.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    st.variance[i] = std::max(0.0, m2[i] / static_cast<double>(trials - 1));
    const double diff = st.mean[i] - st.exact[i];
    const double se = std::sqrt(st.variance[i] / static_cast<double>(trials));
    if (se > 0.0) {
      st.z[i] = diff / se;
    } else {
      const bool equal = std::abs(diff) <= 1e-12 * std::max(1.0, std::abs(st.exact[i]));
      st.z[i] = equal ? 0.0 : std::numeric_limits<double>::infinity();
    }
  }
  return st;
}

double variance_ratio(const EstimatorStats& a, const EstimatorStats& b) {
  if (a.first_count != b.first_count || a.variance.size() != b.variance.size()) {
    throw ContractViolation("variance_ratio: estimator statistics cover different coordinates");
  }
  double top = 0.0;
  for (std::size_t i = 0; i < b.first_count; ++i) top = std::max(top, b.variance[i]);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < b.first_count; ++i) {
    if (b.variance[i] > 1e-10 * top) {
      total += a.variance[i] / b.variance[i];
      ++used;
    }
  }
  if (used == 0) throw ContractViolation("variance_ratio: no coordinate with positive variance");
  return total / static_cast<double>(used);
}

}  // namespace delib
