#include "delib/oracle.hpp"

#include <cmath>
#include <limits>

#include "delib/scoring.hpp"

namespace delib {

CapacityError::CapacityError(std::uint64_t count, std::uint64_t cap)
    : std::runtime_error("output space has " +
                         (count == std::numeric_limits<std::uint64_t>::max()
                              ? std::string("more than 2^64-1")
                              : std::to_string(count)) +
                         " sequences, above the capacity cap of " + std::to_string(cap)),
      count_(count),
      cap_(cap) {}

namespace {

std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    return std::numeric_limits<std::uint64_t>::max();
  }
  return a * b;
}

std::uint64_t sat_add(std::uint64_t a, std::uint64_t b) {
  return b > std::numeric_limits<std::uint64_t>::max() - a ? std::numeric_limits<std::uint64_t>::max()
                                                          : a + b;
}

// All content-token strings of length k, in lexicographic order, each
// followed by `suffix` when it is not BOS.
void append_strings(int V, int k, Token suffix, std::vector<TokenSeq>& out) {
  TokenSeq cur(k, 2);
  while (true) {
    TokenSeq s = cur;
    if (suffix != Vocab::bos) s.push_back(suffix);
    out.push_back(std::move(s));
    int pos = k - 1;
    while (pos >= 0 && cur[pos] == V - 1) cur[pos--] = 2;
    if (pos < 0) break;
    ++cur[pos];
  }
}

}  // namespace

std::uint64_t space_size(int vocab_size, int max_len) {
  Vocab v(vocab_size);
  if (max_len < 1) throw ContractViolation("T_max must be >= 1");
  const std::uint64_t C = static_cast<std::uint64_t>(v.content_count());
  std::uint64_t total = 0, power = 1;
  for (int k = 0; k < max_len; ++k) {
    total = sat_add(total, power);
    power = sat_mul(power, C);
  }
  return sat_add(total, power);
}

EnumeratedSpace enumerate_space(int vocab_size, int max_len, std::uint64_t cap) {
  const std::uint64_t count = space_size(vocab_size, max_len);
  if (count > cap) throw CapacityError(count, cap);
  EnumeratedSpace space{vocab_size, max_len, {}};
  space.sequences.reserve(count);
  for (int k = 0; k < max_len; ++k) append_strings(vocab_size, k, Vocab::eos, space.sequences);
  append_strings(vocab_size, max_len, Vocab::bos, space.sequences);
  return space;
}

double batch_weight(const Batch& batch) {
  if (batch.empty()) throw ContractViolation("batch is empty");
  double w = 0.0;
  for (const auto& ex : batch) {
    if (!(ex.weight > 0.0)) throw ContractViolation("example weights must be positive");
    w += ex.weight;
  }
  return w;
}

namespace {

void check_space(const DelibModel& model, const EnumeratedSpace& space) {
  if (space.vocab_size != model.config().vocab_size || space.sequences.empty()) {
    throw ContractViolation("enumerated space (V=" + std::to_string(space.vocab_size) +
                            ") does not match model vocabulary (V=" +
                            std::to_string(model.config().vocab_size) + ")");
  }
}

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double a : v) m = std::max(m, a);
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

}  // namespace

SpaceTerms space_terms(const DelibModel& model, const TokenSeq& x, const TokenSeq& y,
                       const EnumeratedSpace& space, Execution exec) {
  check_space(model, space);
  SpaceTerms out;
  out.log_first.resize(space.size());
  out.log_second.resize(space.size());
  for_each_index(space.size(), exec, [&](std::size_t i) {
    const TokenSeq& yi = space.sequences[i];
    out.log_first[i] = teacher_forced_logprob(x, yi, model.first).total;
    out.log_second[i] = second_pass_logprob(x, features_for(model.first, x, yi), y, model.second).total;
  });
  return out;
}

double exact_marginal(const DelibModel& model, const TokenSeq& x, const TokenSeq& y,
                      const EnumeratedSpace& space, Execution exec) {
  SpaceTerms t = space_terms(model, x, y, space, exec);
  double total = 0.0;
  for (std::size_t i = 0; i < space.size(); ++i) total += std::exp(t.log_first[i] + t.log_second[i]);
  return total;
}

ExactLosses exact_losses(const DelibModel& model, const TokenSeq& x, const TokenSeq& y,
                         const EnumeratedSpace& space, Execution exec) {
  SpaceTerms t = space_terms(model, x, y, space, exec);
  std::vector<double> joint(space.size());
  ExactLosses out;
  for (std::size_t i = 0; i < space.size(); ++i) {
    joint[i] = t.log_first[i] + t.log_second[i];
    out.bound -= std::exp(t.log_first[i]) * t.log_second[i];
  }
  out.naive = -log_sum_exp(joint);
  return out;
}

ExactLosses exact_losses(const DelibModel& model, const Batch& batch, const EnumeratedSpace& space,
                         Execution exec) {
  const double total_w = batch_weight(batch);
  ExactLosses out;
  for (const auto& ex : batch) {
    ExactLosses l = exact_losses(model, ex.x, ex.y, space, exec);
    out.naive += ex.weight / total_w * l.naive;
    out.bound += ex.weight / total_w * l.bound;
  }
  return out;
}

PassGradients exact_gradients(const DelibModel& model, const TokenSeq& x, const TokenSeq& y,
                              const EnumeratedSpace& space, Objective which, Execution exec) {
  check_space(model, space);
  // Naive weights need the normalizer first.
  double log_norm = 0.0;
  if (which == Objective::naive) {
    SpaceTerms t = space_terms(model, x, y, space, exec);
    std::vector<double> joint(space.size());
    for (std::size_t i = 0; i < space.size(); ++i) joint[i] = t.log_first[i] + t.log_second[i];
    log_norm = log_sum_exp(joint);
  }
  struct Terms {
    ScoredTerm first, second;
  };
  PassGradients out = PassGradients::zeros_like(model);
  map_fold<Terms>(
      space.size(), exec,
      [&](std::size_t i) {
        const TokenSeq& yi = space.sequences[i];
        return Terms{first_pass_term(model.first, x, yi),
                     second_pass_term(model.second, x, features_for(model.first, x, yi), y)};
      },
      [&](std::size_t, const Terms& t) {
        if (which == Objective::bound) {
          const double f1 = std::exp(t.first.logp);
          out.first.accumulate(t.first.grad, -f1 * t.second.logp);
          out.second.accumulate(t.second.grad, -f1);
        } else {
          const double w = std::exp(t.first.logp + t.second.logp - log_norm);
          out.first.accumulate(t.first.grad, -w);
          out.second.accumulate(t.second.grad, -w);
        }
      });
  return out;
}

PassGradients exact_gradients(const DelibModel& model, const Batch& batch,
                              const EnumeratedSpace& space, Objective which, Execution exec) {
  const double total_w = batch_weight(batch);
  PassGradients out = PassGradients::zeros_like(model);
  for (const auto& ex : batch) {
    out.accumulate(exact_gradients(model, ex.x, ex.y, space, which, exec), ex.weight / total_w);
  }
  return out;
}

}  // namespace delib
