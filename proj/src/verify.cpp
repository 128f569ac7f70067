#include "delib/verify.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "delib/estimator.hpp"
#include "delib/gradcheck.hpp"
#include "delib/scoring.hpp"

namespace delib {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

struct Instance {
  DelibModel model;
  EnumeratedSpace space;
  Example ex;
};

ModelConfig tiny_config(int V, int d, bool ctx, bool extras) {
  ModelConfig c;
  c.vocab_size = V;
  c.width = d;
  c.context_in_state = ctx;
  c.intermediate_extras = extras;
  c.init_bound = 0.8;  // large enough for clearly non-uniform distributions
  return c;
}

TokenSeq random_input(Rng& rng, int V, int len) {
  TokenSeq x;
  for (int i = 0; i < len; ++i) x.push_back(2 + static_cast<Token>(rng.below(V - 2)));
  x.push_back(Vocab::eos);
  return x;
}

Instance random_instance(const VerifySection& v, Rng& rng) {
  const int V = 3 + static_cast<int>(rng.below(v.vocab_size - 2));
  const int T = 1 + static_cast<int>(rng.below(v.max_len));
  const bool ctx = rng.bernoulli(0.5), extras = rng.bernoulli(0.5);
  DelibModel m = DelibModel::create(tiny_config(V, v.width, ctx, extras), rng.next_u64());
  EnumeratedSpace space = enumerate_space(V, T);
  TokenSeq x = random_input(rng, V, 1 + static_cast<int>(rng.below(3)));
  TokenSeq y = space.sequences[rng.below(space.size())];
  return {std::move(m), std::move(space), {std::move(x), std::move(y), 1.0}};
}

// A fixed small instance for the checks that need one model and batch.
struct Fixture {
  int V, T;
  ModelConfig config;
  Batch batch;
};

Fixture fixture(const VerifySection& v, std::uint64_t seed, bool ctx, bool extras) {
  Rng rng = Rng::derive(seed, {7});
  Fixture f{std::min(v.vocab_size, 4), std::min(v.max_len, 3), {}, {}};
  f.config = tiny_config(f.V, v.width, ctx, extras);
  f.batch.push_back({random_input(rng, f.V, 2), random_input(rng, f.V, std::max(0, f.T - 1)), 1.0});
  f.batch.push_back({random_input(rng, f.V, 1), {Vocab::eos}, 2.0});
  return f;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

template <class Fn>
auto timed(Fn&& fn) {
  const auto t0 = Clock::now();
  auto r = fn();
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  if constexpr (std::is_same_v<decltype(r), CheckResult>) {
    r.seconds = s;
  } else {
    for (auto& c : r) c.seconds = s / static_cast<double>(r.size());
  }
  return r;
}

CheckResult gradcheck_result(const std::string& name, const GradCheckReport& rep) {
  CheckResult c = check_at_most(name, rep.max_rel_error, rep.tol, rep.passed ? "" : rep.summary());
  c.passed = c.passed && rep.passed;
  return c;
}

}  // namespace

double CheckResult::margin() const {
  if (relation == "<=" || relation == "<") return threshold - value;
  if (relation == ">=") return value - threshold;
  return std::min(value - threshold, upper - value);
}

json CheckResult::to_json() const {
  json j{{"name", name}, {"passed", passed}, {"value", value}, {"relation", relation}, {"threshold", threshold},
         {"margin", margin()}};
  if (relation == "in") j["upper"] = upper;
  if (!detail.empty()) j["detail"] = detail;
  return j;
}

std::string CheckResult::line() const {
  std::string bound = relation == "in" ? "in [" + fmt(threshold) + ", " + fmt(upper) + "]" : relation + " " + fmt(threshold);
  return std::string(passed ? "PASS " : "FAIL ") + name + ": " + fmt(value) + " " + bound + " (margin " + fmt(margin()) +
         ")" + (detail.empty() ? "" : " " + detail);
}

bool VerifyReport::passed() const {
  for (const auto& c : checks) {
    if (!c.passed) return false;
  }
  return !checks.empty();
}

json VerifyReport::to_json() const {
  json arr = json::array();
  for (const auto& c : checks) arr.push_back(c.to_json());
  return json{{"passed", passed()}, {"checks", arr}};
}

CheckResult check_at_most(std::string name, double value, double threshold, std::string detail) {
  return {std::move(name), value <= threshold, value, "<=", threshold, 0.0, std::move(detail)};
}

CheckResult check_at_least(std::string name, double value, double threshold, std::string detail) {
  return {std::move(name), value >= threshold, value, ">=", threshold, 0.0, std::move(detail)};
}

CheckResult check_within(std::string name, double value, double lo, double hi, std::string detail) {
  return {std::move(name), value >= lo && value <= hi, value, "in", lo, hi, std::move(detail)};
}

std::vector<CheckResult> check_upper_bound(const VerifySection& v, std::uint64_t seed, Execution exec) {
  Rng rng = Rng::derive(seed, {1});
  double min_gap = std::numeric_limits<double>::infinity(), max_point_gap = 0.0;
  int violations = 0;
  for (int i = 0; i < v.instances; ++i) {
    Instance in = random_instance(v, rng);
    const ExactLosses l = exact_losses(in.model, in.ex.x, in.ex.y, in.space, exec);
    min_gap = std::min(min_gap, l.bound - l.naive);
    violations += l.bound < l.naive - 1e-9;
    DelibModel pm = in.model;
    make_point_mass(pm.first, Vocab::output_token(static_cast<int>(rng.below(in.model.config().vocab_size - 1))));
    const ExactLosses p = exact_losses(pm, in.ex.x, in.ex.y, in.space, exec);
    max_point_gap = std::max(max_point_gap, std::abs(p.bound - p.naive));
  }
  return {check_at_least("upper_bound_inequality", min_gap, -1e-9,
                         std::to_string(v.instances - violations) + "/" + std::to_string(v.instances) + " instances"),
          check_at_most("upper_bound_point_mass_equality", max_point_gap, 1e-9)};
}

std::vector<CheckResult> check_normalization(const VerifySection& v, std::uint64_t seed, Execution exec) {
  Rng rng = Rng::derive(seed, {2});
  double first_err = 0.0, marginal_err = 0.0;
  for (int i = 0; i < 20; ++i) {
    Instance in = random_instance(v, rng);
    const auto probs = map_indices<std::pair<double, double>>(in.space.size(), exec, [&](std::size_t k) {
      const TokenSeq& y = in.space.sequences[k];
      return std::pair{std::exp(teacher_forced_logprob(in.ex.x, y, in.model.first).total),
                       exact_marginal(in.model, in.ex.x, y, in.space)};
    });
    double a = 0.0, b = 0.0;
    for (const auto& [p, q] : probs) a += p, b += q;
    first_err = std::max(first_err, std::abs(a - 1.0));
    marginal_err = std::max(marginal_err, std::abs(b - 1.0));
  }
  return {check_at_most("normalization_first_pass", first_err, 1e-9),
          check_at_most("normalization_marginal", marginal_err, 1e-9)};
}

std::vector<CheckResult> check_gradients(const VerifySection& v, std::uint64_t seed, Execution exec) {
  std::vector<CheckResult> out;
  // Extras enter the second pass as constants, so the checks run without them.
  const Fixture f = fixture(v, seed, true, false);
  DelibModel m = DelibModel::create(f.config, Rng::mix(seed, 3));
  const EnumeratedSpace space = enumerate_space(f.V, f.T);
  ParameterTable all = m.all_parameters();

  {
    LossAndGrad lg = nll_teacher_forcing(m.first, f.batch, exec);
    out.push_back(gradcheck_result(
        "gradcheck_nll",
        finite_diff_check([&] { return nll_teacher_forcing(m.first, f.batch, exec).loss; }, m.first.table, lg.grad)));
  }
  for (Objective which : {Objective::naive, Objective::bound}) {
    GradientMap g = exact_gradients(m, f.batch, space, which, exec).merged();
    auto loss = [&] {
      ExactLosses l = exact_losses(m, f.batch, space, exec);
      return which == Objective::bound ? l.bound : l.naive;
    };
    out.push_back(gradcheck_result(which == Objective::bound ? "gradcheck_exact_bound" : "gradcheck_exact_naive",
                                   finite_diff_check(loss, all, g)));
  }
  {
    RiskFn risk = distance_risk(Distance::levenshtein);
    LossAndGrad lg = mbr_loss(m.first, f.batch, risk, MbrMode::exact_sum(), f.T, exec);
    out.push_back(gradcheck_result(
        "gradcheck_mbr_exact",
        finite_diff_check([&] { return mbr_loss(m.first, f.batch, risk, MbrMode::exact_sum(), f.T, exec).loss; },
                          m.first.table, lg.grad)));
  }
  const auto samples = draw_batch_samples(m.first, f.batch, 2, SamplingStrategy::ancestral(),
                                          IntermediateMode::free_running, f.T, Rng::mix(seed, 4), exec);
  {
    const double g = 0.3;
    TrainStep st = guided_attention_step(m.second, f.batch, samples, g, exec);
    out.push_back(gradcheck_result(
        "gradcheck_guided_attention",
        finite_diff_check(
            [&] { return guided_attention_step(m.second, f.batch, samples, g, exec).report.losses.at("guided_attention"); },
            m.second.table, st.grads.second)));
  }
  {
    TrainStep st = combined_second_pass_loss(m.second, f.batch, samples, 1.0, 0.3, exec);
    out.push_back(gradcheck_result(
        "gradcheck_combined",
        finite_diff_check(
            [&] {
              return combined_second_pass_loss(m.second, f.batch, samples, 1.0, 0.3, exec).report.losses.at("combined");
            },
            m.second.table, st.grads.second)));
  }
  {
    const double tau = 0.7;
    TrainStep st = joint_loss_step(m, f.batch, samples, tau, Relaxation::relaxed, f.T, exec);
    out.push_back(gradcheck_result(
        "gradcheck_relaxed_joint_loss",
        finite_diff_check(
            [&] {
              return joint_loss_step(m, f.batch, samples, tau, Relaxation::relaxed, f.T, exec).report.losses.at("joint");
            },
            all, st.grads.merged())));
  }
  return out;
}

CheckResult check_estimator_bias(const VerifySection& v, std::uint64_t seed, Execution exec) {
  const Fixture f = fixture(v, seed, false, false);
  const DelibModel m = DelibModel::create(f.config, Rng::mix(seed, 5));
  const Batch one{f.batch.front()};
  Scheme s;
  s.kind = Scheme::Kind::joint_grad;
  EstimatorStats st = verify_estimator(m, one, s, 1, v.trials, Rng::mix(seed, 6), f.T, exec);
  const std::size_t worst = st.worst_coordinate();
  CheckResult c = check_at_most("estimator_unbiased_max_abs_z", st.max_abs_z(), v.z_threshold,
                                std::to_string(st.mean.size()) + " coordinates, " + std::to_string(st.trials) +
                                    " trials, worst " + st.labels[worst]);
  c.relation = "<";
  c.passed = st.max_abs_z() < v.z_threshold;
  return c;
}

CheckResult check_variance_scaling(const VerifySection& v, std::uint64_t seed, Execution exec) {
  const Fixture f = fixture(v, seed, false, false);
  const DelibModel m = DelibModel::create(f.config, Rng::mix(seed, 5));
  const Batch one{f.batch.front()};
  Scheme s;
  s.kind = Scheme::Kind::joint_grad;
  EstimatorStats m1 = verify_estimator(m, one, s, 1, v.trials, Rng::mix(seed, 8), f.T, exec);
  EstimatorStats m4 = verify_estimator(m, one, s, 4, v.trials, Rng::mix(seed, 9), f.T, exec);
  return check_within("variance_ratio_m4_over_m1", variance_ratio(m4, m1), 0.1875, 0.3125,
                      std::to_string(v.trials) + " trials each");
}

CheckResult check_scheme_equivalence(const VerifySection& v, std::uint64_t seed, Execution exec) {
  double worst = 0.0;
  for (bool extras : {false, true}) {
    const Fixture f = fixture(v, seed, extras, extras);
    const DelibModel m = DelibModel::create(f.config, Rng::mix(seed, 10 + extras));
    const auto samples = draw_batch_samples(m.first, f.batch, 3, SamplingStrategy::ancestral(),
                                            IntermediateMode::free_running, f.T, Rng::mix(seed, 12), exec);
    const GradientMap jg = joint_grad_step(m, f.batch, samples, exec).grads.second;
    const GradientMap jl =
        joint_loss_step(m, f.batch, samples, 1.0, Relaxation::straight_through, f.T, exec).grads.second;
    const GradientMap sp = separate_train_second(m.second, f.batch, samples, exec).grads.second;
    worst = std::max({worst, max_abs_difference(jg, jl), max_abs_difference(jg, sp)});
  }
  return check_at_most("scheme_equivalence_second_pass", worst, 1e-12);
}

CheckResult check_mbr_identity(const VerifySection& v, std::uint64_t seed, Execution exec) {
  Rng rng = Rng::derive(seed, {13});
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    Instance in = random_instance(v, rng);
    const DelibModel& m = in.model;
    RiskFn risk = [&](const Example& e, const TokenSeq& hyp) {
      return -second_pass_logprob(e.x, features_for(m.first, e.x, hyp), e.y, m.second).total;
    };
    const int T = in.space.max_len;
    LossAndGrad mbr = mbr_loss(m.first, {in.ex}, risk, MbrMode::exact_sum(), T, exec);
    const double bound = exact_losses(m, in.ex.x, in.ex.y, in.space, exec).bound;
    const PassGradients g = exact_gradients(m, in.ex.x, in.ex.y, in.space, Objective::bound, exec);
    worst = std::max({worst, std::abs(mbr.loss - bound), max_abs_difference(mbr.grad, g.first)});
  }
  return check_at_most("mbr_identity", worst, 1e-12, "20 instances, loss and theta^I gradient");
}

CheckResult check_guided_diagonal() {
  double worst = 0.0;
  for (int T = 1; T <= 6; ++T) {
    Tensor diag(T, T);
    for (int t = 0; t < T; ++t) diag(t, t) = 1.0;
    for (double g : {0.05, 0.2, 1.0}) worst = std::max(worst, guided_attention_loss(diag, g));
  }
  return check_at_most("guided_attention_diagonal_zero", worst, 0.0);
}

VerifyReport run_verification(const VerifySection& v, std::uint64_t seed, Execution exec) {
  VerifyReport r;
  auto add = [&](auto&& produced) {
    if constexpr (std::is_same_v<std::decay_t<decltype(produced)>, CheckResult>) {
      spdlog::debug("{} [{:.1f}s]", produced.line(), produced.seconds);
      r.checks.push_back(produced);
    } else {
      for (const auto& c : produced) {
        spdlog::debug("{} [{:.1f}s]", c.line(), c.seconds);
        r.checks.push_back(c);
      }
    }
  };
  add(timed([&] { return check_upper_bound(v, seed, exec); }));
  add(timed([&] { return check_normalization(v, seed, exec); }));
  add(timed([&] { return check_gradients(v, seed, exec); }));
  add(timed([&] { return check_estimator_bias(v, seed, exec); }));
  add(timed([&] { return check_variance_scaling(v, seed, exec); }));
  add(timed([&] { return check_scheme_equivalence(v, seed, exec); }));
  add(timed([&] { return check_mbr_identity(v, seed, exec); }));
  add(timed([&] { return check_guided_diagonal(); }));
  return r;
}

}  // namespace delib
