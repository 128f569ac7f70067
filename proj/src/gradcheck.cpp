#include "delib/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace delib {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error << " tol=" << tol;
  if (!passed) {
    for (const auto& e : entries) {
      if (e.max_rel_error >= tol) {
        os << " [" << e.name << "#" << e.worst_index << " rel=" << e.max_rel_error << "]";
      }
    }
  }
  return os.str();
}

GradCheckReport finite_diff_check(const std::function<double()>& f, ParameterTable& params,
                                  const GradientMap& analytic, const GradCheckOptions& opts) {
  if (!(opts.step > 0.0)) throw ContractViolation("finite_diff_check: step must be positive");
  const double base = f();
  const double again = f();
  if (std::memcmp(&base, &again, sizeof(double)) != 0) {
    throw VerificationInvalid("finite_diff_check: function is not deterministic (" +
                              std::to_string(base) + " vs " + std::to_string(again) + ")");
  }

  GradCheckReport report;
  report.tol = opts.tol;
  for (const auto& name : params.names()) {
    Tensor& p = params.at(name);
    GradCheckEntry entry{.name = name};
    const Tensor* a = analytic.contains(name) ? &analytic.at(name) : nullptr;
    if (a && !a->same_shape(p)) {
      throw ContractViolation("finite_diff_check: gradient '" + name + "' has shape " +
                              a->shape_string() + ", parameter " + p.shape_string());
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + opts.step;
      const double up = f();
      p[i] = orig - opts.step;
      const double down = f();
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double exact = a ? (*a)[i] : 0.0;
      const double abs_err = std::abs(exact - numeric);
      const double rel =
          abs_err / std::max({std::abs(exact), std::abs(numeric), opts.scale_floor});
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
      }
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < opts.tol;
  return report;
}

GradCheckReport finite_diff_check(const std::function<Var(Graph&)>& build, ParameterTable& params,
                                  int group, const GradCheckOptions& opts) {
  GradientMap analytic;
  {
    Graph g;
    Var loss = build(g);
    analytic = g.backward(loss, params, group);
  }
  auto value = [&] {
    Graph g;
    return build(g).value().item();
  };
  return finite_diff_check(value, params, analytic, opts);
}

}  // namespace delib
