#include <cmath>

#include "delib/estimator.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace delib;
using namespace delib::testing;

namespace {

const Batch kOne{{{2, 3, 1}, {3, 2, 1}, 1.0}};

Scheme scheme_of(Scheme::Kind kind) {
  Scheme s;
  s.kind = kind;
  return s;
}

}  // namespace

TEST_CASE("joint_grad estimator is unbiased for the bound gradients") {
  DelibModel m = DelibModel::create(tiny(4, 2), 3);
  EstimatorStats st = verify_estimator(m, kOne, scheme_of(Scheme::Kind::joint_grad), 1, 10000, 7, 3);
  CHECK(st.trials == 10000);
  CHECK(st.first_count > 0);
  CHECK(st.labels.size() == st.mean.size());
  for (double v : st.variance) CHECK(v >= 0.0);
  CHECK_MESSAGE(st.max_abs_z() < 4.0, st.labels[st.worst_coordinate()], " z=", st.z[st.worst_coordinate()]);
}

TEST_CASE("estimator variance shrinks as 1/M") {
  DelibModel m = DelibModel::create(tiny(4, 2), 3);
  const Scheme s = scheme_of(Scheme::Kind::joint_grad);
  EstimatorStats one = verify_estimator(m, kOne, s, 1, 10000, 11, 3);
  EstimatorStats four = verify_estimator(m, kOne, s, 4, 10000, 12, 3);
  const double ratio = variance_ratio(four, one);
  CHECK(ratio >= 0.1875);
  CHECK(ratio <= 0.3125);
}

TEST_CASE("separate and joint_grad share second-pass draws") {
  DelibModel m = DelibModel::create(tiny(4, 2, true, true), 5);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    PassGradients a = estimator_draw(m, kOne, scheme_of(Scheme::Kind::joint_grad), 2, 3, seed);
    PassGradients b = estimator_draw(m, kOne, scheme_of(Scheme::Kind::separate), 2, 3, seed);
    CHECK(a.second == b.second);
  }
  EstimatorStats sep = verify_estimator(m, kOne, scheme_of(Scheme::Kind::separate), 1, 200, 1, 3);
  // theta^I under separate training is the deterministic teacher-forcing gradient.
  for (std::size_t i = 0; i < sep.first_count; ++i) CHECK(sep.variance[i] == doctest::Approx(0.0).epsilon(1e-20));
  CHECK_THROWS_AS(verify_estimator(m, kOne, scheme_of(Scheme::Kind::joint_grad), 1, 1, 1, 3), ContractViolation);
}

TEST_CASE("serial and parallel estimator runs are bit-identical") {
  DelibModel m = DelibModel::create(tiny(4, 2), 9);
  const Scheme s = scheme_of(Scheme::Kind::joint_grad);
  EstimatorStats a = verify_estimator(m, kOne, s, 2, 300, 4, 2, Execution::serial);
  EstimatorStats b = verify_estimator(m, kOne, s, 2, 300, 4, 2, Execution::parallel);
  CHECK(a.mean == b.mean);
  CHECK(a.variance == b.variance);
}
