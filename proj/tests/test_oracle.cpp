#include <algorithm>
#include <cmath>

#include "delib/gradcheck.hpp"
#include "delib/oracle.hpp"
#include "delib/scoring.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace delib;
using namespace delib::testing;

TEST_CASE("enumerated space") {
  EnumeratedSpace s = enumerate_space(3, 2);
  std::vector<TokenSeq> expect{{1}, {2, 1}, {2, 2}};
  CHECK(s.sequences == expect);

  for (int V = 3; V <= 6; ++V) {
    for (int T = 1; T <= 4; ++T) {
      EnumeratedSpace sp = enumerate_space(V, T);
      auto ref = all_sequences(V, T);
      CHECK(sp.size() == ref.size());
      CHECK(space_size(V, T) == ref.size());
      auto a = sp.sequences;
      std::sort(a.begin(), a.end());
      std::sort(ref.begin(), ref.end());
      CHECK(a == ref);
      CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
      for (const auto& y : sp.sequences) CHECK(is_valid_token_seq(y, Vocab(V), T));
    }
  }

  try {
    enumerate_space(12, 9);
    FAIL("expected CapacityError");
  } catch (const CapacityError& e) {
    // sum_{k<9} 10^k + 10^9
    CHECK(e.count() == 111111111ULL + 1000000000ULL);
    CHECK(std::string(e.what()).find("1111111111") != std::string::npos);
  }
  CHECK(space_size(200, 40) == std::numeric_limits<std::uint64_t>::max());
}

TEST_CASE("exact marginal") {
  Rng rng(5);
  for (int trial = 0; trial < 6; ++trial) {
    const int V = 3 + trial % 2, T = 2 + trial % 2;
    DelibModel m = DelibModel::create(tiny(V, 2, trial % 3 == 2, trial % 2 == 1), 10 + trial);
    EnumeratedSpace space = enumerate_space(V, T);
    const TokenSeq x = random_content(rng, V, 2);
    double total = 0.0;
    for (const auto& y : space.sequences) {
      const double p = exact_marginal(m, x, y, space);
      CHECK(p > 0.0);
      CHECK(p <= 1.0);
      total += p;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }

  DelibModel m = DelibModel::create(tiny(4), 3);
  EnumeratedSpace space = enumerate_space(4, 3);
  const TokenSeq x{2, 3, 1}, y{3, 1};
  SecondPassParams silent = m.second;
  silence_intermediate(silent);
  DelibModel ind(m.first, silent);
  const double direct = second_pass_logprob(x, IntermediateFeatures::from_tokens({1}), y, ind.second).total;
  CHECK(std::abs(exact_marginal(ind, x, y, space) - std::exp(direct)) < 1e-12);

  DelibModel pm = m;
  make_point_mass(pm.first, 3);
  const double given = second_pass_logprob(x, IntermediateFeatures::from_tokens({3, 3, 3}), y, pm.second).total;
  CHECK(std::abs(exact_marginal(pm, x, y, space) - std::exp(given)) < 1e-12);
}

TEST_CASE("exact losses") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const int V = 3 + trial % 2, T = 1 + trial % 3;
    DelibModel m = DelibModel::create(tiny(V), 100 + trial);
    EnumeratedSpace space = enumerate_space(V, T);
    const TokenSeq x = random_content(rng, V, 1 + trial % 3);
    const TokenSeq y = space.sequences[rng.below(space.size())];
    ExactLosses l = exact_losses(m, x, y, space);
    CHECK(l.bound >= l.naive - 1e-9);
    CHECK(std::abs(l.naive + std::log(exact_marginal(m, x, y, space))) < 1e-12);

    DelibModel pm = m;
    make_point_mass(pm.first, trial % 2 ? Vocab::eos : 2);
    ExactLosses p = exact_losses(pm, x, y, space);
    CHECK(std::abs(p.bound - p.naive) < 1e-12);

    DelibModel flat = m;
    flat.second.table.at("out2.W").fill(0.0);
    flat.second.table.at("out2.b").fill(0.0);
    ExactLosses u = exact_losses(flat, x, y, space);
    const double expect = static_cast<double>(y.size()) * std::log(V - 1.0);
    CHECK(std::abs(u.bound - expect) < 1e-12);
    CHECK(std::abs(u.naive - expect) < 1e-12);
  }
}

TEST_CASE("bound gradients equal a direct autodiff of the enumerated loss") {
  for (bool extras : {false, true}) {
    DelibModel m = DelibModel::create(tiny(4, 2, false, extras), 17);
    EnumeratedSpace space = enumerate_space(4, 2);
    const TokenSeq x{3, 2, 1}, y{2, 1};
    PassGradients ex = exact_gradients(m, x, y, space, Objective::bound);

    // One graph holding the whole sum; extras enter as constants.
    Graph g;
    FirstPassNet fp(g, m.first);
    SecondPassNet sp(g, m.second);
    AttentionMemory mx1 = fp.encode(x);
    AttentionMemory mx2 = sp.encode_input(x);
    std::vector<Var> terms;
    for (const auto& yi : space.sequences) {
      Var lf = score_first_pass(fp, mx1, yi).total;
      Var ls = score_second_pass(sp, mx2, sp.encode_intermediate(features_for(m.first, x, yi)), y).total;
      terms.push_back(mul(exp(lf), ls));
    }
    Var loss = scale(sum(concat_cols(terms)), -1.0);
    g.backward(loss);
    PassGradients direct{g.gradients(m.first.table, kFirstPassGroup),
                         g.gradients(m.second.table, kSecondPassGroup)};
    const auto a = ex.flatten(), b = direct.flatten();
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst < 1e-10);
    CHECK(std::abs(loss.value().item() - exact_losses(m, x, y, space).bound) < 1e-12);
  }
}

TEST_CASE("naive and bound second-pass gradients coincide at a point mass") {
  DelibModel m = DelibModel::create(tiny(4), 23);
  make_point_mass(m.first, 2);
  EnumeratedSpace space = enumerate_space(4, 3);
  const TokenSeq x{2, 2, 1}, y{3, 2, 1};
  PassGradients naive = exact_gradients(m, x, y, space, Objective::naive);
  PassGradients bound = exact_gradients(m, x, y, space, Objective::bound);
  CHECK(max_abs_difference(naive.second, bound.second) < 1e-10);
}

TEST_CASE("exact gradients match finite differences of the exact losses") {
  DelibModel m = DelibModel::create(tiny(4, 2, true), 29);
  EnumeratedSpace space = enumerate_space(4, 2);
  const Batch batch{{{2, 3, 1}, {3, 1}, 1.0}, {{3, 1}, {2, 2}, 2.0}};
  ParameterTable all = m.all_parameters();
  for (Objective which : {Objective::bound, Objective::naive}) {
    GradientMap analytic = exact_gradients(m, batch, space, which, Execution::serial).merged();
    auto f = [&] {
      ExactLosses l = exact_losses(m, batch, space, Execution::serial);
      return which == Objective::bound ? l.bound : l.naive;
    };
    GradCheckReport rep = finite_diff_check(f, all, analytic);
    CHECK_MESSAGE(rep.passed, rep.summary());
  }
}

TEST_CASE("serial and parallel oracle results are bit-identical") {
  DelibModel m = DelibModel::create(tiny(4, 3), 31);
  EnumeratedSpace space = enumerate_space(4, 3);
  const TokenSeq x{2, 3, 3, 1}, y{3, 2, 1};
  CHECK(exact_gradients(m, x, y, space, Objective::bound, Execution::serial) ==
        exact_gradients(m, x, y, space, Objective::bound, Execution::parallel));
  const ExactLosses a = exact_losses(m, x, y, space, Execution::serial);
  const ExactLosses b = exact_losses(m, x, y, space, Execution::parallel);
  CHECK(a.bound == b.bound);
  CHECK(a.naive == b.naive);
}
