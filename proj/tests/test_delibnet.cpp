#include <cmath>
#include <functional>

#include "delib/delibnet.hpp"
#include "delib/gradcheck.hpp"
#include "doctest.h"

using namespace delib;

namespace {

std::vector<TokenSeq> all_sequences(int V, int T) {
  std::vector<TokenSeq> out;
  TokenSeq cur;
  std::function<void()> rec = [&] {
    if (static_cast<int>(cur.size()) == T) {
      out.push_back(cur);
      return;
    }
    cur.push_back(Vocab::eos);
    out.push_back(cur);
    cur.pop_back();
    for (Token t = 2; t < V; ++t) {
      cur.push_back(t);
      rec();
      cur.pop_back();
    }
  };
  rec();
  return out;
}

ModelConfig tiny(int V, int d = 3, bool ctx = false, bool extras = false) {
  ModelConfig c;
  c.vocab_size = V;
  c.width = d;
  c.context_in_state = ctx;
  c.intermediate_extras = extras;
  c.init_bound = 0.8;
  return c;
}

Tensor random_tensor(int r, int c, Rng& rng) {
  Tensor t(r, c);
  for (double& v : t.values()) v = rng.uniform(-1, 1);
  return t;
}

}  // namespace

TEST_CASE("second pass aliases the first-pass encoder") {
  DelibModel m = DelibModel::create(tiny(5), 1);
  CHECK(m.second.shares_encoder_with(m.first));
  const TokenSeq x{2, 3, 1};
  const Tensor before = encode(x, m.first);
  m.second.table.at("enc.gru.Wz")(0, 0) += 0.5;
  CHECK(m.first.table.at("enc.gru.Wz")(0, 0) == m.second.table.at("enc.gru.Wz")(0, 0));
  CHECK_FALSE(encode(x, m.first) == before);

  DelibModel copy = m;
  CHECK(copy.second.shares_encoder_with(copy.first));
  CHECK_FALSE(copy.second.shares_encoder_with(m.first));
  copy.first.table.at("enc.embed")[0] = 42.0;
  CHECK(m.first.table.at("enc.embed")[0] != 42.0);
  CHECK(copy.second.table.at("enc.embed")[0] == 42.0);

  ParameterTable all = m.all_parameters();
  CHECK(all.size() == m.first.table.size() + m.second.own_names().size());
}

TEST_CASE("second_pass_step attention") {
  DelibModel m = DelibModel::create(tiny(5, 4), 2);
  Rng rng(3);
  Tensor s = random_tensor(1, 4, rng), hx = random_tensor(3, 4, rng), hy = random_tensor(2, 4, rng);
  SecondPassStepValues r = second_pass_step(s, 2, hx, hy, m.second);
  auto check_context = [](const Tensor& alpha, const Tensor& h, const Tensor& c) {
    double total = 0.0;
    for (double a : alpha.values()) total += a;
    CHECK(std::abs(total - 1.0) < 1e-12);
    for (int j = 0; j < h.cols(); ++j) {
      double manual = 0.0;
      for (int l = 0; l < h.rows(); ++l) manual += alpha[l] * h(l, j);
      CHECK(std::abs(manual - c[j]) < 1e-12);
    }
  };
  check_context(r.alpha_x, hx, r.context_x);
  check_context(r.alpha_y, hy, r.context_y);
  CHECK(r.logits.cols() == 4);

  Tensor hy1 = random_tensor(1, 4, rng);
  SecondPassStepValues one = second_pass_step(s, 2, hx, hy1, m.second);
  CHECK(one.alpha_y == Tensor::row({1.0}));
  CHECK(one.context_y == hy1);

  SecondPassParams flat = m.second;
  flat.table.at("attx.v").fill(0.0);
  flat.table.at("atty.v").fill(0.0);
  SecondPassStepValues u = second_pass_step(s, 2, hx, hy, flat);
  for (double a : u.alpha_x.values()) CHECK(a == doctest::Approx(1.0 / 3).epsilon(1e-15));
  for (double a : u.alpha_y.values()) CHECK(a == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(second_pass_step(s, 2, hx, Tensor(), m.second), ContractViolation);
}

TEST_CASE("second_pass_logprob") {
  DelibModel m = DelibModel::create(tiny(5), 4);
  const TokenSeq x{2, 4, 1}, y{3, 3, 1};
  IntermediateFeatures yi = IntermediateFeatures::from_tokens({4, 2, 1});
  SecondPassScore s = second_pass_logprob(x, yi, y, m.second);
  CHECK(s.total <= 0.0);
  double sum = 0.0;
  for (double v : s.per_step) sum += v;
  CHECK(std::abs(sum - s.total) < 1e-12);
  CHECK(s.attention_x.shape() == std::vector<int>{3, 3});
  CHECK(s.attention_y.shape() == std::vector<int>{3, 3});

  SecondPassParams flat = m.second;
  flat.table.at("out2.W").fill(0.0);
  flat.table.at("out2.b").fill(0.0);
  CHECK(second_pass_logprob(x, yi, y, flat).total == doctest::Approx(-3 * std::log(4.0)).epsilon(1e-14));

  // Extras attached but the variant disabled: identical score.
  IntermediateFeatures with = yi;
  Rng rng(1);
  with.states = random_tensor(3, 3, rng);
  with.contexts = random_tensor(3, 3, rng);
  CHECK(second_pass_logprob(x, with, y, m.second).total == s.total);

  CHECK(IntermediateFeatures::from_tokens({}).tokens == TokenSeq{Vocab::eos});
  IntermediateFeatures empty;
  CHECK_THROWS_AS(second_pass_logprob(x, empty, y, m.second), ContractViolation);
}

TEST_CASE("second-pass probabilities sum to one over the output space") {
  for (int trial = 0; trial < 4; ++trial) {
    const int V = 3 + trial % 2, T = 2 + trial % 2;
    DelibModel m = DelibModel::create(tiny(V, 3, trial >= 2, trial % 2 == 1), 50 + trial);
    const TokenSeq x{2, 1};
    Generation g = generate(x, m.first, DecodeMode::greedy(), T);
    IntermediateFeatures yi = IntermediateFeatures::from_generation(g);
    double total = 0.0;
    for (const auto& y : all_sequences(V, T)) total += std::exp(second_pass_logprob(x, yi, y, m.second).total);
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("second-pass gradients match finite differences, shared encoder included") {
  for (bool extras : {false, true}) {
    DelibModel m = DelibModel::create(tiny(5, 3, extras, extras), 8);
    const TokenSeq x{3, 2, 1}, y{4, 1};
    IntermediateFeatures yi = IntermediateFeatures::from_generation(
        generate(x, m.first, DecodeMode::greedy(), 3));
    auto build = [&](Graph& g) {
      SecondPassNet net(g, m.second);
      return score_second_pass(net, net.encode_input(x), net.encode_intermediate(yi), y).total;
    };
    GradCheckReport rep = finite_diff_check(build, m.second.table, kSecondPassGroup);
    CHECK_MESSAGE(rep.passed, rep.summary());
    bool saw_encoder = false;
    for (const auto& e : rep.entries) saw_encoder |= is_encoder_param(e.name);
    CHECK(saw_encoder);
  }
}

TEST_CASE("two-pass generation") {
  DelibModel m = DelibModel::create(tiny(6, 4), 12);
  const TokenSeq x{2, 5, 3, 1};
  TwoPassOutput a = two_pass_generate(x, m, DecodeMode::greedy(), 5);
  TwoPassOutput b = two_pass_generate(x, m, DecodeMode::greedy(), 5);
  CHECK(a.first.tokens == b.first.tokens);
  CHECK(a.second.tokens == b.second.tokens);
  CHECK(a.second.attention.size() == 2);
  CHECK(a.second.attention[1].cols() == static_cast<int>(a.first.tokens.size()));
  TwoPassOutput s1 = two_pass_generate(x, m, DecodeMode::sample(1.0), 5, 9);
  TwoPassOutput s2 = two_pass_generate(x, m, DecodeMode::sample(1.0), 5, 9);
  CHECK(s1.second.tokens == s2.second.tokens);
}

TEST_CASE("degenerate second pass reproduces the single-pass model") {
  for (bool ctx : {false, true}) {
    FirstPassParams f = FirstPassParams::create(tiny(6, 4, ctx), 77);
    DelibModel m(f, single_pass_equivalent(f));
    for (Token a = 2; a < 6; ++a) {
      const TokenSeq x{a, static_cast<Token>(7 - a), 4, 1};
      TwoPassOutput out = two_pass_generate(x, m, DecodeMode::greedy(), 6);
      CHECK(out.second.tokens == generate(x, m.first, DecodeMode::greedy(), 6).tokens);
      for (double w : out.second.attention[1].values()) {
        CHECK(w == doctest::Approx(1.0 / static_cast<double>(out.first.tokens.size())));
      }
      CHECK(std::abs(second_pass_logprob(x, IntermediateFeatures::from_generation(out.first),
                                         out.second.tokens, m.second).total -
                     teacher_forced_logprob(x, out.second.tokens, m.first).total) < 1e-12);
    }
  }
}
