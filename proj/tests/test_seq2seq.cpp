#include <cmath>
#include <cstring>
#include <functional>

#include "delib/gradcheck.hpp"
#include "delib/seq2seq.hpp"
#include "doctest.h"

using namespace delib;

namespace {

// Independent enumerator: depth-first over content tokens, EOS closes a sequence.
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

ModelConfig tiny(int V, int d = 4, bool ctx = false) {
  ModelConfig c;
  c.vocab_size = V;
  c.width = d;
  c.context_in_state = ctx;
  c.init_bound = 0.8;
  return c;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_CASE("vocab and sequence validation") {
  CHECK_THROWS_AS(Vocab(2), ContractViolation);
  Vocab v(5);
  CHECK(is_valid_token_seq(TokenSeq{2, 3, 1}, v, 4));
  CHECK(is_valid_token_seq(TokenSeq{2, 3, 4}, v, 3));
  CHECK_FALSE(is_valid_token_seq(TokenSeq{2, 3, 4}, v, 4));
  CHECK_FALSE(is_valid_token_seq(TokenSeq{1, 2, 1}, v, 4));
  CHECK_FALSE(is_valid_token_seq(TokenSeq{0, 1}, v, 4));
  CHECK_FALSE(is_valid_token_seq(TokenSeq{5, 1}, v, 4));
  CHECK_FALSE(is_valid_token_seq(TokenSeq{}, v, 4));
}

TEST_CASE("encode shapes, determinism and input validation") {
  FirstPassParams p = FirstPassParams::create(tiny(5), 3);
  Tensor h1 = encode(TokenSeq{1}, p);
  CHECK(h1.rows() == 1);
  CHECK(h1.cols() == 4);
  Tensor a = encode(TokenSeq{2, 3, 4, 1}, p);
  Tensor b = encode(TokenSeq{2, 3, 4, 1}, p);
  CHECK(bit_equal(a, b));
  CHECK_THROWS_AS(encode(TokenSeq{2, 7, 1}, p), ContractViolation);

  FirstPassParams z = FirstPassParams::zeros(tiny(5));
  Tensor hz = encode(TokenSeq{3, 2, 3, 3, 1}, z);
  for (int c = 0; c < hz.cols(); ++c) {
    CHECK(hz(0, c) == hz(2, c));
    CHECK(hz(2, c) == hz(3, c));
  }
}

TEST_CASE("decode_step attention") {
  FirstPassParams p = FirstPassParams::create(tiny(6), 5);
  Rng rng(9);
  Tensor s(1, 4), h(3, 4);
  for (double& v : s.values()) v = rng.uniform(-1, 1);
  for (double& v : h.values()) v = rng.uniform(-1, 1);
  DecodeStepValues r = decode_step(s, 2, h, p);
  double total = 0.0;
  for (double a : r.alpha.values()) {
    CHECK(a >= 0.0);
    total += a;
  }
  CHECK(std::abs(total - 1.0) < 1e-12);
  for (int c = 0; c < 4; ++c) {
    double manual = 0.0;
    for (int l = 0; l < 3; ++l) manual += r.alpha(0, l) * h(l, c);
    CHECK(std::abs(manual - r.context(0, c)) < 1e-12);
  }
  CHECK(r.logits.cols() == 5);

  // Zero scoring vector: all scores equal, so alignment is uniform.
  FirstPassParams q = p;
  q.table.at("att.v").fill(0.0);
  DecodeStepValues u = decode_step(s, 2, h, q);
  for (double a : u.alpha.values()) CHECK(a == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Tensor h1(1, 4);
  for (double& v : h1.values()) v = rng.uniform(-1, 1);
  DecodeStepValues one = decode_step(s, 3, h1, p);
  CHECK(one.alpha == Tensor::row({1.0}));
  CHECK(one.context == h1);

  CHECK_THROWS_AS(decode_step(s, 2, Tensor(), p), ContractViolation);
}

TEST_CASE("teacher-forced scoring") {
  FirstPassParams p = FirstPassParams::create(tiny(5), 11);
  TokenSeq x{2, 4, 3, 1}, y{3, 2, 1};
  SequenceScore s = teacher_forced_logprob(x, y, p);
  double sum = 0.0;
  for (double v : s.per_step) sum += v;
  CHECK(std::abs(sum - s.total) < 1e-12);
  CHECK(s.total <= 0.0);
  CHECK(s.attention.rows() == 3);
  CHECK(s.attention.cols() == 4);
  for (int t = 0; t < 3; ++t) {
    double row = 0.0;
    for (int l = 0; l < 4; ++l) row += s.attention(t, l);
    CHECK(std::abs(row - 1.0) < 1e-9);
  }

  FirstPassParams flat = p;
  flat.table.at("out.W").fill(0.0);
  flat.table.at("out.b").fill(0.0);
  // Output distribution ranges over the V-1 non-BOS ids.
  CHECK(teacher_forced_logprob(x, y, flat).total == doctest::Approx(-3 * std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("probabilities over the enumerated output space sum to one") {
  for (int trial = 0; trial < 6; ++trial) {
    const int V = 3 + trial % 3, T = 1 + trial % 3;
    for (bool ctx : {false, true}) {
      FirstPassParams p = FirstPassParams::create(tiny(V, 4, ctx), 100 + trial);
      TokenSeq x{2, static_cast<Token>(V - 1), 1};
      double total = 0.0;
      for (const TokenSeq& y : all_sequences(V, T)) total += std::exp(teacher_forced_logprob(x, y, p).total);
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("greedy, beam and sampling") {
  const int V = 5, T = 3;
  FirstPassParams p = FirstPassParams::create(tiny(V), 21);
  TokenSeq x{3, 2, 4, 1};
  Generation g = generate(x, p, DecodeMode::greedy(), T);
  CHECK(is_valid_token_seq(g.tokens, Vocab(V), T));
  CHECK(std::abs(g.logprob - teacher_forced_logprob(x, g.tokens, p).total) < 1e-12);
  Generation g2 = generate(x, p, DecodeMode::greedy(), T);
  CHECK(g2.tokens == g.tokens);

  Generation b1 = generate(x, p, DecodeMode::beam(1), T);
  CHECK(b1.tokens == g.tokens);
  CHECK(b1.logprob == g.logprob);

  // Exhaustive beam recovers the enumerated argmax.
  auto space = all_sequences(V, T);
  TokenSeq best;
  double best_lp = -1e300;
  for (const auto& y : space) {
    const double lp = teacher_forced_logprob(x, y, p).total;
    if (lp > best_lp) best_lp = lp, best = y;
  }
  Generation exact = generate(x, p, DecodeMode::beam(static_cast<int>(space.size())), T);
  CHECK(exact.tokens == best);
  CHECK(std::abs(exact.logprob - best_lp) < 1e-12);

  auto list = nbest(x, p, 4, T);
  CHECK(list.size() == 4);
  for (std::size_t i = 1; i < list.size(); ++i) {
    CHECK(list[i - 1].logprob >= list[i].logprob);
    CHECK(list[i - 1].tokens != list[i].tokens);
  }

  Generation s1 = generate(x, p, DecodeMode::sample(1.0), T, 77);
  Generation s2 = generate(x, p, DecodeMode::sample(1.0), T, 77);
  CHECK(s1.tokens == s2.tokens);
  CHECK(s1.noise == s2.noise);
  CHECK(s1.noise.rows() == static_cast<int>(s1.tokens.size()));
  CHECK(std::abs(s1.logprob - teacher_forced_logprob(x, s1.tokens, p).total) < 1e-12);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CHECK(generate(x, p, DecodeMode::sample(1e-6), T, seed).tokens == g.tokens);
  }

  CHECK_THROWS_AS(generate(x, p, DecodeMode::beam(0), T), ContractViolation);
  CHECK_THROWS_AS(generate(x, p, DecodeMode::sample(0.0), T), ContractViolation);
  CHECK_THROWS_AS(generate(x, p, DecodeMode::greedy(), 0), ContractViolation);
}

TEST_CASE("decode mode text round trip") {
  for (const char* text : {"greedy", "sample:0.5", "beam:3"}) {
    CHECK(DecodeMode::parse(text).to_string() == text);
  }
  CHECK_THROWS_AS(DecodeMode::parse("beam:x"), ContractViolation);
  CHECK_THROWS_AS(DecodeMode::parse("nucleus"), ContractViolation);
}

TEST_CASE("teacher-forced log-probability gradients match finite differences") {
  for (bool ctx : {false, true}) {
    FirstPassParams p = FirstPassParams::create(tiny(5, 3, ctx), 31);
    TokenSeq x{2, 3, 4, 1}, y{4, 4, 1};
    auto build = [&](Graph& g) {
      FirstPassNet net(g, p);
      return score_first_pass(net, net.encode(x), y).total;
    };
    GradCheckReport rep = finite_diff_check(build, p.table, kFirstPassGroup);
    CHECK_MESSAGE(rep.passed, rep.summary());
  }
}

TEST_CASE("one-hot embedding matches lookup bit-exactly") {
  FirstPassParams p = FirstPassParams::create(tiny(6), 4);
  Graph g;
  FirstPassNet net(g, p);
  for (int k = 0; k < 5; ++k) {
    Tensor onehot(1, 5);
    onehot[k] = 1.0;
    CHECK(bit_equal(net.embed_distribution(g.constant(onehot)).value(),
                    net.embed(Vocab::output_token(k)).value()));
  }
}
