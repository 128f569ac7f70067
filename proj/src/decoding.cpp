#include "delib/decoding.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace delib {

void DecodeMode::validate() const {
  if (kind == Kind::sample && !(temperature > 0.0 && std::isfinite(temperature))) {
    throw ContractViolation("sample temperature must be positive and finite, got " +
                            std::to_string(temperature));
  }
  if (kind == Kind::beam && width < 1) {
    throw ContractViolation("beam width must be >= 1, got " + std::to_string(width));
  }
}

std::string DecodeMode::to_string() const {
  switch (kind) {
    case Kind::greedy: return "greedy";
    case Kind::sample: {
      char buf[64];
      auto res = std::to_chars(buf, buf + sizeof buf, temperature);
      return "sample:" + std::string(buf, res.ptr);
    }
    case Kind::beam: return "beam:" + std::to_string(width);
  }
  return "?";
}

DecodeMode DecodeMode::parse(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view arg = colon == std::string_view::npos ? "" : text.substr(colon + 1);
  DecodeMode mode;
  if (head == "greedy" && arg.empty()) {
    return mode;
  } else if (head == "sample") {
    mode.kind = Kind::sample;
    if (!arg.empty()) {
      auto res = std::from_chars(arg.data(), arg.data() + arg.size(), mode.temperature);
      if (res.ec != std::errc() || res.ptr != arg.data() + arg.size()) {
        throw ContractViolation("bad sample temperature in '" + std::string(text) + "'");
      }
    }
  } else if (head == "beam") {
    mode.kind = Kind::beam;
    auto res = std::from_chars(arg.data(), arg.data() + arg.size(), mode.width);
    if (arg.empty() || res.ec != std::errc() || res.ptr != arg.data() + arg.size()) {
      throw ContractViolation("bad beam width in '" + std::string(text) + "'");
    }
  } else {
    throw ContractViolation("unknown decode mode '" + std::string(text) +
                            "' (expected greedy, sample:<t> or beam:<w>)");
  }
  mode.validate();
  return mode;
}

namespace {

struct Hypothesis {
  TokenSeq tokens;
  double score = 0.0;
  DecoderCarry carry;
  std::vector<double> step_logprobs;
  std::vector<Var> states;
  std::vector<Var> contexts;
  std::vector<std::vector<Var>> alphas;  // per step, per source
  std::vector<std::vector<double>> noise;

  void push(Token tok, double lp, const StepResult& r) {
    tokens.push_back(tok);
    score += lp;
    step_logprobs.push_back(lp);
    carry = r.carry;
    states.push_back(r.carry.state);
    contexts.push_back(r.context);
    alphas.push_back(r.alphas);
  }
};

Tensor stack(const std::vector<Var>& rows) {
  const int cols = rows.front().value().cols();
  Tensor out(static_cast<int>(rows.size()), cols);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const Tensor& v = rows[t].value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + t * cols);
  }
  return out;
}

Generation materialize(const Hypothesis& h) {
  Generation g;
  g.tokens = h.tokens;
  g.logprob = h.score;
  g.step_logprobs = h.step_logprobs;
  g.states = stack(h.states);
  g.contexts = stack(h.contexts);
  const std::size_t sources = h.alphas.front().size();
  for (std::size_t s = 0; s < sources; ++s) {
    std::vector<Var> rows;
    for (const auto& step : h.alphas) rows.push_back(step[s]);
    g.attention.push_back(stack(rows));
  }
  if (!h.noise.empty()) {
    const int cols = static_cast<int>(h.noise.front().size());
    g.noise = Tensor(static_cast<int>(h.noise.size()), cols);
    for (std::size_t t = 0; t < h.noise.size(); ++t) {
      std::copy(h.noise[t].begin(), h.noise[t].end(), g.noise.values().begin() + t * cols);
    }
  }
  return g;
}

void check_max_len(int max_len) {
  if (max_len < 1) throw ContractViolation("T_max must be >= 1, got " + std::to_string(max_len));
}

bool finished(const Hypothesis& h, int max_len) {
  return h.tokens.back() == Vocab::eos || static_cast<int>(h.tokens.size()) == max_len;
}

}  // namespace

Generation decode_greedy(StepModel& model, int max_len) {
  check_max_len(max_len);
  Hypothesis h;
  h.carry = model.start();
  Token prev = Vocab::bos;
  do {
    StepResult r = model.step(h.carry, prev);
    const auto lp = r.log_probs.value().values();
    const int best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    prev = Vocab::output_token(best);
    h.push(prev, lp[best], r);
  } while (!finished(h, max_len));
  return materialize(h);
}

Generation decode_sample(StepModel& model, int max_len, double temperature, Rng& rng) {
  check_max_len(max_len);
  DecodeMode::sample(temperature).validate();
  Hypothesis h;
  h.carry = model.start();
  Token prev = Vocab::bos;
  do {
    StepResult r = model.step(h.carry, prev);
    const auto lp = r.log_probs.value().values();
    std::vector<double> z(lp.size());
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < lp.size(); ++k) {
      z[k] = rng.gumbel();
      const double s = lp[k] / temperature + z[k];
      if (s > best_score) {
        best_score = s;
        best = static_cast<int>(k);
      }
    }
    prev = Vocab::output_token(best);
    h.push(prev, lp[best], r);
    h.noise.push_back(std::move(z));
  } while (!finished(h, max_len));
  return materialize(h);
}

std::vector<Generation> decode_beam(StepModel& model, int max_len, int width) {
  check_max_len(max_len);
  DecodeMode::beam(width).validate();
  std::vector<Hypothesis> alive(1);
  alive[0].carry = model.start();
  std::vector<Hypothesis> done;

  struct Candidate {
    double score;
    std::size_t parent;
    int index;
  };
  while (!alive.empty()) {
    std::vector<StepResult> results;
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      const Token prev = alive[i].tokens.empty() ? Vocab::bos : alive[i].tokens.back();
      results.push_back(model.step(alive[i].carry, prev));
      const auto lp = results.back().log_probs.value().values();
      for (std::size_t k = 0; k < lp.size(); ++k) {
        cands.push_back({alive[i].score + lp[k], i, static_cast<int>(k)});
      }
    }
    const std::size_t keep = std::min<std::size_t>(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.index < b.index;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = cands[c];
      Hypothesis h = alive[cand.parent];
      const double lp = results[cand.parent].log_probs.value()[cand.index];
      h.push(Vocab::output_token(cand.index), lp, results[cand.parent]);
      if (finished(h, max_len)) {
        done.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }
  std::stable_sort(done.begin(), done.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  if (done.size() > static_cast<std::size_t>(width)) done.resize(width);
  std::vector<Generation> out;
  out.reserve(done.size());
  for (const auto& h : done) out.push_back(materialize(h));
  return out;
}

Generation decode(StepModel& model, const DecodeMode& mode, int max_len, std::uint64_t seed) {
  mode.validate();
  switch (mode.kind) {
    case DecodeMode::Kind::greedy: return decode_greedy(model, max_len);
    case DecodeMode::Kind::sample: {
      Rng rng(seed);
      return decode_sample(model, max_len, mode.temperature, rng);
    }
    case DecodeMode::Kind::beam: return decode_beam(model, max_len, mode.width).front();
  }
  throw ContractViolation("unreachable decode mode");
}

}  // namespace delib
