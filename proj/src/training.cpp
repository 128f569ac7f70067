#include "delib/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>

#include "delib/scoring.hpp"

namespace delib {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

constexpr std::size_t kGradChunk = 64;

void finish_report(TrainStep& step, Clock::time_point start) {
  if (step.grads.first.size()) step.report.grad_norms["first"] = std::sqrt(step.grads.first.squared_norm());
  if (step.grads.second.size()) step.report.grad_norms["second"] = std::sqrt(step.grads.second.squared_norm());
  step.report.wall_seconds = seconds_since(start);
}

void check_samples(const Batch& batch, const std::vector<SampleSet>& samples) {
  if (samples.size() != batch.size()) {
    throw DataError("stored samples cover " + std::to_string(samples.size()) + " of " +
                    std::to_string(batch.size()) + " examples");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].samples.empty()) {
      throw DataError("no stored samples for example " + std::to_string(i));
    }
  }
}

double parse_double(std::string_view text, std::string_view what) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ContractViolation("bad " + std::string(what) + " '" + std::string(text) + "'");
  }
  return v;
}

int parse_int(std::string_view text, std::string_view what) {
  int v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ContractViolation("bad " + std::string(what) + " '" + std::string(text) + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double entropy(const Tensor& log_probs) {
  double h = 0.0;
  for (double lp : log_probs.values()) h -= std::exp(lp) * lp;
  return h;
}

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

bool LossReport::all_finite() const {
  for (const auto& [_, v] : losses) {
    if (!std::isfinite(v)) return false;
  }
  for (const auto& [_, v] : grad_norms) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------- single pass

LossAndGrad nll_teacher_forcing(const FirstPassParams& params, const Batch& batch, Execution exec) {
  const double total_w = batch_weight(batch);
  LossAndGrad out{0.0, GradientMap::zeros_like(params.table)};
  map_fold<ScoredTerm>(
      batch.size(), exec, [&](std::size_t i) { return first_pass_term(params, batch[i].x, batch[i].y); },
      [&](std::size_t i, const ScoredTerm& t) {
        const double w = batch[i].weight / total_w;
        out.loss -= w * t.logp;
        out.grad.accumulate(t.grad, -w);
      },
      kGradChunk);
  return out;
}

std::size_t levenshtein(std::span<const Token> a, std::span<const Token> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Distance parse_distance(std::string_view text) {
  if (text == "zero_one") return Distance::zero_one;
  if (text == "levenshtein") return Distance::levenshtein;
  throw ContractViolation("distance must be 'zero_one' or 'levenshtein', got '" + std::string(text) + "'");
}

RiskFn distance_risk(Distance d) {
  if (d == Distance::zero_one) {
    return [](const Example& ex, const TokenSeq& hyp) { return hyp == ex.y ? 0.0 : 1.0; };
  }
  return [](const Example& ex, const TokenSeq& hyp) {
    return static_cast<double>(levenshtein(ex.y, hyp));
  };
}

LossAndGrad mbr_loss(const FirstPassParams& params, const Batch& batch, const RiskFn& risk,
                     const MbrMode& mode, int max_len, Execution exec, std::uint64_t cap) {
  const double total_w = batch_weight(batch);
  LossAndGrad out{0.0, GradientMap::zeros_like(params.table)};
  struct Term {
    ScoredTerm scored;
    double risk;
  };
  if (mode.exact) {
    const EnumeratedSpace space = enumerate_space(params.config.vocab_size, max_len, cap);
    for (const Example& ex : batch) {
      const double w = ex.weight / total_w;
      map_fold<Term>(
          space.size(), exec,
          [&](std::size_t i) {
            const TokenSeq& y = space.sequences[i];
            return Term{first_pass_term(params, ex.x, y), risk(ex, y)};
          },
          [&](std::size_t, const Term& t) {
            const double pd = std::exp(t.scored.logp) * t.risk;
            out.loss += w * pd;
            out.grad.accumulate(t.scored.grad, w * pd);
          },
          kGradChunk);
    }
    return out;
  }
  if (mode.samples < 1) throw ContractViolation("MBR sample count must be >= 1");
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const Example& ex = batch[e];
    const double w = ex.weight / total_w / mode.samples;
    SampleSet s = draw_intermediate_samples(params, ex.x, mode.samples, SamplingStrategy::ancestral(),
                                            max_len, Rng::mix(mode.seed, e));
    map_fold<Term>(
        s.size(), exec,
        [&](std::size_t m) {
          const TokenSeq& y = s.samples[m].features.tokens;
          return Term{first_pass_term(params, ex.x, y), risk(ex, y)};
        },
        [&](std::size_t, const Term& t) {
          out.loss += w * t.risk;
          out.grad.accumulate(t.scored.grad, w * t.risk);
        },
        kGradChunk);
  }
  return out;
}

// ------------------------------------------------------------------- sampling

void SamplingStrategy::validate() const {
  if (kind == Kind::noisy_greedy && !(temperature > 0.0 && std::isfinite(temperature))) {
    throw ContractViolation("noisy_greedy temperature must be positive, got " + std::to_string(temperature));
  }
  if (kind == Kind::beam && width < 1) {
    throw ContractViolation("beam width must be >= 1, got " + std::to_string(width));
  }
}

std::string SamplingStrategy::to_string() const {
  switch (kind) {
    case Kind::ancestral: return "ancestral";
    case Kind::noisy_greedy: return "noisy_greedy:" + format_double(temperature);
    case Kind::beam: return "beam:" + std::to_string(width);
  }
  return "?";
}

SamplingStrategy SamplingStrategy::parse(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view arg = colon == std::string_view::npos ? "" : text.substr(colon + 1);
  SamplingStrategy s;
  if (head == "ancestral" && colon == std::string_view::npos) {
    return s;
  } else if (head == "noisy_greedy") {
    s.kind = Kind::noisy_greedy;
    s.temperature = parse_double(arg, "noisy_greedy temperature");
  } else if (head == "beam") {
    s.kind = Kind::beam;
    s.width = parse_int(arg, "beam width");
  } else {
    throw ContractViolation("unknown sampling strategy '" + std::string(text) +
                            "' (expected ancestral, noisy_greedy:<t> or beam:<w>)");
  }
  s.validate();
  return s;
}

IntermediateMode parse_intermediate_mode(std::string_view text) {
  if (text == "free_running") return IntermediateMode::free_running;
  if (text == "teacher_forced") return IntermediateMode::teacher_forced;
  throw ContractViolation("intermediate_mode must be 'free_running' or 'teacher_forced', got '" +
                          std::string(text) + "'");
}

std::string to_string(IntermediateMode mode) {
  return mode == IntermediateMode::free_running ? "free_running" : "teacher_forced";
}

SampleSet draw_intermediate_samples(const FirstPassParams& first, const TokenSeq& x, int M,
                                    const SamplingStrategy& strategy, int max_len,
                                    std::uint64_t seed) {
  if (M < 1) throw ContractViolation("sample count M must be >= 1, got " + std::to_string(M));
  strategy.validate();
  Graph g;
  FirstPassNet net(g, first);
  FirstPassStepModel model(net, x);
  SampleSet out;
  if (strategy.kind == SamplingStrategy::Kind::beam) {
    const std::vector<Generation> list = decode_beam(model, max_len, strategy.width);
    for (int m = 0; m < M; ++m) {
      const Generation& gen = list[static_cast<std::size_t>(m) % list.size()];
      out.samples.push_back({IntermediateFeatures::from_generation(gen), gen.logprob, {}});
    }
    return out;
  }
  const bool ancestral = strategy.kind == SamplingStrategy::Kind::ancestral;
  const double temperature = ancestral ? 1.0 : strategy.temperature;
  for (int m = 0; m < M; ++m) {
    Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(m)});
    Generation gen = decode_sample(model, max_len, temperature, rng);
    IntermediateSample s{IntermediateFeatures::from_generation(gen), gen.logprob, {}};
    if (ancestral) {
      const int K = gen.noise.cols();
      s.noise = Tensor(max_len, K);
      std::copy(gen.noise.values().begin(), gen.noise.values().end(), s.noise.values().begin());
      for (std::size_t i = gen.noise.size(); i < s.noise.size(); ++i) s.noise[i] = rng.gumbel();
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

SampleSet teacher_forced_intermediate(const FirstPassParams& first, const Example& ex, int M,
                                      const SamplingStrategy& strategy, int max_len,
                                      std::uint64_t seed) {
  if (M < 1) throw ContractViolation("sample count M must be >= 1, got " + std::to_string(M));
  if (max_len < 1) throw ContractViolation("T_max must be >= 1");
  strategy.validate();
  Graph g;
  FirstPassNet net(g, first);
  const std::span<const Token> ref(ex.y.data(), std::min<std::size_t>(ex.y.size(), max_len));
  ScoredSequence scored = score_first_pass(net, net.encode(ex.x), ref);
  SampleSet out;
  for (int m = 0; m < M; ++m) {
    Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(m)});
    TokenSeq tokens;
    double logprob = 0.0;
    for (const Var& row : scored.log_probs) {
      const auto lp = row.value().values();
      int k = 0;
      if (strategy.kind == SamplingStrategy::Kind::beam) {
        k = argmax(lp);
      } else {
        const double temperature =
            strategy.kind == SamplingStrategy::Kind::ancestral ? 1.0 : strategy.temperature;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < lp.size(); ++j) {
          const double s = lp[j] / temperature + rng.gumbel();
          if (s > best) best = s, k = static_cast<int>(j);
        }
      }
      tokens.push_back(Vocab::output_token(k));
      logprob += lp[k];
      if (tokens.back() == Vocab::eos) break;
    }
    if (tokens.back() != Vocab::eos && static_cast<int>(tokens.size()) < max_len) {
      tokens.push_back(Vocab::eos);
    }
    out.samples.push_back({features_for(first, ex.x, tokens), logprob, {}});
  }
  return out;
}

SampleSet intermediate_samples(const FirstPassParams& first, const Example& ex, int M,
                               const SamplingStrategy& strategy, IntermediateMode mode,
                               int max_len, std::uint64_t seed) {
  return mode == IntermediateMode::free_running
             ? draw_intermediate_samples(first, ex.x, M, strategy, max_len, seed)
             : teacher_forced_intermediate(first, ex, M, strategy, max_len, seed);
}

std::vector<SampleSet> draw_batch_samples(const FirstPassParams& first, const Batch& batch, int M,
                                          const SamplingStrategy& strategy, IntermediateMode mode,
                                          int max_len, std::uint64_t seed, Execution exec) {
  return map_indices<SampleSet>(batch.size(), exec, [&](std::size_t i) {
    return intermediate_samples(first, batch[i], M, strategy, mode, max_len, Rng::mix(seed, i));
  });
}

// -------------------------------------------------------------------- schemes

TrainStep joint_grad_step(const DelibModel& model, const Batch& batch,
                          const std::vector<SampleSet>& samples, Execution exec) {
  const auto start = Clock::now();
  check_samples(batch, samples);
  const double total_w = batch_weight(batch);
  struct Part {
    PassGradients grads;
    double loss = 0.0;
  };
  TrainStep out;
  out.grads = PassGradients::zeros_like(model);
  double loss = 0.0;
  map_fold<Part>(
      batch.size(), exec,
      [&](std::size_t i) {
        const Example& ex = batch[i];
        const SampleSet& set = samples[i];
        const double inv_m = 1.0 / static_cast<double>(set.size());
        Part part{PassGradients::zeros_like(model), 0.0};
        for (const IntermediateSample& s : set.samples) {
          ScoredTerm t1 = first_pass_term(model.first, ex.x, s.features.tokens);
          ScoredTerm t2 = second_pass_term(model.second, ex.x, s.features, ex.y);
          part.grads.first.accumulate(t1.grad, -t2.logp * inv_m);
          part.grads.second.accumulate(t2.grad, -inv_m);
          part.loss -= t2.logp * inv_m;
        }
        return part;
      },
      [&](std::size_t i, const Part& part) {
        const double w = batch[i].weight / total_w;
        out.grads.accumulate(part.grads, w);
        loss += w * part.loss;
      },
      kGradChunk);
  out.report.losses["joint"] = loss;
  finish_report(out, start);
  return out;
}

TrainStep joint_grad_step(const DelibModel& model, const Batch& batch, int M,
                          const SamplingStrategy& strategy, int max_len, std::uint64_t seed,
                          Execution exec) {
  const auto samples = draw_batch_samples(model.first, batch, M, strategy,
                                          IntermediateMode::free_running, max_len, seed, exec);
  return joint_grad_step(model, batch, samples, exec);
}

Relaxation parse_relaxation(std::string_view text) {
  if (text == "straight_through") return Relaxation::straight_through;
  if (text == "relaxed") return Relaxation::relaxed;
  throw ContractViolation("relaxation must be 'straight_through' or 'relaxed', got '" +
                          std::string(text) + "'");
}

std::string to_string(Relaxation r) {
  return r == Relaxation::straight_through ? "straight_through" : "relaxed";
}

Var relaxed_joint_loss(const FirstPassNet& first, const SecondPassNet& second, const Example& ex,
                       const Tensor& noise, double tau, Relaxation relaxation, int max_len) {
  if (!(tau > 0.0)) throw ContractViolation("Gumbel-softmax temperature must be positive");
  Graph& g = first.graph();
  const int K = first.config().vocab().output_size();
  if (noise.rows() < max_len || noise.cols() != K) {
    throw ContractViolation("relaxed sample needs noise of shape [" + std::to_string(max_len) + "x" +
                            std::to_string(K) + "], got " + noise.shape_string());
  }
  const bool extras = second.config().intermediate_extras;
  AttentionMemory mem = first.encode(ex.x);
  DecoderCarry carry = first.start();
  Var input = first.embed(Vocab::bos);
  std::vector<Var> rows;
  for (int t = 0; t < max_len; ++t) {
    FirstPassNet::Step st = first.step(carry, input, mem);
    carry = st.carry;
    Tensor z(1, K), hard(1, K);
    const auto lp = st.log_probs.value().values();
    int k = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < K; ++j) {
      z[j] = noise(t, j);
      if (lp[j] + z[j] > best) best = lp[j] + z[j], k = j;
    }
    hard[k] = 1.0;
    Var soft = softmax(scale(add(st.log_probs, g.constant(std::move(z))), 1.0 / tau));
    Var row = relaxation == Relaxation::straight_through ? straight_through(soft, g.constant(std::move(hard)))
                                                         : soft;
    Var emb = second.intermediate_embed_distribution(row);
    if (extras) {
      emb = concat_cols({emb, g.constant(st.carry.state.value()), g.constant(st.attended.context.value())});
    }
    rows.push_back(emb);
    if (Vocab::output_token(k) == Vocab::eos) break;
    input = first.embed_distribution(row);
  }
  ScoredSecondPass scored =
      score_second_pass(second, second.encode_input(ex.x), second.encode_intermediate_rows(rows), ex.y);
  return scale(scored.total, -1.0);
}

TrainStep joint_loss_step(const DelibModel& model, const Batch& batch,
                          const std::vector<SampleSet>& samples, double tau, Relaxation relaxation,
                          int max_len, Execution exec) {
  const auto start = Clock::now();
  check_samples(batch, samples);
  const double total_w = batch_weight(batch);
  struct Part {
    PassGradients grads;
    double loss = 0.0;
  };
  TrainStep out;
  out.grads = PassGradients::zeros_like(model);
  double loss = 0.0;
  map_fold<Part>(
      batch.size(), exec,
      [&](std::size_t i) {
        const SampleSet& set = samples[i];
        const double inv_m = 1.0 / static_cast<double>(set.size());
        Part part{PassGradients::zeros_like(model), 0.0};
        for (const IntermediateSample& s : set.samples) {
          if (s.noise.empty()) {
            throw DataError("joint_loss needs ancestral samples with stored Gumbel noise");
          }
          Graph g;
          FirstPassNet fp(g, model.first);
          SecondPassNet sp(g, model.second);
          Var l = relaxed_joint_loss(fp, sp, batch[i], s.noise, tau, relaxation, max_len);
          g.backward(l);
          part.grads.first.accumulate(g.gradients(model.first.table, kFirstPassGroup), inv_m);
          part.grads.second.accumulate(g.gradients(model.second.table, kSecondPassGroup), inv_m);
          part.loss += l.value().item() * inv_m;
        }
        return part;
      },
      [&](std::size_t i, const Part& part) {
        const double w = batch[i].weight / total_w;
        out.grads.accumulate(part.grads, w);
        loss += w * part.loss;
      },
      kGradChunk);
  out.report.losses["joint"] = loss;
  finish_report(out, start);
  return out;
}

TrainStep separate_train_first(const FirstPassParams& first, const Batch& batch, Execution exec) {
  const auto start = Clock::now();
  LossAndGrad lg = nll_teacher_forcing(first, batch, exec);
  TrainStep out;
  out.report.losses["nll"] = lg.loss;
  out.grads.first = std::move(lg.grad);
  finish_report(out, start);
  return out;
}

namespace {

struct SecondPassPart {
  GradientMap grad;
  double nll = 0.0;       // -(1/M) sum log F^II
  double log_mean = 0.0;  // -log((1/M) sum F^II)
  double guided = 0.0;    // (1/M) sum L_alpha
};

SecondPassPart second_pass_part(const SecondPassParams& second, const Example& ex, const SampleSet& set,
                                double nll_weight, double gamma, double g_sharp, bool guided) {
  const double inv_m = 1.0 / static_cast<double>(set.size());
  SecondPassPart part{GradientMap::zeros_like(second.table), 0.0, 0.0, 0.0};
  std::vector<double> logs;
  for (const IntermediateSample& s : set.samples) {
    Graph g;
    SecondPassNet net(g, second);
    ScoredSecondPass scored =
        score_second_pass(net, net.encode_input(ex.x), net.encode_intermediate(s.features), ex.y);
    Var loss = scale(scored.total, -nll_weight);
    if (guided) {
      Var ga = guided_attention_loss(g, scored.alphas_y, g_sharp);
      part.guided += ga.value().item() * inv_m;
      loss = add(loss, scale(ga, gamma));
    }
    part.grad.accumulate(g.backward(loss, second.table, kSecondPassGroup), inv_m);
    const double lp = scored.total.value().item();
    part.nll -= lp * inv_m;
    logs.push_back(lp);
  }
  const double mx = *std::max_element(logs.begin(), logs.end());
  double acc = 0.0;
  for (double lp : logs) acc += std::exp(lp - mx);
  part.log_mean = -(mx + std::log(acc * inv_m));
  return part;
}

TrainStep second_pass_step_impl(const SecondPassParams& second, const Batch& batch,
                                const std::vector<SampleSet>& samples, double nll_weight, double gamma,
                                double g_sharp, bool guided, Execution exec) {
  const auto start = Clock::now();
  check_samples(batch, samples);
  if (guided && !(gamma >= 0.0)) throw ContractViolation("gamma must be >= 0");
  const double total_w = batch_weight(batch);
  TrainStep out;
  out.grads.second = GradientMap::zeros_like(second.table);
  double nll = 0.0, log_mean = 0.0, ga = 0.0;
  map_fold<SecondPassPart>(
      batch.size(), exec,
      [&](std::size_t i) {
        return second_pass_part(second, batch[i], samples[i], nll_weight, gamma, g_sharp, guided);
      },
      [&](std::size_t i, const SecondPassPart& p) {
        const double w = batch[i].weight / total_w;
        out.grads.second.accumulate(p.grad, w);
        nll += w * p.nll;
        log_mean += w * p.log_mean;
        ga += w * p.guided;
      },
      kGradChunk);
  if (nll_weight != 0.0) {
    out.report.losses["separate"] = nll;
    out.report.losses["separate_log_mean"] = log_mean;
  }
  if (guided) {
    out.report.losses["guided_attention"] = ga;
    if (nll_weight != 0.0) out.report.losses["combined"] = nll + gamma * ga;
  }
  finish_report(out, start);
  return out;
}

}  // namespace

TrainStep separate_train_second(const SecondPassParams& second, const Batch& batch,
                                const std::vector<SampleSet>& samples, Execution exec) {
  return second_pass_step_impl(second, batch, samples, 1.0, 0.0, 1.0, false, exec);
}

// ---------------------------------------------------------- guided attention

Tensor guided_attention_weights(int T, int T_first, double g) {
  if (!(g > 0.0)) throw ContractViolation("guided attention sharpness g must be > 0");
  if (T < 1 || T_first < 1) throw ContractViolation("guided attention needs T, T^I >= 1");
  Tensor w(T, T_first);
  for (int t = 1; t <= T; ++t) {
    for (int l = 1; l <= T_first; ++l) {
      const double diff = static_cast<double>(t) / T - static_cast<double>(l) / T_first;
      w(t - 1, l - 1) = 1.0 - std::exp(-(diff * diff) / (2.0 * g * g));
    }
  }
  return w;
}

double guided_attention_loss(const Tensor& attn_y, double g) {
  const Tensor w = guided_attention_weights(attn_y.rows(), attn_y.cols(), g);
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) total += attn_y[i] * w[i];
  return total;
}

Var guided_attention_loss(Graph& graph, std::span<const Var> alphas_y, double g) {
  if (alphas_y.empty()) throw ContractViolation("guided attention over an empty attention map");
  const int T = static_cast<int>(alphas_y.size());
  const int TI = alphas_y.front().value().cols();
  const Tensor w = guided_attention_weights(T, TI, g);
  std::vector<Var> rows;
  for (int t = 0; t < T; ++t) {
    Tensor wr(1, TI);
    for (int l = 0; l < TI; ++l) wr[l] = w(t, l);
    rows.push_back(sum(mul(alphas_y[t], graph.constant(std::move(wr)))));
  }
  return sum(concat_cols(rows));
}

TrainStep combined_second_pass_loss(const SecondPassParams& second, const Batch& batch,
                                    const std::vector<SampleSet>& samples, double gamma, double g,
                                    Execution exec) {
  return second_pass_step_impl(second, batch, samples, 1.0, gamma, g, true, exec);
}

TrainStep guided_attention_step(const SecondPassParams& second, const Batch& batch,
                                const std::vector<SampleSet>& samples, double g, Execution exec) {
  return second_pass_step_impl(second, batch, samples, 0.0, 1.0, g, true, exec);
}

// ------------------------------------------------------------------ info gain

double info_gain_estimate(const DelibModel& model, const Batch& batch, IntermediateMode mode,
                          const SamplingStrategy& strategy, int max_len, std::uint64_t seed,
                          Execution exec) {
  const double total_w = batch_weight(batch);
  std::vector<double> gains = map_indices<double>(batch.size(), exec, [&](std::size_t i) {
    const Example& ex = batch[i];
    SampleSet s = intermediate_samples(model.first, ex, 1, strategy, mode, max_len, Rng::mix(seed, i));
    Graph g;
    FirstPassNet fp(g, model.first);
    SecondPassNet sp(g, model.second);
    ScoredSequence one = score_first_pass(fp, fp.encode(ex.x), ex.y);
    ScoredSecondPass two =
        score_second_pass(sp, sp.encode_input(ex.x), sp.encode_intermediate(s.samples[0].features), ex.y);
    double gain = 0.0;
    for (std::size_t t = 0; t < ex.y.size(); ++t) {
      gain += entropy(one.log_probs[t].value()) - entropy(two.log_probs[t].value());
    }
    return gain / static_cast<double>(ex.y.size());
  });
  double out = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) out += batch[i].weight / total_w * gains[i];
  return out;
}

// ------------------------------------------------------------------ optimizer

UpdateStats sgd_update(ParameterTable& params, const GradientMap& grad, double lr, double clip) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ContractViolation("learning rate must be positive");
  for (const auto& [name, g] : grad) {
    if (!params.contains(name)) throw ContractViolation("gradient for unknown parameter '" + name + "'");
    if (!g.same_shape(params.at(name))) {
      throw ContractViolation("gradient '" + name + "' has shape " + g.shape_string() + ", parameter " +
                              params.at(name).shape_string());
    }
    if (!g.all_finite()) {
      throw NumericDomainError("non-finite gradient for '" + name + "'; update rejected");
    }
  }
  UpdateStats stats;
  stats.norm = std::sqrt(grad.squared_norm());
  if (!std::isfinite(stats.norm)) throw NumericDomainError("gradient norm overflow; update rejected");
  double factor = 1.0;
  if (clip > 0.0 && stats.norm > clip) {
    factor = clip / stats.norm;
    stats.clipped = true;
  }
  for (const auto& [name, g] : grad) {
    Tensor& p = params.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * factor * g[i];
  }
  stats.applied_norm = lr * factor * stats.norm;
  return stats;
}

// ---------------------------------------------------------------- schemes cfg

void Scheme::validate() const {
  if (samples < 1) throw ContractViolation("scheme samples M must be >= 1");
  if (!(temperature > 0.0)) throw ContractViolation("scheme temperature must be > 0");
  sampling.validate();
}

Scheme::Kind parse_scheme_kind(std::string_view text) {
  if (text == "joint_grad") return Scheme::Kind::joint_grad;
  if (text == "joint_loss") return Scheme::Kind::joint_loss;
  if (text == "separate") return Scheme::Kind::separate;
  throw ContractViolation("scheme must be joint_grad, joint_loss or separate, got '" + std::string(text) + "'");
}

std::string to_string(Scheme::Kind kind) {
  switch (kind) {
    case Scheme::Kind::joint_grad: return "joint_grad";
    case Scheme::Kind::joint_loss: return "joint_loss";
    case Scheme::Kind::separate: return "separate";
  }
  return "?";
}

}  // namespace delib
