#include "delib/experiment.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "delib/scoring.hpp"

namespace delib {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

// Sub-stream tags under the run seed.
constexpr std::uint64_t kShuffleTag = 11;
constexpr std::uint64_t kSampleTag = 12;
constexpr std::uint64_t kEvalTag = 13;

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng::mix(Rng::mix(Rng::mix(seed, tag), a), b);
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

// Mini-batches of `order` in sequence; the last one may be short.
template <class Fn>
void for_each_batch(const std::vector<std::size_t>& order, int batch_size, Fn&& fn) {
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    fn(std::vector<std::size_t>(order.begin() + start, order.begin() + end));
  }
}

Batch gather(const Batch& pairs, const std::vector<std::size_t>& idx) {
  Batch b;
  b.reserve(idx.size());
  for (std::size_t i : idx) b.push_back(pairs[i]);
  return b;
}

class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void check_report(const LossReport& r, int epoch) {
  if (!r.all_finite()) throw NumericFailure("non-finite loss or gradient in epoch " + std::to_string(epoch));
}

void drop_encoder(GradientMap& g) {
  GradientMap kept;
  for (const auto& [name, t] : g) {
    if (!is_encoder_param(name)) kept[name] = t;
  }
  g = std::move(kept);
}

struct Runner {
  const RunConfig& cfg;
  const Corpus& train;
  const Corpus* dev;
  const TrainHooks& hooks;
  Execution exec;
  TrainOutcome out;
  Checkpoint last_good;
  int max_len;

  Runner(const RunConfig& c, const Corpus& t, const Corpus* d, const TrainHooks& h, Execution e, DelibModel m)
      : cfg(c),
        train(t),
        dev(d),
        hooks(h),
        exec(e),
        out{Checkpoint{c, m, 0, "init"}, {}, false, {}},
        last_good{c, std::move(m), 0, "init"},
        max_len(t.task.max_tokens()) {}

  DelibModel& model() { return out.final.model; }

  void emit(const MetricRecord& r) {
    out.metrics.push_back(r);
    if (hooks.on_metric) hooks.on_metric(r);
  }

  void finish_epoch(int epoch, const std::string& phase, double train_loss, bool two_pass, Clock::time_point t0) {
    MetricRecord r;
    r.epoch = epoch;
    r.split = "train";
    r.phase = phase;
    r.scheme = phase == "pretrain" ? "pretrain" : to_string(cfg.scheme.kind);
    r.nll = train_loss;
    r.wall_seconds = seconds_since(t0);
    emit(r);
    if (dev && dev->size()) {
      EvalOptions opts;
      opts.mode = cfg.decode_mode();
      opts.two_pass = two_pass;
      opts.seed = sub_seed(cfg.seed, kEvalTag, epoch);
      opts.g = cfg.regularizer.g;
      EvalResult ev = evaluate_model(model(), *dev, opts, exec);
      ev.record.epoch = epoch;
      ev.record.phase = phase;
      ev.record.scheme = r.scheme;
      emit(ev.record);
      spdlog::info("epoch {} [{}] train loss {:.4f} dev nll {:.4f} ter {:.4f}", epoch, phase, train_loss,
                   *ev.record.nll, *ev.record.token_error_rate);
    } else {
      spdlog::info("epoch {} [{}] train loss {:.4f}", epoch, phase, train_loss);
    }
    out.final.epoch = epoch;
    out.final.phase = phase;
    last_good = out.final;
    if (hooks.on_checkpoint) hooks.on_checkpoint(out.final);
  }

  void pretrain(int& epoch) {
    for (int p = 0; p < cfg.optimizer.pretrain_epochs; ++p) {
      const auto t0 = Clock::now();
      ++epoch;
      double loss = 0.0;
      std::size_t batches = 0;
      for_each_batch(shuffled(train.size(), sub_seed(cfg.seed, kShuffleTag, epoch)), cfg.optimizer.batch_size,
                     [&](const std::vector<std::size_t>& idx) {
                       TrainStep st = separate_train_first(model().first, gather(train.pairs, idx), exec);
                       check_report(st.report, epoch);
                       sgd_update(model().first.table, st.grads.first, cfg.optimizer.lr, cfg.optimizer.clip);
                       loss += st.report.losses.at("nll");
                       ++batches;
                     });
      finish_epoch(epoch, "pretrain", loss / batches, false, t0);
    }
  }

  void separate_phase(int& epoch) {
    if (cfg.optimizer.epochs == 0) return;
    const auto t_samples = Clock::now();
    const std::vector<SampleSet> samples =
        draw_batch_samples(model().first, train.pairs, cfg.scheme.samples, cfg.scheme.sampling,
                           cfg.intermediate_mode, max_len, sub_seed(cfg.seed, kSampleTag), exec);
    spdlog::info("drew {} x {} {} intermediate samples in {:.2f}s", train.size(), cfg.scheme.samples,
                 to_string(cfg.intermediate_mode), seconds_since(t_samples));
    for (int p = 0; p < cfg.optimizer.epochs; ++p) {
      const auto t0 = Clock::now();
      ++epoch;
      double loss = 0.0;
      std::size_t batches = 0;
      for_each_batch(shuffled(train.size(), sub_seed(cfg.seed, kShuffleTag, epoch)), cfg.optimizer.batch_size,
                     [&](const std::vector<std::size_t>& idx) {
                       std::vector<SampleSet> sub;
                       for (std::size_t i : idx) sub.push_back(samples[i]);
                       const Batch batch = gather(train.pairs, idx);
                       TrainStep st = cfg.regularizer.enabled
                                          ? combined_second_pass_loss(model().second, batch, sub,
                                                                      cfg.regularizer.gamma, cfg.regularizer.g, exec)
                                          : separate_train_second(model().second, batch, sub, exec);
                       check_report(st.report, epoch);
                       // theta^I, including the shared encoder, stays frozen.
                       drop_encoder(st.grads.second);
                       sgd_update(model().second.table, st.grads.second, cfg.optimizer.lr, cfg.optimizer.clip);
                       loss += st.report.losses.at(cfg.regularizer.enabled ? "combined" : "separate");
                       ++batches;
                     });
      finish_epoch(epoch, "scheme", loss / batches, true, t0);
    }
  }

  void joint_phase(int& epoch) {
    for (int p = 0; p < cfg.optimizer.epochs; ++p) {
      const auto t0 = Clock::now();
      ++epoch;
      double loss = 0.0;
      std::size_t batches = 0;
      for_each_batch(
          shuffled(train.size(), sub_seed(cfg.seed, kShuffleTag, epoch)), cfg.optimizer.batch_size,
          [&](const std::vector<std::size_t>& idx) {
            const Batch batch = gather(train.pairs, idx);
            const auto samples =
                draw_batch_samples(model().first, batch, cfg.scheme.samples, cfg.scheme.sampling,
                                   IntermediateMode::free_running, max_len,
                                   sub_seed(cfg.seed, kSampleTag, epoch, batches), exec);
            TrainStep st = cfg.scheme.kind == Scheme::Kind::joint_grad
                               ? joint_grad_step(model(), batch, samples, exec)
                               : joint_loss_step(model(), batch, samples, cfg.scheme.temperature,
                                                 cfg.scheme.relaxation, max_len, exec);
            double step_loss = st.report.losses.at("joint");
            if (cfg.regularizer.enabled) {
              TrainStep ga = guided_attention_step(model().second, batch, samples, cfg.regularizer.g, exec);
              check_report(ga.report, epoch);
              st.grads.second.accumulate(ga.grads.second, cfg.regularizer.gamma);
              step_loss += cfg.regularizer.gamma * ga.report.losses.at("guided_attention");
            }
            check_report(st.report, epoch);
            ParameterTable all = model().all_parameters();
            sgd_update(all, st.grads.merged(), cfg.optimizer.lr, cfg.optimizer.clip);
            loss += step_loss;
            ++batches;
          });
      finish_epoch(epoch, "scheme", loss / batches, true, t0);
    }
  }

  template <class Body>
  TrainOutcome guarded(Body&& body) {
    try {
      body();
    } catch (const NumericFailure& e) {
      out.numeric_failure = true;
      out.failure = e.what();
    } catch (const NumericDomainError& e) {
      out.numeric_failure = true;
      out.failure = e.what();
    }
    if (out.numeric_failure) {
      spdlog::error("training stopped: {}", out.failure);
      out.final = last_good;
    }
    return std::move(out);
  }
};

void check_corpus(const RunConfig& cfg, const Corpus& c, const char* what) {
  if (c.task.vocab_size != cfg.task.vocab_size) {
    throw ConfigError(std::string(what) + " corpus has vocabulary size " + std::to_string(c.task.vocab_size) +
                      " but the config expects " + std::to_string(cfg.task.vocab_size));
  }
  if (c.size() == 0) throw ConfigError(std::string(what) + " corpus is empty");
}

}  // namespace

json MetricRecord::to_json() const {
  return json{{"epoch", epoch},
              {"split", split},
              {"phase", phase},
              {"scheme", scheme},
              {"nll", optional_json(nll)},
              {"token_error_rate", optional_json(token_error_rate)},
              {"exact_match", optional_json(exact_match)},
              {"guided_attention", optional_json(guided_attention)},
              {"band_mass", optional_json(band_mass)},
              {"info_gain_free_running", optional_json(info_gain_free_running)},
              {"info_gain_teacher_forced", optional_json(info_gain_teacher_forced)},
              {"wall_seconds", wall_seconds}};
}

TokenSeq content_of(const TokenSeq& seq) {
  TokenSeq out;
  for (Token t : seq) {
    if (t == Vocab::eos) break;
    out.push_back(t);
  }
  return out;
}

double token_error_rate(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  if (hyps.size() != refs.size()) throw ContractViolation("token_error_rate: hypothesis/reference count mismatch");
  std::size_t errors = 0, length = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const TokenSeq h = content_of(hyps[i]), r = content_of(refs[i]);
    errors += levenshtein(h, r);
    length += std::max(h.size(), r.size());
  }
  return length ? static_cast<double>(errors) / static_cast<double>(length) : 0.0;
}

double band_mass(const Tensor& attn_y, double band) {
  const int T = attn_y.rows(), TI = attn_y.cols();
  if (T == 0) return 0.0;
  double total = 0.0;
  for (int t = 1; t <= T; ++t) {
    for (int l = 1; l <= TI; ++l) {
      if (std::abs(static_cast<double>(t) / T - static_cast<double>(l) / TI) < band) total += attn_y(t - 1, l - 1);
    }
  }
  return total / T;
}

EvalResult evaluate_model(const DelibModel& model, const Corpus& corpus, const EvalOptions& opts, Execution exec) {
  const auto t0 = Clock::now();
  if (corpus.task.vocab_size != model.config().vocab_size) {
    throw ConfigError("corpus vocabulary size " + std::to_string(corpus.task.vocab_size) +
                      " does not match the model's " + std::to_string(model.config().vocab_size));
  }
  opts.mode.validate();
  const int max_len = corpus.task.max_tokens();
  struct PerExample {
    TokenSeq hyp;
    double nll = 0.0;
    double guided = 0.0;
    double band = 0.0;
    json attention;
  };
  const auto rows = map_indices<PerExample>(corpus.size(), exec, [&](std::size_t i) {
    const Example& ex = corpus.pairs[i];
    PerExample r;
    const bool dump = static_cast<int>(i) < opts.attention_dumps;
    auto matrix = [](const Tensor& t) {
      json m = json::array();
      for (int a = 0; a < t.rows(); ++a) {
        json row = json::array();
        for (int b = 0; b < t.cols(); ++b) row.push_back(t(a, b));
        m.push_back(std::move(row));
      }
      return m;
    };
    if (opts.two_pass) {
      TwoPassOutput gen = two_pass_generate(ex.x, model, opts.mode, max_len, Rng::mix(opts.seed, i));
      r.hyp = gen.second.tokens;
      SecondPassScore s =
          second_pass_logprob(ex.x, IntermediateFeatures::from_generation(gen.first), ex.y, model.second);
      r.nll = -s.total;
      r.guided = guided_attention_loss(s.attention_y, opts.g);
      r.band = band_mass(s.attention_y);
      if (dump) {
        r.attention = json{{"index", i},
                           {"x", ex.x},
                           {"y", ex.y},
                           {"first_pass", gen.first.tokens},
                           {"second_pass", gen.second.tokens},
                           {"first_alpha", matrix(gen.first.attention.at(0))},
                           {"second_alpha_x", matrix(gen.second.attention.at(0))},
                           {"second_alpha_y", matrix(gen.second.attention.at(1))}};
      }
    } else {
      Generation gen = generate(ex.x, model.first, opts.mode, max_len, Rng::mix(opts.seed, i));
      r.hyp = gen.tokens;
      r.nll = -teacher_forced_logprob(ex.x, ex.y, model.first).total;
      if (dump) {
        r.attention = json{{"index", i},
                           {"x", ex.x},
                           {"y", ex.y},
                           {"first_pass", gen.tokens},
                           {"first_alpha", matrix(gen.attention.at(0))}};
      }
    }
    return r;
  });

  EvalResult out;
  std::vector<TokenSeq> refs;
  double nll = 0.0, guided = 0.0, band = 0.0, exact = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.hypotheses.push_back(rows[i].hyp);
    refs.push_back(corpus.pairs[i].y);
    nll += rows[i].nll;
    guided += rows[i].guided;
    band += rows[i].band;
    exact += content_of(rows[i].hyp) == content_of(corpus.pairs[i].y);
    if (!rows[i].attention.is_null()) out.attention.push_back(rows[i].attention);
  }
  const double n = static_cast<double>(rows.size());
  MetricRecord& rec = out.record;
  rec.split = to_string(corpus.split);
  rec.phase = "eval";
  rec.nll = nll / n;
  rec.token_error_rate = token_error_rate(out.hypotheses, refs);
  rec.exact_match = exact / n;
  if (opts.two_pass) {
    rec.guided_attention = guided / n;
    rec.band_mass = band / n;
    if (opts.info_gain) {
      rec.info_gain_free_running = info_gain_estimate(model, corpus.pairs, IntermediateMode::free_running,
                                                      SamplingStrategy::ancestral(), max_len, opts.seed, exec);
      rec.info_gain_teacher_forced = info_gain_estimate(model, corpus.pairs, IntermediateMode::teacher_forced,
                                                        SamplingStrategy::ancestral(), max_len, opts.seed, exec);
    }
  }
  rec.wall_seconds = seconds_since(t0);
  return out;
}

TrainOutcome run_training(const RunConfig& cfg, const Corpus& train, const Corpus* dev, const TrainHooks& hooks,
                          Execution exec) {
  cfg.validate();
  check_corpus(cfg, train, "train");
  if (dev) check_corpus(cfg, *dev, "dev");
  Runner run(cfg, train, dev, hooks, exec, DelibModel::create(cfg.model_config(), cfg.seed));
  if (hooks.on_checkpoint) hooks.on_checkpoint(run.out.final);
  return run.guarded([&] {
    int epoch = 0;
    run.pretrain(epoch);
    if (cfg.scheme.kind == Scheme::Kind::separate) {
      run.separate_phase(epoch);
    } else {
      run.joint_phase(epoch);
    }
  });
}

TrainOutcome continue_separate(const RunConfig& cfg, const DelibModel& start, const Corpus& train,
                               const Corpus* dev, const TrainHooks& hooks, Execution exec) {
  cfg.validate();
  if (cfg.scheme.kind != Scheme::Kind::separate) throw ConfigError("continue_separate needs scheme.kind=separate");
  if (!(start.config() == cfg.model_config())) throw ConfigError("model does not match the config");
  check_corpus(cfg, train, "train");
  if (dev) check_corpus(cfg, *dev, "dev");
  Runner run(cfg, train, dev, hooks, exec, start);
  return run.guarded([&] {
    int epoch = cfg.optimizer.pretrain_epochs;
    run.separate_phase(epoch);
  });
}

}  // namespace delib
