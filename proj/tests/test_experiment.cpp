#include <cmath>
#include <filesystem>
#include <fstream>

#include "delib/experiment.hpp"
#include "doctest.h"

using namespace delib;
using nlohmann::json;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "delib_test_experiment";
  std::filesystem::create_directories(dir);
  return dir / name;
}

RunConfig small_run(Scheme::Kind kind) {
  RunConfig c;
  c.task.kind = TaskKind::copy;
  c.task.vocab_size = 6;
  c.task.min_len = 2;
  c.task.max_len = 4;
  c.task.train_size = 40;
  c.task.dev_size = 10;
  c.task.test_size = 10;
  c.model.width = 6;
  c.scheme.kind = kind;
  c.optimizer.lr = 0.2;
  c.optimizer.epochs = 2;
  c.optimizer.pretrain_epochs = 2;
  c.optimizer.batch_size = 8;
  c.seed = 5;
  return c;
}

bool finite_model(const DelibModel& m) {
  for (const auto& [name, t] : m.all_parameters()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

std::vector<json> without_timing(const std::vector<MetricRecord>& records) {
  std::vector<json> out;
  for (const auto& r : records) {
    json j = r.to_json();
    j.erase("wall_seconds");
    out.push_back(j);
  }
  return out;
}

}  // namespace

TEST_CASE("config parsing and validation") {
  const RunConfig def;
  CHECK(def.optimizer.lr == 0.05);
  CHECK(def.regularizer.g == 0.2);

  const RunConfig back = config_from_json(to_json(small_run(Scheme::Kind::joint_loss)));
  CHECK(to_json(back) == to_json(small_run(Scheme::Kind::joint_loss)));

  CHECK_THROWS_AS(config_from_json(json{{"modle", json::object()}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"optimizer", {{"learning_rate", 0.1}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"optimizer", {{"lr", "fast"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"optimizer", {{"lr", -1.0}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"scheme", {{"kind", "joint"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"task", {{"kind", "copy"}, {"vocab_size", 2}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"scheme", {{"kind", "joint_grad"}}}, {"intermediate_mode", "teacher_forced"}}),
                  ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"scheme", {{"kind", "joint_loss"}, {"sampling", "beam:2"}}}}), ConfigError);
  CHECK_NOTHROW(config_from_json(json{{"scheme", {{"kind", "separate"}}}, {"intermediate_mode", "teacher_forced"}}));

  const auto path = scratch("broken.json");
  std::ofstream(path) << "{\"seed\": 3,";
  CHECK_THROWS_AS(load_config(path), ConfigError);
  CHECK_THROWS_AS(load_config(scratch("missing.json")), ConfigError);
}

TEST_CASE("checkpoint round trip is exact") {
  RunConfig cfg = small_run(Scheme::Kind::joint_grad);
  cfg.model.context_in_state = true;
  const Checkpoint ck{cfg, DelibModel::create(cfg.model_config(), 17), 3, "scheme"};
  const auto path = scratch("ck.json");
  save_checkpoint(ck, path);
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.epoch == 3);
  CHECK(back.phase == "scheme");
  CHECK(to_json(back.config) == to_json(cfg));
  CHECK(back.model.second.shares_encoder_with(back.model.first));
  for (const auto& name : ck.model.all_parameters().names()) {
    CHECK(back.model.all_parameters().at(name) == ck.model.all_parameters().at(name));
  }

  const Corpus test = generate_corpus(cfg.task, Split::test);
  EvalOptions opts;
  opts.info_gain = false;
  CHECK(*evaluate_model(back.model, test, opts).record.nll == *evaluate_model(ck.model, test, opts).record.nll);

  json bad = checkpoint_to_json(ck);
  bad["format"] = "other";
  CHECK_THROWS(checkpoint_from_json(bad));
  bad = checkpoint_to_json(ck);
  bad["first"].erase("enc.embed");
  CHECK_THROWS(checkpoint_from_json(bad));
}

TEST_CASE("token error rate and band mass") {
  CHECK(content_of({3, 4, 1, 5}) == TokenSeq{3, 4});
  CHECK(token_error_rate({{3, 4, 1}}, {{3, 4, 1}}) == 0.0);
  CHECK(token_error_rate({{1}}, {{3, 4, 5, 1}}) == 1.0);
  CHECK(token_error_rate({{3, 5, 1}, {2, 2, 2, 2, 1}}, {{3, 4, 1}, {2, 1}}) == doctest::Approx(4.0 / 6.0));

  Tensor diag(4, 4);
  for (int i = 0; i < 4; ++i) diag(i, i) = 1.0;
  CHECK(band_mass(diag) == 1.0);
  Tensor far(4, 4);
  for (int i = 0; i < 4; ++i) far(i, 3 - i) = 1.0;
  // Anti-diagonal: every |t/T - l/T^I| is at least 0.25.
  CHECK(band_mass(far) == 0.0);
  Tensor flat(2, 4, 0.25);
  // One column per row lies inside the band.
  CHECK(band_mass(flat) == 0.25);
}

TEST_CASE("evaluation of an untrained model") {
  RunConfig cfg = small_run(Scheme::Kind::joint_grad);
  cfg.task.vocab_size = 12;
  cfg.task.min_len = 4;
  cfg.task.max_len = 8;
  cfg.task.test_size = 100;
  const Corpus test = generate_corpus(cfg.task, Split::test);
  const DelibModel m = DelibModel::create(cfg.model_config(), 3);
  EvalOptions opts;
  opts.attention_dumps = 5;
  const EvalResult two = evaluate_model(m, test, opts);
  CHECK(*two.record.token_error_rate >= 0.8);
  CHECK(two.attention.size() == 5);
  for (const auto& dump : two.attention) {
    for (const char* key : {"first_alpha", "second_alpha_x", "second_alpha_y"}) {
      for (const auto& row : dump.at(key)) {
        double s = 0.0;
        for (double a : row) s += a;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
  CHECK(two.record.band_mass.has_value());
  CHECK(two.record.info_gain_free_running.has_value());

  opts.two_pass = false;
  const EvalResult one = evaluate_model(m, test, opts);
  CHECK_FALSE(one.record.band_mass.has_value());
  // Near-uniform first pass: per-token loss close to ln(V - 1).
  double tokens = 0.0;
  for (const auto& ex : test.pairs) tokens += static_cast<double>(ex.y.size());
  CHECK(*one.record.nll / (tokens / test.size()) == doctest::Approx(std::log(11.0)).epsilon(0.05));

  cfg.task.vocab_size = 9;
  CHECK_THROWS_AS(evaluate_model(m, generate_corpus(cfg.task, Split::test), opts), ConfigError);
}

TEST_CASE("separate scheme leaves theta^I untouched") {
  const RunConfig cfg = small_run(Scheme::Kind::separate);
  const Corpus train = generate_corpus(cfg.task, Split::train);
  std::vector<Checkpoint> seen;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const Checkpoint& ck) { seen.push_back(ck); };
  const TrainOutcome out = run_training(cfg, train, nullptr, hooks);
  REQUIRE_FALSE(out.numeric_failure);
  REQUIRE(seen.size() == 5);  // init, two pretrain epochs, two scheme epochs
  const Checkpoint& pre = seen[2];
  CHECK(pre.phase == "pretrain");
  for (const auto& name : pre.model.first.table.names()) {
    CHECK(out.final.model.first.table.at(name) == pre.model.first.table.at(name));
  }
  bool moved = false;
  for (const auto& name : out.final.model.second.own_names()) {
    moved = moved || !(out.final.model.second.table.at(name) == pre.model.second.table.at(name));
  }
  CHECK(moved);
}

TEST_CASE("training is reproducible and serial equals parallel") {
  for (auto kind : {Scheme::Kind::joint_grad, Scheme::Kind::joint_loss, Scheme::Kind::separate}) {
    CAPTURE(to_string(kind));
    RunConfig cfg = small_run(kind);
    cfg.regularizer.enabled = kind != Scheme::Kind::joint_loss;
    const Corpus train = generate_corpus(cfg.task, Split::train);
    const Corpus dev = generate_corpus(cfg.task, Split::dev);
    const TrainOutcome a = run_training(cfg, train, &dev, {}, Execution::serial);
    const TrainOutcome b = run_training(cfg, train, &dev, {}, Execution::parallel);
    CHECK(checkpoint_to_json(a.final).dump() == checkpoint_to_json(b.final).dump());
    CHECK(without_timing(a.metrics) == without_timing(b.metrics));
    CHECK(a.metrics.size() == 8);
  }
}

TEST_CASE("a numeric blow-up stops training at the last good checkpoint") {
  RunConfig cfg = small_run(Scheme::Kind::joint_grad);
  cfg.optimizer.pretrain_epochs = 1;
  cfg.optimizer.epochs = 3;
  cfg.optimizer.clip = 1e300;
  const Corpus train = generate_corpus(cfg.task, Split::train);
  const TrainOutcome ok = run_training(cfg, train, nullptr);
  REQUIRE_FALSE(ok.numeric_failure);

  cfg.optimizer.lr = 1e300;
  std::vector<int> epochs;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const Checkpoint& ck) { epochs.push_back(ck.epoch); };
  const TrainOutcome out = run_training(cfg, train, nullptr, hooks);
  CHECK(out.numeric_failure);
  CHECK_FALSE(out.failure.empty());
  CHECK(finite_model(out.final.model));
  REQUIRE_FALSE(epochs.empty());
  CHECK(out.final.epoch == epochs.back());
}
