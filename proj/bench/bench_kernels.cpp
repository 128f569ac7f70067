// Serial reference against the OpenMP path for the batch-level kernels.
// Each benchmark first checks that both paths give bit-identical results.
#include <benchmark/benchmark.h>
#include <omp.h>

#include "delib/estimator.hpp"
#include "delib/experiment.hpp"
#include "delib/oracle.hpp"

using namespace delib;

namespace {

Execution exec_of(const benchmark::State& state) {
  return state.range(0) ? Execution::parallel : Execution::serial;
}

void label(benchmark::State& state, bool identical) {
  state.SetLabel(std::string(state.range(0) ? "openmp" : "serial") + (identical ? "" : " MISMATCH"));
  state.counters["threads"] = state.range(0) ? omp_get_max_threads() : 1;
  if (!identical) state.SkipWithError("serial and parallel results differ");
}

TaskSpec copy_task(int n) {
  TaskSpec t;
  t.kind = TaskKind::copy;
  t.train_size = n;
  t.dev_size = n;
  t.test_size = n;
  return t;
}

void BM_TeacherForcedNll(benchmark::State& state) {
  const TaskSpec task = copy_task(128);
  const Corpus c = generate_corpus(task, Split::train);
  ModelConfig mc;
  mc.vocab_size = task.vocab_size;
  const DelibModel m = DelibModel::create(mc, 1);
  const LossAndGrad a = nll_teacher_forcing(m.first, c.pairs, Execution::serial);
  const LossAndGrad b = nll_teacher_forcing(m.first, c.pairs, Execution::parallel);
  label(state, a.loss == b.loss && a.grad == b.grad);
  for (auto _ : state) benchmark::DoNotOptimize(nll_teacher_forcing(m.first, c.pairs, exec_of(state)));
}

void BM_JointGradStep(benchmark::State& state) {
  const TaskSpec task = copy_task(64);
  const Corpus c = generate_corpus(task, Split::train);
  ModelConfig mc;
  mc.vocab_size = task.vocab_size;
  const DelibModel m = DelibModel::create(mc, 2);
  const auto samples = draw_batch_samples(m.first, c.pairs, 4, SamplingStrategy::ancestral(),
                                          IntermediateMode::free_running, task.max_tokens(), 3);
  const TrainStep a = joint_grad_step(m, c.pairs, samples, Execution::serial);
  const TrainStep b = joint_grad_step(m, c.pairs, samples, Execution::parallel);
  label(state, a.grads == b.grads);
  for (auto _ : state) benchmark::DoNotOptimize(joint_grad_step(m, c.pairs, samples, exec_of(state)));
}

void BM_ExactGradients(benchmark::State& state) {
  ModelConfig mc;
  mc.vocab_size = 4;
  mc.width = 4;
  const DelibModel m = DelibModel::create(mc, 4);
  const EnumeratedSpace space = enumerate_space(4, 4);
  const Batch batch{{{2, 3, 1}, {3, 2, 1}, 1.0}, {{3, 3, 2, 1}, {2, 1}, 1.0}};
  const auto a = exact_gradients(m, batch, space, Objective::bound, Execution::serial);
  const auto b = exact_gradients(m, batch, space, Objective::bound, Execution::parallel);
  label(state, a == b);
  for (auto _ : state) {
    benchmark::DoNotOptimize(exact_gradients(m, batch, space, Objective::bound, exec_of(state)));
  }
}

void BM_EstimatorTrials(benchmark::State& state) {
  ModelConfig mc;
  mc.vocab_size = 4;
  mc.width = 2;
  mc.init_bound = 0.8;
  const DelibModel m = DelibModel::create(mc, 5);
  const Batch batch{{{2, 3, 1}, {3, 1}, 1.0}};
  Scheme scheme;
  scheme.kind = Scheme::Kind::joint_grad;
  const auto a = verify_estimator(m, batch, scheme, 1, 500, 6, 3, Execution::serial);
  const auto b = verify_estimator(m, batch, scheme, 1, 500, 6, 3, Execution::parallel);
  label(state, a.mean == b.mean && a.variance == b.variance);
  for (auto _ : state) {
    benchmark::DoNotOptimize(verify_estimator(m, batch, scheme, 1, 500, 6, 3, exec_of(state)));
  }
}

void BM_Evaluate(benchmark::State& state) {
  const TaskSpec task = copy_task(100);
  const Corpus c = generate_corpus(task, Split::test);
  ModelConfig mc;
  mc.vocab_size = task.vocab_size;
  const DelibModel m = DelibModel::create(mc, 7);
  EvalOptions opts;
  opts.info_gain = false;
  const auto a = evaluate_model(m, c, opts, Execution::serial);
  const auto b = evaluate_model(m, c, opts, Execution::parallel);
  label(state, a.hypotheses == b.hypotheses && a.record.nll == b.record.nll);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_model(m, c, opts, exec_of(state)));
}

}  // namespace

BENCHMARK(BM_TeacherForcedNll)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_JointGradStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExactGradients)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EstimatorTrials)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
