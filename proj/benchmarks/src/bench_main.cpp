// Microbenchmarks for the estimation pipeline: weight evaluation, the two
// fitting stages, Jacobian assembly, the sandwich solve, and the end-to-end
// estimator.  Sizes are entity counts; every panel has six periods.

#include <benchmark/benchmark.h>

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <utility>

#include <ivhazard/estimator.hpp>
#include <ivhazard/simulate.hpp>

namespace {

using namespace ivhazard;

DgpConfig bench_config(std::size_t n_entities, std::size_t n_endog = 1) {
  DgpConfig cfg;
  cfg.n_entities = n_entities;
  cfg.t_max = 6;
  cfg.seed = 7000 + 10 * n_endog;
  cfg.n_exog = 1;
  cfg.n_instruments = 2;
  cfg.n_endog = n_endog;
  cfg.pi_exog.assign(n_endog, {0.5});
  cfg.pi_inst.assign(n_endog, {1.0, 0.7});
  cfg.psi.assign(6, -1.6);
  cfg.beta1 = {0.5};
  cfg.beta2.assign(n_endog, 0.5);
  cfg.rho = 0.5;
  cfg.sigma_v = 0.8;
  return cfg;
}

EstimateOptions cf_options() {
  EstimateOptions opts;
  opts.kind = EstimatorKind::control_function;
  opts.cf = {2, CfForm::separate};
  return opts;
}

// One fitted model per (size, equations), shared across the component
// benchmarks.  The context owns the frame the stacked model points into, so
// it lives behind a stable address for the duration of the run.
const EstimationContext& fitted(std::size_t n_entities,
                                std::size_t n_endog = 1) {
  struct Fit {
    std::unique_ptr<EstimationContext> ctx;
    PanelDataset data;
  };
  static std::map<std::pair<std::size_t, std::size_t>, Fit> cache;
  auto key = std::make_pair(n_entities, n_endog);
  auto it = cache.find(key);
  if (it == cache.end()) {
    Fit f;
    f.data = generate_panel(bench_config(n_entities, n_endog));
    f.ctx = std::make_unique<EstimationContext>();
    estimate(f.data, cf_options(), *f.ctx);
    it = cache.emplace(key, std::move(f)).first;
  }
  return *it->second.ctx;
}

void BM_CloglogWeights(benchmark::State& state) {
  const EstimationContext& ctx = fitted(
      static_cast<std::size_t>(state.range(0)));
  const Matrix& x = ctx.model.xi;
  for (auto _ : state) {
    CloglogWeights w = cloglog_weights(x, ctx.model.gamma, ctx.frame.y);
    benchmark::DoNotOptimize(w.loglik);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(x.rows()));
}
BENCHMARK(BM_CloglogWeights)->Arg(2000)->Arg(8000);

void BM_BuildFrame(benchmark::State& state) {
  PanelDataset data =
      generate_panel(bench_config(static_cast<std::size_t>(state.range(0))));
  for (auto _ : state) {
    EstimationFrame frame = build_frame(data);
    benchmark::DoNotOptimize(frame.rows());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(data.n_rows()));
}
BENCHMARK(BM_BuildFrame)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

void BM_FirstStage(benchmark::State& state) {
  const EstimationContext& ctx = fitted(
      static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    FirstStageFit fit = fit_first_stage(ctx.frame);
    benchmark::DoNotOptimize(fit.residuals);
  }
}
BENCHMARK(BM_FirstStage)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

void BM_SecondStageFit(benchmark::State& state) {
  const EstimationContext& ctx = fitted(
      static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    SecondStageFit fit = fit_cloglog(ctx.design, ctx.frame.y);
    benchmark::DoNotOptimize(fit.loglik);
  }
}
BENCHMARK(BM_SecondStageFit)
    ->Arg(2000)
    ->Arg(8000)
    ->Unit(benchmark::kMillisecond);

void BM_BuildG(benchmark::State& state) {
  const EstimationContext& ctx =
      fitted(2000, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    GAssembly g = build_G(ctx.model);
    benchmark::DoNotOptimize(g.g22);
  }
}
BENCHMARK(BM_BuildG)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_BuildGKronecker(benchmark::State& state) {
  const EstimationContext& ctx = fitted(2000, 2);
  for (auto _ : state) {
    GAssembly g = build_G(ctx.model, GForm::sample_jacobian, true);
    benchmark::DoNotOptimize(g.g22);
  }
}
BENCHMARK(BM_BuildGKronecker)->Unit(benchmark::kMillisecond);

void BM_StackedScores(benchmark::State& state) {
  const EstimationContext& ctx = fitted(
      static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    Matrix s = stacked_scores(ctx.model);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_StackedScores)
    ->Arg(2000)
    ->Arg(8000)
    ->Unit(benchmark::kMillisecond);

void BM_Sandwich(benchmark::State& state) {
  const EstimationContext& ctx = fitted(
      static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    Matrix v = sandwich(ctx.g, ctx.omega, VceMode::standard);
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(BM_Sandwich)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

void BM_Estimate(benchmark::State& state) {
  PanelDataset data =
      generate_panel(bench_config(static_cast<std::size_t>(state.range(0))));
  EstimateOptions opts = cf_options();
  for (auto _ : state) {
    EstimateReport rep = estimate(data, opts);
    benchmark::DoNotOptimize(rep.v);
  }
}
BENCHMARK(BM_Estimate)->Arg(500)->Arg(2000)->Arg(8000)->Unit(
    benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
