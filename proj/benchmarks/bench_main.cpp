#include <benchmark/benchmark.h>

#include "s3rp/advect.hpp"
#include "s3rp/autodiff.hpp"
#include "s3rp/config.hpp"
#include "s3rp/data.hpp"
#include "s3rp/model.hpp"
#include "s3rp/rng.hpp"
#include "s3rp/train.hpp"

using namespace s3rp;

namespace {

std::vector<double> uniform(std::size_t n, std::uint64_t seed) {
  NoiseSource rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

// args: channels, spatial size
void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  const ad::Shape xs{4, c, n, n}, ws{c, c, 3, 3}, bs{1, c, 1, 1};
  ad::Var x = ad::Var::parameter(xs, uniform(xs.numel(), 1));
  ad::Var w = ad::Var::parameter(ws, uniform(ws.numel(), 2));
  ad::Var b = ad::Var::parameter(bs, uniform(bs.numel(), 3));
  for (auto _ : state) {
    ad::backward(ad::mean_square(ad::conv2d(x, w, b)));
    benchmark::DoNotOptimize(w.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * 4 * c * c * 9 * n * n);
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({16, 8})->Args({8, 32})->Args({8, 64});

void BM_StepConcentration(benchmark::State& state) {
  GridSpec g;
  g.n_lr = static_cast<int>(state.range(0)) / 8;
  const int n = g.n_hr();
  ScalarField c(n), q(n);
  c.values = uniform(c.values.size(), 4);
  for (double& v : c.values) v = 0.5 * (v + 1.0);
  VectorField u(n);
  u.values = uniform(u.values.size(), 5);
  const double ds = g.spacing_hr(), dt = 0.2 * ds;
  for (auto _ : state) {
    c = advect::step_concentration(c, u, {1e-4, 1e-4}, q, dt, ds);
    benchmark::DoNotOptimize(c.values.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_StepConcentration)->Arg(64)->Arg(128);

void BM_Downsample(benchmark::State& state) {
  FieldSequence hr(Resolution::hr, 10, 128);
  hr.data() = uniform(hr.data().size(), 6);
  for (auto _ : state) benchmark::DoNotOptimize(data::downsample(hr, 8).data().data());
}
BENCHMARK(BM_Downsample);

void BM_UpsampleBicubic(benchmark::State& state) {
  FieldSequence lr(Resolution::lr, 10, 16);
  lr.data() = uniform(lr.data().size(), 7);
  for (auto _ : state) benchmark::DoNotOptimize(data::upsample_bicubic(lr, 8).data().data());
}
BENCHMARK(BM_UpsampleBicubic);

// One optimisation step on 8^2 LR / 64^2 HR.
void BM_TrainStep(benchmark::State& state) {
  config::ToolkitConfig c;
  c.grid.n_lr = 8;
  c.wind.n_modes = 2;
  c.dataset.sims = 1;
  c.dataset.holdout_sims = 0;
  c.dataset.sequences_per_sim = 2;
  c.dataset.seq_len = 10;
  c.dataset.spinup = 10;
  c.sim.n_steps = 19;
  c.model.latent_channels = 4;
  c.model.hidden_channels = static_cast<int>(state.range(0));
  c.model.ladder_channels = 8;
  c.train.batch = 4;
  c.train.chunk = 10;
  c.validate();
  const auto ds = config::generate_dataset(c);
  const auto view = ds.training_view();
  model::S3rpModel m(c.model, 0);
  m.set_normalization(view.norm);
  train::Trainer trainer(m, c.train, c.loss, view);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step().total);
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
