#include <benchmark/benchmark.h>

#include <random>

#include "odenet/basis.hpp"
#include "odenet/integrate.hpp"
#include "odenet/model.hpp"
#include "odenet/odeblock.hpp"

using namespace odenet;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.3);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

BlockConfig block(std::size_t width, SchemeId scheme, std::size_t k) {
  BlockConfig c;
  c.width = width;
  c.scheme = scheme;
  c.n_steps = k;
  c.basis_g = {BasisFamily::PiecewiseConstant, k, 1.0};
  c.basis_s = c.basis_g;
  return c;
}

// Args: source K, target K, coefficient width P.
void BM_Project(benchmark::State& state) {
  const BasisSpec src{BasisFamily::PiecewiseConstant, static_cast<std::size_t>(state.range(0)), 1.0};
  const BasisSpec dst{BasisFamily::PiecewiseLinear, static_cast<std::size_t>(state.range(1)), 1.0};
  const WeightFunction f(src, random_tensor({src.k, static_cast<std::size_t>(state.range(2))}, 1));
  for (auto _ : state) benchmark::DoNotOptimize(project(f, dst));
}
BENCHMARK(BM_Project)->Args({8, 4, 1024})->Args({64, 16, 1024})->Args({64, 16, 16384});

void BM_Interpolate(benchmark::State& state) {
  const BasisSpec src{BasisFamily::PiecewiseLinear, static_cast<std::size_t>(state.range(0)), 1.0};
  const BasisSpec dst{BasisFamily::PiecewiseLinear, 2 * src.k - 1, 1.0};
  const WeightFunction f(src, random_tensor({src.k, 4096}, 2));
  for (auto _ : state) benchmark::DoNotOptimize(interpolate(f, dst));
}
BENCHMARK(BM_Interpolate)->Arg(4)->Arg(32);

void BM_RkStepScalar(benchmark::State& state) {
  const auto tab = make_tableau(static_cast<SchemeId>(state.range(0)));
  const Rhs<double> f = [](double, const double& y) { return y; };
  double y = 1.0;
  for (auto _ : state) {
    y = rk_step(f, tab, 0.0, 1e-9, y).x_next;
    benchmark::DoNotOptimize(y);
  }
}
BENCHMARK(BM_RkStepScalar)
    ->Arg(static_cast<int>(SchemeId::Euler))
    ->Arg(static_cast<int>(SchemeId::Midpoint))
    ->Arg(static_cast<int>(SchemeId::RK4));

// Args: scheme, width, batch.
void BM_BlockForwardInfer(benchmark::State& state) {
  const StatefulOdeBlock b(block(state.range(1), static_cast<SchemeId>(state.range(0)), 4));
  std::vector<Tensor> g, s;
  std::uint64_t seed = 10;
  for (const auto& slot : b.coefficient_layout_g()) g.push_back(random_tensor(slot.shape, ++seed));
  for (const auto& slot : b.coefficient_layout_s()) s.push_back(Tensor(slot.shape, 1.0));
  const Tensor x0 = random_tensor({static_cast<std::size_t>(state.range(2)), b.config().width}, 3);
  for (auto _ : state) {
    ad::Tape tape(false);
    std::vector<ad::Var> vars;
    for (const Tensor& t : g) vars.push_back(tape.constant(t));
    benchmark::DoNotOptimize(b.forward_infer(tape.constant(x0), vars, s).x_out.value().data().data());
  }
}
BENCHMARK(BM_BlockForwardInfer)
    ->Args({static_cast<int>(SchemeId::Euler), 16, 64})
    ->Args({static_cast<int>(SchemeId::RK4), 16, 64})
    ->Args({static_cast<int>(SchemeId::RK4), 64, 256});

void BM_BlockTrainStep(benchmark::State& state) {
  const StatefulOdeBlock b(block(state.range(1), static_cast<SchemeId>(state.range(0)), 4));
  std::vector<Tensor> g, s;
  std::uint64_t seed = 20;
  for (const auto& slot : b.coefficient_layout_g()) g.push_back(random_tensor(slot.shape, ++seed));
  for (const auto& slot : b.coefficient_layout_s()) s.push_back(Tensor(slot.shape, 1.0));
  const Tensor x0 = random_tensor({static_cast<std::size_t>(state.range(2)), b.config().width}, 4);
  for (auto _ : state) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& t : g) vars.push_back(tape.variable(t));
    const auto out = b.forward_train(tape.constant(x0), vars, s);
    tape.backward(ad::sum(out.x_out));
    benchmark::DoNotOptimize(tape.grad(vars[0]).data().data());
  }
}
BENCHMARK(BM_BlockTrainStep)
    ->Args({static_cast<int>(SchemeId::Euler), 16, 64})
    ->Args({static_cast<int>(SchemeId::RK4), 16, 64})
    ->Args({static_cast<int>(SchemeId::RK4), 64, 256});

void BM_PredictLogits(benchmark::State& state) {
  ModelConfig cfg;
  cfg.input_dim = 196;
  cfg.num_classes = 10;
  cfg.blocks = {block(64, SchemeId::RK4, static_cast<std::size_t>(state.range(0)))};
  const Model m = init_params(cfg, 0);
  const Tensor x = random_tensor({256, 196}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(predict_logits(m, x));
}
BENCHMARK(BM_PredictLogits)->Arg(4)->Arg(8);

}  // namespace
BENCHMARK_MAIN();
