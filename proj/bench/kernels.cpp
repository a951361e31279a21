// Serial reference kernels against their OpenMP counterparts.
#include <random>

#include <benchmark/benchmark.h>

#include "mfbd/ensemble.hpp"
#include "mfbd/master.hpp"

using namespace mfbd;

namespace {

ModelSpec three_type() {
  ModelSpec s;
  s.d = 3;
  s.lambda = Vector{{1.4, 1.2, 1.1}};
  s.mu = Vector::Ones(3);
  s.gamma = Matrix{{-0.2, 0.1, 0.1}, {0.1, -0.2, 0.1}, {0.1, 0.1, -0.2}};
  s.w = Matrix::Constant(3, 3, 0.01);
  s.r0 = Vector::Constant(3, 2.0);
  return s;
}

struct GeneratorFixture {
  TruncatedLattice lattice;
  GeneratorPattern pattern;
  RateTable rates;
  Vector v, out;

  explicit GeneratorFixture(int kappa)
      : lattice(3, kappa), pattern(build_generator(three_type(), lattice)) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> unit;
    v = Vector::NullaryExpr(static_cast<Eigen::Index>(lattice.size()), [&] { return unit(rng); });
    v /= v.sum();
    out.resize(v.size());
    rates = rate_table(three_type(), first_moment(pattern, v.data()));
  }
};

void generator_serial(benchmark::State& state) {
  GeneratorFixture f(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    apply_generator_serial(f.pattern, f.rates, f.v.data(), f.out.data());
    benchmark::DoNotOptimize(f.out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.lattice.size()));
}

void generator_parallel(benchmark::State& state) {
  GeneratorFixture f(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    apply_generator_parallel(f.pattern, f.rates, f.v.data(), f.out.data());
    benchmark::DoNotOptimize(f.out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.lattice.size()));
}

const std::vector<double> kCheckpoints{1.0, 2.0, 3.0};

void batch_serial(benchmark::State& state) {
  const ModelSpec s = three_type();
  for (auto _ : state) {
    auto traces = simulate_batch_serial(s, 100, 3.0, InitialState::shared({2, 2, 2}), 1,
                                        static_cast<int>(state.range(0)), kCheckpoints);
    benchmark::DoNotOptimize(traces.data());
  }
}

void batch_parallel(benchmark::State& state) {
  const ModelSpec s = three_type();
  for (auto _ : state) {
    auto traces =
        simulate_batch(s, 100, 3.0, InitialState::shared({2, 2, 2}), 1, static_cast<int>(state.range(0)), kCheckpoints);
    benchmark::DoNotOptimize(traces.data());
  }
}

}  // namespace

BENCHMARK(generator_serial)->Arg(20)->Arg(40)->Arg(80);
BENCHMARK(generator_parallel)->Arg(20)->Arg(40)->Arg(80);
BENCHMARK(batch_serial)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(batch_parallel)->Arg(16)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
