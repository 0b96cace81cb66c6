#include <benchmark/benchmark.h>

#include "pmpguard/corpus.hpp"
#include "pmpguard/kernels.hpp"
#include "pmpguard/numeric.hpp"
#include "pmpguard/pnaa.hpp"
#include "pmpguard/trainer.hpp"

using namespace pmpguard;

namespace {

Matrix random_matrix(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (double& x : m.data) x = rng.normal();
  return m;
}

void bm_softmax_rows(benchmark::State& state) {
  Rng rng(7);
  Matrix m = random_matrix(static_cast<int>(state.range(0)), 64, rng);
  for (auto _ : state) {
    Matrix out = softmax_rows(m);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(bm_softmax_rows)->Arg(16)->Arg(128);

void bm_pair_similarity(benchmark::State& state) {
  Rng rng(11);
  Matrix u = random_matrix(5, 16, rng);
  Matrix v = random_matrix(7, 16, rng);
  for (auto _ : state) {
    double s = pnaa::pair_similarity(u, v, 0.1);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(bm_pair_similarity);

void bm_score_pair(benchmark::State& state) {
  auto corpus = generate_corpus(8, 4, 32, 24, 5, 7, 0.1, 3);
  Rng rng(3);
  train::TrainState st;
  st.params = cga::CgaParams::init(16, 32, 24, rng);
  st.boundary.t = 0.1;
  auto fa = train::record_features(corpus.records[0], st);
  auto fb = train::record_features(corpus.records[1], st);
  for (auto _ : state) {
    double s = train::score_records(fa, fb, st);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(bm_score_pair);

void bm_train_epoch(benchmark::State& state) {
  auto corpus = generate_corpus(32, 8, 32, 24, 5, 7, 0.1, 5);
  train::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  for (auto _ : state) {
    auto st = train::train(corpus, cfg);
    benchmark::DoNotOptimize(st.log_tau);
  }
}
BENCHMARK(bm_train_epoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
