#include <benchmark/benchmark.h>

#include "mtplab/marginal.hpp"
#include "mtplab/model.hpp"

namespace {

mtplab::ModelConfig toy_config() {
  mtplab::ModelConfig cfg;
  cfg.layers = 4;
  cfg.hidden = 64;
  cfg.n_heads = 4;
  cfg.vocab = 64;
  cfg.max_seq = 96;
  return cfg;
}

std::vector<int32_t> toy_context(int64_t len, int32_t vocab) {
  mtplab::Rng rng(7);
  std::vector<int32_t> ids;
  ids.push_back(1);
  for (int64_t i = 1; i < len; ++i) {
    ids.push_back(static_cast<int32_t>(rng.uniform_int(4, vocab - 1)));
  }
  return ids;
}

void BM_ForwardPass(benchmark::State& state) {
  const mtplab::Checkpoint ckpt = mtplab::init_checkpoint(toy_config(), 1);
  const std::vector<int32_t> ids = toy_context(state.range(0), 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mtplab::next_token_dist(ckpt, ids));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardPass)->Arg(32)->Arg(64);

void BM_SecondTokenTruncated(benchmark::State& state) {
  const mtplab::Checkpoint ckpt = mtplab::init_checkpoint(toy_config(), 1);
  mtplab::CheckpointPredictor model(ckpt);
  const std::vector<int32_t> ids = toy_context(48, 64);
  mtplab::MarginalSpec spec;
  spec.top_p = static_cast<double>(state.range(0)) / 100.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mtplab::second_token_truncated(model, ids, spec));
  }
}
BENCHMARK(BM_SecondTokenTruncated)->Arg(90)->Arg(99);

}  // namespace

BENCHMARK_MAIN();
