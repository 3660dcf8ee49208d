#include <benchmark/benchmark.h>

#include "ght/grouping.hpp"
#include "ght/model.hpp"
#include "ght/ops.hpp"

using namespace ght;

static void BM_Matmul(benchmark::State& state) {
  int64_t n = state.range(0);
  Rng rng(1);
  Tensor<float> a = Tensor<float>::randn({n, n}, rng);
  Tensor<float> b = Tensor<float>::randn({n, n}, rng);
  for (auto _ : state) {
    Tensor<float> c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_MhaForward(benchmark::State& state) {
  Rng rng(2);
  MultiHeadAttention<float> attn(64, 4, 16, AttnKind::EncSelf, "bench", rng);
  Tensor<float> x = Tensor<float>::randn({8, 16, 64}, rng);
  for (auto _ : state) {
    Tensor<float> y = attn.forward(x, x, x, nullptr, nullptr);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_MhaForward);

static void BM_TransformerStep(benchmark::State& state) {
  Rng rng(3);
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.d_model = 64;
  cfg.d_ff = 256;
  cfg.vocab_size = 16;
  auto model = TransformerModel<float>::build(cfg, rng);
  std::vector<int32_t> src(8 * 10, 3), tgt(8 * 10, 4);
  IntTensor src_t({8, 10}, src), tgt_t({8, 10}, tgt);
  for (auto _ : state) {
    auto fr = model.forward(src_t, tgt_t, {});
    Tensor<float> loss = cross_entropy_label_smoothed(fr.logits, tgt_t, 0.1);
    loss.backward();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TransformerStep);

static void BM_HudsRefresh(benchmark::State& state) {
  Rng rng(4);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 8; ++i) {
    std::vector<double> p(16);
    for (auto& v : p) v = rng.normal();
    pts.push_back(p);
  }
  for (auto _ : state) {
    auto r = group::discover_hidden_units(pts, 2, rng, 4, 100);
    benchmark::DoNotOptimize(r.cost);
  }
}
BENCHMARK(BM_HudsRefresh);

BENCHMARK_MAIN();
