#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "fd_check.hpp"
#include "ght/checkpoint.hpp"
#include "ght/metrics.hpp"
#include "ght/model.hpp"

using namespace ght;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.arch = Arch::EncoderDecoder;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.d_model = 64;
  cfg.d_ff = 256;
  cfg.vocab_size = 16;
  cfg.dropout = 0.0;
  return cfg;
}

IntTensor random_ids(Shape shape, int64_t vocab, Rng& rng) {
  std::vector<int32_t> ids(static_cast<size_t>(numel_of(shape)));
  for (auto& v : ids) v = static_cast<int32_t>(rng.range(3, vocab - 1));
  return IntTensor(std::move(shape), std::move(ids));
}

void set_identity(Tensor<float>& w) {
  auto& d = w.data();
  std::fill(d.begin(), d.end(), 0.0f);
  int64_t n = w.shape()[0];
  for (int64_t i = 0; i < std::min(n, w.shape()[1]); ++i)
    d[static_cast<size_t>(i * w.shape()[1] + i)] = 1.0f;
}

}  // namespace

TEST_CASE("single-head attention with identity projections returns the value row") {
  Rng rng(1);
  MultiHeadAttention<float> attn(4, 1, 4, AttnKind::EncSelf, "t", rng);
  set_identity(attn.w_q());
  set_identity(attn.w_k());
  set_identity(attn.w_v());
  set_identity(attn.w_out());
  Tensor<float> x = Tensor<float>::from_data({1, 1, 4}, {0.3f, -1.2f, 0.5f, 2.0f});
  LayerFeatureMaps<float> fm;
  Tensor<float> y = attn.forward(x, x, x, nullptr, &fm);
  CHECK(fm.attn_fm.data()[0] == doctest::Approx(1.0));
  for (int i = 0; i < 4; ++i) CHECK(y.data()[static_cast<size_t>(i)] == doctest::Approx(x.data()[static_cast<size_t>(i)]));
}

TEST_CASE("two identical keys split the attention evenly") {
  Rng rng(2);
  MultiHeadAttention<float> attn(4, 1, 4, AttnKind::EncSelf, "t", rng);
  Tensor<float> q = Tensor<float>::from_data({1, 1, 4}, {1.0f, 0.0f, 0.0f, 0.0f});
  Tensor<float> kv = Tensor<float>::from_data({1, 2, 4},
                                              {0.5f, 0.25f, -1.0f, 0.0f, 0.5f, 0.25f, -1.0f, 0.0f});
  LayerFeatureMaps<float> fm;
  attn.forward(q, kv, kv, nullptr, &fm);
  CHECK(fm.attn_fm.data()[0] == doctest::Approx(0.5));
  CHECK(fm.attn_fm.data()[1] == doctest::Approx(0.5));
}

TEST_CASE("head mask contract") {
  Rng rng(3);
  MultiHeadAttention<float> attn(8, 2, 4, AttnKind::EncSelf, "t", rng);
  Tensor<float> x = Tensor<float>::randn({2, 3, 8}, rng);

  SUBCASE("mask length must match the head count") {
    CHECK_THROWS_AS(attn.set_head_mask({1, 0, 1}), ShapeError);
  }
  SUBCASE("all-ones mask is bitwise identical to no mask") {
    Tensor<float> y0 = attn.forward(x, x, x, nullptr, nullptr);
    attn.set_head_mask({1, 1});
    Tensor<float> y1 = attn.forward(x, x, x, nullptr, nullptr);
    CHECK(std::memcmp(y0.data().data(), y1.data().data(), y0.data().size() * sizeof(float)) == 0);
  }
  SUBCASE("masked head equals manual recomputation with zeroed head output") {
    LayerFeatureMaps<float> fm;
    attn.forward(x, x, x, nullptr, &fm);  // unmasked capture
    attn.set_head_mask({0, 1});
    Tensor<float> masked = attn.forward(x, x, x, nullptr, nullptr);
    // manual: zero head 0 rows of o, concat, project
    Tensor<float> o = fm.out_fm;  // [2, 2, 3, 4]
    std::vector<float> zeroed = o.data();
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t d = 0; d < 4; ++d) zeroed[static_cast<size_t>(((b * 2 + 0) * 3 + t) * 4 + d)] = 0.0f;
    Tensor<float> oz = Tensor<float>::from_data({2, 2, 3, 4}, std::move(zeroed));
    Tensor<float> merged = reshape(permute(oz, {0, 2, 1, 3}), {2, 3, 8});
    Tensor<float> manual = matmul(merged, attn.w_out());
    for (size_t i = 0; i < manual.data().size(); ++i)
      CHECK(masked.data()[i] == doctest::Approx(manual.data()[i]).epsilon(1e-6));
    // and it differs from the unmasked output
    Tensor<float> unmasked = matmul(reshape(permute(o, {0, 2, 1, 3}), {2, 3, 8}), attn.w_out());
    double diff = 0.0;
    for (size_t i = 0; i < unmasked.data().size(); ++i)
      diff = std::max(diff, std::abs(static_cast<double>(unmasked.data()[i]) - masked.data()[i]));
    CHECK(diff > 1e-4);
  }
}

TEST_CASE("transformer with a zeroed generator yields a uniform distribution") {
  Rng rng(4);
  ModelConfig cfg = tiny_config();
  auto model = TransformerModel<float>::build(cfg, rng);
  auto& emb = model.tgt_embed().data();
  std::fill(emb.begin(), emb.end(), 0.0f);  // tied: this is the output projection
  IntTensor src = random_ids({2, 5}, cfg.vocab_size, rng);
  IntTensor tgt = random_ids({2, 4}, cfg.vocab_size, rng);
  auto fr = model.forward(src, tgt, {});
  for (float v : fr.logits.data()) CHECK(v == 0.0f);
  auto loss = cross_entropy_label_smoothed(fr.logits, tgt, 0.0);
  CHECK(loss.item() == doctest::Approx(std::log(static_cast<double>(cfg.vocab_size))).epsilon(1e-6));
}

TEST_CASE("decoder causality: later target tokens do not affect earlier logits") {
  Rng rng(5);
  ModelConfig cfg = tiny_config();
  auto model = TransformerModel<float>::build(cfg, rng);
  IntTensor src = random_ids({1, 6}, cfg.vocab_size, rng);
  IntTensor tgt = random_ids({1, 5}, cfg.vocab_size, rng);
  auto fr1 = model.forward(src, tgt, {});
  IntTensor tgt2 = tgt;
  tgt2.data[3] = tgt2.data[3] == 3 ? 4 : 3;  // change position 3
  auto fr2 = model.forward(src, tgt2, {});
  int64_t v = cfg.vocab_size;
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t c = 0; c < v; ++c)
      CHECK(fr1.logits.data()[static_cast<size_t>(t * v + c)] ==
            fr2.logits.data()[static_cast<size_t>(t * v + c)]);
  // position 3 and beyond do change
  double diff = 0.0;
  for (int64_t t = 3; t < 5; ++t)
    for (int64_t c = 0; c < v; ++c)
      diff = std::max(diff, std::abs(static_cast<double>(fr1.logits.data()[static_cast<size_t>(t * v + c)]) -
                                     fr2.logits.data()[static_cast<size_t>(t * v + c)]));
  CHECK(diff > 1e-6);
}

TEST_CASE("feature maps: one per attention layer, probability rows, causal zeros") {
  Rng rng(6);
  ModelConfig cfg = tiny_config();
  auto model = TransformerModel<float>::build(cfg, rng);
  IntTensor src = random_ids({2, 5}, cfg.vocab_size, rng);
  IntTensor tgt = random_ids({2, 4}, cfg.vocab_size, rng);
  ForwardOptions opt;
  opt.capture_fms = true;
  auto fr = model.forward(src, tgt, opt);
  CHECK(static_cast<int>(fr.fms.size()) == cfg.attention_layer_count());
  CHECK(fr.fms.size() == 6);
  CHECK(fr.logits.shape() == Shape{2, 4, 16});

  for (const auto& fm : fr.fms) {
    CHECK(fm.value_fm.shape()[1] == cfg.heads);
    const auto& a = fm.attn_fm;
    int64_t tk = a.shape()[3];
    int64_t rows = a.numel() / tk;
    for (int64_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int64_t k = 0; k < tk; ++k) s += a.data()[static_cast<size_t>(r * tk + k)];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
    if (fm.kind == AttnKind::DecSelf) {
      int64_t tq = a.shape()[2];
      for (int64_t b = 0; b < a.shape()[0] * a.shape()[1]; ++b)
        for (int64_t q = 0; q < tq; ++q)
          for (int64_t k = q + 1; k < tk; ++k)
            CHECK(a.data()[static_cast<size_t>((b * tq + q) * tk + k)] == 0.0f);
    }
  }
}

TEST_CASE("forward is deterministic under a seeded dropout stream") {
  Rng rng(7);
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.2;
  auto model = TransformerModel<float>::build(cfg, rng);
  IntTensor src = random_ids({2, 5}, cfg.vocab_size, rng);
  IntTensor tgt = random_ids({2, 4}, cfg.vocab_size, rng);
  auto run = [&]() {
    Rng drop(1234);
    ForwardOptions opt;
    opt.training = true;
    opt.dropout_rng = &drop;
    return model.forward(src, tgt, opt).logits;
  };
  auto a = run();
  auto b = run();
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0);
}

TEST_CASE("apply_head_mask installs and validates") {
  Rng rng(8);
  ModelConfig cfg = tiny_config();
  auto model = TransformerModel<float>::build(cfg, rng);
  HeadMask bad;
  bad.layers.assign(3, std::vector<uint8_t>(4, 1));
  CHECK_THROWS_AS(model.install_head_mask(bad), ShapeError);

  HeadMask ones = HeadMask::all_ones(cfg.attention_layer_count(), cfg.heads);
  IntTensor src = random_ids({2, 5}, cfg.vocab_size, rng);
  IntTensor tgt = random_ids({2, 4}, cfg.vocab_size, rng);
  auto before = model.forward(src, tgt, {}).logits;
  model.install_head_mask(ones);
  auto after = model.forward(src, tgt, {}).logits;
  CHECK(std::memcmp(before.data().data(), after.data().data(),
                    before.data().size() * sizeof(float)) == 0);
}

TEST_CASE("structural prune agrees with the masked forward") {
  Rng rng(9);
  ModelConfig cfg = tiny_config();
  auto model = TransformerModel<float>::build(cfg, rng);
  HeadMask mask;
  Rng mask_rng(17);
  for (int l = 0; l < cfg.attention_layer_count(); ++l) {
    std::vector<uint8_t> m(4, 0);
    // keep two random heads per layer
    int a = static_cast<int>(mask_rng.below(4));
    int b = static_cast<int>(mask_rng.below(4));
    while (b == a) b = static_cast<int>(mask_rng.below(4));
    m[static_cast<size_t>(a)] = 1;
    m[static_cast<size_t>(b)] = 1;
    mask.layers.push_back(m);
  }
  model.install_head_mask(mask);
  auto pruned = model.structural_prune(mask);

  int64_t before = metrics::count_params(model);
  int64_t after = metrics::count_params(pruned);
  CHECK(after < before);
  CHECK(after == metrics::closed_form_params(cfg, 2));

  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    IntTensor src = random_ids({2, 6}, cfg.vocab_size, rng);
    IntTensor tgt = random_ids({2, 5}, cfg.vocab_size, rng);
    auto lm = model.forward(src, tgt, {}).logits;
    auto lp = pruned.forward(src, tgt, {}).logits;
    for (size_t i = 0; i < lm.data().size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(lm.data()[i]) - lp.data()[i]));
  }
  CHECK(worst < 1e-5);

  SUBCASE("pretend-prune with an all-ones mask keeps the parameter count") {
    HeadMask ones = HeadMask::all_ones(cfg.attention_layer_count(), cfg.heads);
    auto same = model.structural_prune(ones);
    CHECK(metrics::count_params(same) == before);
  }
  SUBCASE("uneven survivor counts are rejected") {
    HeadMask uneven = mask;
    uneven.layers[0] = {1, 1, 1, 0};
    CHECK_THROWS_AS(model.structural_prune(uneven), ContractError);
  }
  SUBCASE("pruning must keep at least one head") {
    HeadMask dead = mask;
    dead.layers[0] = {0, 0, 0, 0};
    CHECK_THROWS_AS(model.structural_prune(dead), ContractError);
  }
}

TEST_CASE("pruning does not alias the source model's parameters") {
  Rng rng(10);
  ModelConfig cfg = tiny_config();
  auto model = TransformerModel<float>::build(cfg, rng);
  HeadMask ones = HeadMask::all_ones(cfg.attention_layer_count(), cfg.heads);
  auto copy = model.structural_prune(ones);
  float keep = model.tgt_embed().data()[0];
  copy.tgt_embed().data()[0] = keep + 42.0f;
  CHECK(model.tgt_embed().data()[0] == keep);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(11);
  ModelConfig cfg = tiny_config();
  auto model = TransformerModel<float>::build(cfg, rng);
  HeadMask mask = HeadMask::all_ones(cfg.attention_layer_count(), cfg.heads);
  mask.layers[1] = {1, 0, 1, 0};
  mask.layers[3] = {0, 1, 0, 1};
  model.install_head_mask(mask);

  CheckpointData ck = snapshot_model(model, "model.d_model = 64\n");
  std::string path = "test_roundtrip.ckpt";
  write_checkpoint_file(path, ck);
  CheckpointData back = read_checkpoint_file(path);
  CHECK(back.config_text == ck.config_text);
  CHECK(back.params.size() == ck.params.size());

  Rng rng2(999);
  auto model2 = TransformerModel<float>::build(cfg, rng2);
  restore_model(model2, back);
  CHECK(param_hash(model) == param_hash(model2));
  CHECK(model2.mask_installed());
  CHECK(model2.current_mask().layers[1] == std::vector<uint8_t>{1, 0, 1, 0});
  std::remove(path.c_str());
}

TEST_CASE("pruned checkpoints reload with narrowed attention layers") {
  Rng rng(12);
  ModelConfig cfg = tiny_config();
  auto model = TransformerModel<float>::build(cfg, rng);
  HeadMask mask;
  for (int l = 0; l < cfg.attention_layer_count(); ++l)
    mask.layers.push_back({1, 0, 0, 1});
  auto pruned = model.structural_prune(mask);
  CheckpointData ck = snapshot_model(pruned, "");
  std::string path = "test_pruned.ckpt";
  write_checkpoint_file(path, ck);

  Rng rng2(13);
  auto fresh = TransformerModel<float>::build(cfg, rng2);
  restore_model(fresh, read_checkpoint_file(path));
  CHECK(fresh.attention_layers()[0]->n_heads() == 2);
  IntTensor src = random_ids({1, 4}, cfg.vocab_size, rng2);
  IntTensor tgt = random_ids({1, 3}, cfg.vocab_size, rng2);
  auto a = pruned.forward(src, tgt, {}).logits;
  auto b = fresh.forward(src, tgt, {}).logits;
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0);
  std::remove(path.c_str());
}

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 65;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.layers = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("gradients flow end to end through the attention stack (64-bit)") {
  Rng rng(14);
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.vocab_size = 11;
  auto model = TransformerModel<double>::build(cfg, rng);
  IntTensor src = random_ids({2, 3}, cfg.vocab_size, rng);
  IntTensor tgt = random_ids({2, 3}, cfg.vocab_size, rng);

  std::vector<Tensor<double>> leaves = model.parameters();
  Rng fd_rng(15);
  double err = fd::max_rel_err<double>(
      [&]() {
        auto fr = model.forward(src, tgt, {});
        return cross_entropy_label_smoothed(fr.logits, tgt, 0.1);
      },
      leaves, 1e-5, 4, fd_rng);
  CHECK(err < 1e-7);
}

TEST_CASE("decoder-only forward") {
  Rng rng(16);
  ModelConfig cfg;
  cfg.arch = Arch::DecoderOnly;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.d_model = 32;
  cfg.d_ff = 64;
  cfg.vocab_size = 20;
  auto model = TransformerModel<double>::build(cfg, rng);
  IntTensor tgt = random_ids({2, 6}, cfg.vocab_size, rng);
  ForwardOptions opt;
  opt.capture_fms = true;
  auto fr = model.forward(IntTensor{}, tgt, opt);
  CHECK(fr.logits.shape() == Shape{2, 6, 20});
  CHECK(fr.fms.size() == 2);
  CHECK(fr.fms[0].kind == AttnKind::DecSelf);
}
