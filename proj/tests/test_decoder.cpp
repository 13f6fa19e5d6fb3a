#include <numeric>

#include "doctest.h"
#include "peftseg/decoder.hpp"
#include "peftseg/ops.hpp"
#include "support/fixtures.hpp"

using namespace peftseg;
using peftseg::testing::random_tensor;

namespace {

// Reorders the leading axis of a parameter: new row i = old row perm[i].
void permute_rows(Tensor t, const std::vector<int>& perm) {
  const auto rows = t.dim(0);
  const auto len = t.numel() / rows;
  const std::vector<double> old(t.data().begin(), t.data().end());
  for (std::int64_t i = 0; i < rows; ++i)
    std::copy_n(old.begin() + perm[std::size_t(i)] * len, len, t.data().begin() + i * len);
}

}  // namespace

TEST_CASE("decoder output shape and resolution") {
  SegmentationModel m(peftseg::testing::tiny_model_config(PeftKind::decoder_only), 1, 2);
  NoGradGuard g;
  const auto y = m.forward(random_tensor({2, 8, 8, 3}, 1));
  CHECK(y.shape() == Shape{2, 3, 16, 16});
}

TEST_CASE("permuting class tokens permutes the output channels") {
  SegmentationModel m(peftseg::testing::tiny_model_config(PeftKind::decoder_only), 1, 2);
  const auto x = random_tensor({1, 8, 8, 3}, 3);
  NoGradGuard g;
  const auto before = m.forward(x);
  const std::vector<int> perm{2, 0, 1};
  for (auto& p : m.store().parameters())
    if (p.path == "decoder.class_tokens" || p.path.starts_with("decoder.hyper.")) permute_rows(p.tensor, perm);
  const auto after = m.forward(x);
  const auto plane = before.numel() / 3;
  double diff = 0.0;
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < plane; ++i)
      diff = std::max(diff, std::abs(after.data()[std::size_t(c * plane + i)] - before.data()[std::size_t(perm[c] * plane + i)]));
  CHECK(diff < 1e-12);
}

TEST_CASE("dense embedding toggles trainability and starts as a no-op") {
  SegmentationModel off(peftseg::testing::tiny_model_config(PeftKind::lora, false), 1, 2);
  SegmentationModel on(peftseg::testing::tiny_model_config(PeftKind::lora, true), 1, 2);
  CHECK_FALSE(off.partition().is_trainable("decoder.no_mask_embed"));
  CHECK(on.partition().is_trainable("decoder.no_mask_embed"));
  CHECK(count_trainable(on.partition(), on.store()) - count_trainable(off.partition(), off.store()) == 16);
  NoGradGuard g;
  const auto x = random_tensor({1, 8, 8, 3}, 4);
  const auto a = off.forward(x), b = on.forward(x);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  off.set_dense_embedding(true);
  CHECK(off.partition().is_trainable("decoder.no_mask_embed"));
}

TEST_CASE("enumerated decoder count matches an allocated decoder") {
  for (auto cfg : {DecoderConfig{}, peftseg::testing::tiny_model_config(PeftKind::lora).decoder}) {
    ParameterStore store;
    PromptlessDecoder dec(store, cfg);
    std::int64_t n = 0;
    for (const auto& p : store.parameters())
      if (p.trainable) n += shape_numel(p.shape);
    CHECK(n == decoder_parameter_count(cfg));
  }
  CHECK(decoder_parameter_count(DecoderConfig::sam_shaped()) == 4'140'416);
}

TEST_CASE("parameter draws depend only on seed domain and path") {
  SegmentationModel a(peftseg::testing::tiny_model_config(PeftKind::lora), 1, 2);
  SegmentationModel b(peftseg::testing::tiny_model_config(PeftKind::decoder_only), 1, 2);
  SegmentationModel c(peftseg::testing::tiny_model_config(PeftKind::decoder_only), 1, 3);
  for (const auto& p : b.store().parameters()) {
    const auto& q = a.store().at(p.path);
    CHECK_MESSAGE(std::equal(p.tensor.data().begin(), p.tensor.data().end(), q.tensor.data().begin()), p.path);
  }
  const auto& t1 = b.store().at("decoder.class_tokens").tensor;
  const auto& t2 = c.store().at("decoder.class_tokens").tensor;
  CHECK_FALSE(std::equal(t1.data().begin(), t1.data().end(), t2.data().begin()));
}

TEST_CASE("SAM-shaped decoder produces window-resolution logits") {
  ParameterStore store(true, 1, 2);
  PromptlessDecoder dec(store, DecoderConfig::sam_shaped(5));
  ImageEmbedding emb{random_tensor({2, 32 * 32, 256}, 5), 32, 32};
  NoGradGuard g;
  const auto y = dec.decode(emb, 512, 512);
  CHECK(y.shape() == Shape{2, 5, 512, 512});
}

TEST_CASE("dense embedding on the SAM-shaped decoder adds one broadcast vector") {
  auto cfg = DecoderConfig::sam_shaped(5);
  const auto off = decoder_parameter_count(cfg);
  cfg.use_dense_embedding = true;
  CHECK(decoder_parameter_count(cfg) - off == 256);
}

TEST_CASE("every decoder parameter receives gradient") {
  auto cfg = peftseg::testing::tiny_model_config(PeftKind::decoder_only, true).decoder;
  cfg.dense_init_std = 0.1;
  ParameterStore store(true, 1, 2);
  PromptlessDecoder dec(store, cfg);
  // Biases start at zero; move them so no branch is degenerate.
  std::uint64_t s = 50;
  for (auto& p : store.parameters()) peftseg::testing::randomize(p.tensor, s++, 0.3);
  ImageEmbedding emb{random_tensor({1, 16, 16}, 6), 4, 4};
  const auto logits = dec.decode(emb, 16, 16);
  ops::sum(logits).backward();
  for (const auto& p : store.parameters()) {
    double mag = 0.0;
    for (double gv : p.tensor.grad()) mag = std::max(mag, std::abs(gv));
    CHECK_MESSAGE(mag > 0.0, p.path);
  }
}
