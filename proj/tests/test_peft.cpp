#include <algorithm>

#include "doctest.h"
#include "peftseg/config.hpp"
#include "peftseg/errors.hpp"
#include "peftseg/layers.hpp"
#include "peftseg/peft.hpp"
#include "support/fixtures.hpp"

using namespace peftseg;

TEST_CASE("LoRA forward on a hand example") {
  LinearWithLoRA layer;
  layer.weight = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  layer.updates.push_back({"lora", 0, Tensor::from_data({1, 2}, {1, 1}), Tensor::from_data({2, 1}, {0.1, 0.1})});
  layer.scale = 1.0;
  const auto y = layer.forward(Tensor::from_data({1, 2}, {1, 1}));
  CHECK(y.data()[0] == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(y.data()[1] == doctest::Approx(1.2).epsilon(1e-15));

  const auto merged = merge_lora(layer);
  const auto ym = merged.forward(Tensor::from_data({1, 2}, {1, 1}));
  CHECK(ym.data()[0] == doctest::Approx(1.2));
  CHECK(merged.weight.data()[1] == doctest::Approx(0.1));
}

TEST_CASE("LoRA update on a row block of a fused projection leaves other rows alone") {
  LinearWithLoRA layer;
  layer.weight = Tensor::from_data({3, 1}, {1, 2, 3});
  layer.updates.push_back({"lora_k", 1, Tensor::from_data({1, 1}, {2}), Tensor::from_data({1, 1}, {0.5})});
  layer.scale = 2.0;
  const auto y = layer.forward(Tensor::from_data({1, 1}, {1}));
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == doctest::Approx(2.0 + 2.0 * 0.5 * 2.0));
  CHECK(y.data()[2] == 3.0);
}

TEST_CASE("adapter with a zero up-projection is the identity") {
  AdapterModule a;
  a.down.weight = peftseg::testing::random_tensor({2, 4}, 1);
  a.down.bias = Tensor::zeros({2});
  a.up.weight = Tensor::zeros({4, 2});
  a.up.bias = Tensor::zeros({4});
  const auto x = peftseg::testing::random_tensor({3, 4}, 2);
  const auto y = a.forward(x);
  CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
}

TEST_CASE("closed-form counts at full scale") {
  const auto h = EncoderSpec::vit_h();
  CHECK(peft_parameter_count(h, PeftMethod::of(PeftKind::adapter_h)) == 5'326'848);
  CHECK(peft_parameter_count(h, PeftMethod::of(PeftKind::adapter_l)) == 2'663'424);
  CHECK(peft_parameter_count(h, PeftMethod::of(PeftKind::lora)) == 655'360);
  CHECK(peft_parameter_count(h, PeftMethod::of(PeftKind::decoder_only)) == 0);
  for (auto spec : {EncoderSpec::vit_b(), EncoderSpec::vit_l(), EncoderSpec::tiny()})
    for (auto kind : {PeftKind::adapter_h, PeftKind::adapter_l, PeftKind::lora}) {
      auto method = PeftMethod::of(kind);
      if (method.adapter) method.adapter->bottleneck = 8;
      CHECK(peft_parameter_count(spec, method) == enumerated_peft_parameter_count(spec, method));
    }
}

TEST_CASE("desk-scale trainable counts") {
  const auto cfg = default_config();
  std::map<PeftKind, std::int64_t> counts;
  for (auto kind : selected_methods(cfg)) {
    SegmentationModel m(model_config(cfg, kind), 1, 2);
    counts[kind] = count_trainable(m.partition(), m.store());
  }
  const auto dec = counts[PeftKind::decoder_only];
  CHECK(dec == decoder_parameter_count(model_config(cfg, PeftKind::decoder_only).decoder));
  CHECK(counts[PeftKind::adapter_h] - dec == 2208);
  CHECK(counts[PeftKind::adapter_l] - dec == 1104);
  CHECK(counts[PeftKind::lora] - dec == 1024);
}

TEST_CASE("partition keeps the backbone frozen") {
  for (auto kind : {PeftKind::adapter_h, PeftKind::adapter_l, PeftKind::lora, PeftKind::decoder_only}) {
    SegmentationModel m(peftseg::testing::tiny_model_config(kind), 1, 2);
    for (const auto& p : m.partition().trainable()) {
      if (!p.starts_with("encoder.")) continue;
      CHECK(kind != PeftKind::decoder_only);
      const bool peft = p.find(".lora_") != std::string::npos || p.find(".adapter_") != std::string::npos;
      CHECK_MESSAGE(peft, p);
    }
    CHECK(m.partition().trainable().size() + m.partition().frozen().size() == m.store().parameters().size());
  }
}

TEST_CASE("injecting twice is rejected") {
  ParameterStore store;
  ViTEncoder enc(store, peftseg::testing::tiny_model_config(PeftKind::lora).encoder);
  inject_peft(enc, PeftMethod::of(PeftKind::lora));
  CHECK_THROWS_AS(inject_peft(enc, PeftMethod::of(PeftKind::adapter_l)), ConfigError);
}

TEST_CASE("invalid PEFT settings are config errors") {
  LoRAConfig l;
  l.rank = 0;
  CHECK_THROWS_AS(l.validate(32), ConfigError);
  AdapterConfig a;
  a.bottleneck = 32;
  CHECK_THROWS_AS(a.validate(32), ConfigError);
  CHECK_THROWS_AS(peft_kind_from_name("prefix"), ConfigError);
}

TEST_CASE("LoRA hand cases and scale annihilation") {
  LinearWithLoRA layer;
  layer.weight = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  layer.updates.push_back({"lora", 0, Tensor::from_data({1, 2}, {1, 0}), Tensor::from_data({2, 1}, {1, 0})});
  layer.scale = 1.0;
  const auto x = Tensor::from_data({1, 2}, {3, 5});
  const auto y = layer.forward(x);
  CHECK(y.data()[0] == 6.0);
  CHECK(y.data()[1] == 5.0);
  const auto merged = merge_lora(layer);
  CHECK(std::vector<double>(merged.weight.data().begin(), merged.weight.data().end()) == std::vector<double>{2, 0, 0, 1});

  layer.scale = 0.0;
  const auto y0 = layer.forward(x);
  CHECK(y0.data()[0] == 3.0);
  CHECK(y0.data()[1] == 5.0);
}

TEST_CASE("merged LoRA matches the unmerged layer") {
  LinearWithLoRA layer;
  layer.weight = peftseg::testing::random_tensor({6, 5}, 1);
  layer.bias = peftseg::testing::random_tensor({6}, 2);
  layer.updates.push_back({"q", 0, peftseg::testing::random_tensor({2, 5}, 3), Tensor::zeros({3, 2})});
  auto zero_merge = merge_lora(layer);
  CHECK(std::equal(zero_merge.weight.data().begin(), zero_merge.weight.data().end(), layer.weight.data().begin()));

  layer.updates[0].b = peftseg::testing::random_tensor({3, 2}, 4);
  layer.updates.push_back({"v", 3, peftseg::testing::random_tensor({2, 5}, 5), peftseg::testing::random_tensor({3, 2}, 6)});
  layer.scale = 0.75;
  const auto merged = merge_lora(layer);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto x = peftseg::testing::random_tensor({1, 5}, 100 + std::uint64_t(i));
    const auto a = layer.forward(x), b = merged.forward(x);
    for (int j = 0; j < 6; ++j) worst = std::max(worst, std::abs(a.data()[std::size_t(j)] - b.data()[std::size_t(j)]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("adapter hand case and scale annihilation") {
  AdapterModule a;
  a.down.weight = Tensor::from_data({1, 2}, {1, 1});
  a.up.weight = Tensor::from_data({2, 1}, {1, 1});
  a.activation = Activation::identity;
  a.scale = 0.1;
  const auto x = Tensor::from_data({1, 2}, {1, 1});
  const auto y = a.forward(x);
  CHECK(y.data()[0] == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(y.data()[1] == doctest::Approx(1.2).epsilon(1e-15));
  a.scale = 0.0;
  const auto y0 = a.forward(x);
  CHECK(y0.data()[0] == 1.0);
}

TEST_CASE("adapter_h adds twice the adapter_l count") {
  for (auto spec : {EncoderSpec::vit_b(), EncoderSpec::vit_h(), EncoderSpec::tiny()}) {
    auto h = PeftMethod::of(PeftKind::adapter_h), l = PeftMethod::of(PeftKind::adapter_l);
    h.adapter->bottleneck = l.adapter->bottleneck = 8;
    CHECK(peft_parameter_count(spec, h) == 2 * peft_parameter_count(spec, l));
  }
}

TEST_CASE("an empty trainable set counts zero") {
  ParameterStore store;
  store.create("w", {3, 3}, Init::zeros(), false, SeedDomain::backbone);
  CHECK(count_trainable(TrainabilityPartition::from_store(store), store) == 0);
}
