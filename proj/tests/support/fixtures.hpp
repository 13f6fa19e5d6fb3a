#pragma once

// Shared helpers for the unit tests and the acceptance runner: tiny model
// configs, random inputs and central finite differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "peftseg/model.hpp"
#include "peftseg/ops.hpp"
#include "peftseg/train.hpp"

namespace peftseg::testing {

inline ModelConfig tiny_model_config(PeftKind kind, bool dense = false) {
  ModelConfig mc;
  mc.encoder.name = "test";
  mc.encoder.num_blocks = 1;
  mc.encoder.embed_dim = 8;
  mc.encoder.num_heads = 2;
  mc.encoder.mlp_hidden_dim = 16;
  mc.encoder.patch_size = 4;
  mc.encoder.input_resolution = 8;
  mc.encoder.neck_dim = 16;
  mc.decoder.num_classes = 3;
  mc.decoder.token_dim = 16;
  mc.decoder.two_way_depth = 1;
  mc.decoder.num_heads = 2;
  mc.decoder.mlp_dim = 16;
  mc.decoder.use_dense_embedding = dense;
  mc.method = PeftMethod::of(kind);
  if (mc.method.lora) {
    mc.method.lora->rank = 2;
    mc.method.lora->alpha = 2.0;
  }
  if (mc.method.adapter) mc.method.adapter->bottleneck = 2;
  mc.window_size = 16;
  return mc;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double std = 1.0, bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, std);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = nd(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<std::uint8_t> random_labels(std::size_t n, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<std::uint8_t> out(n);
  for (auto& x : out) x = static_cast<std::uint8_t>(u(rng));
  return out;
}

/// Overwrites a parameter with N(0, std) draws (used to move zero-initialised
/// factors off zero before a gradient check).
inline void randomize(Tensor t, std::uint64_t seed, double std) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, std);
  for (auto& x : t.data()) x = nd(rng);
}

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  std::size_t checked = 0;
};

/// Relative error with a 1e-6 floor in the denominator, so entries whose true
/// gradient is at round-off level are judged on an absolute scale.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Compares the analytic gradient of `loss` w.r.t. `param` against central
/// differences on up to `max_entries` evenly spread entries.
inline GradCheck check_gradient(Tensor param, const std::function<Tensor()>& loss, std::size_t max_entries = 24,
                                double step = 1e-5) {
  param.zero_grad();
  loss().backward();
  const std::vector<double> analytic(param.grad().begin(), param.grad().end());
  GradCheck r;
  auto data = param.data();
  const std::size_t n = data.size();
  const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
  for (std::size_t i = 0; i < n && r.checked < max_entries; i += stride) {
    const double orig = data[i];
    double lp = 0.0, lm = 0.0;
    {
      NoGradGuard g;
      data[i] = orig + step;
      lp = loss().item();
      data[i] = orig - step;
      lm = loss().item();
      data[i] = orig;
    }
    const double numeric = (lp - lm) / (2.0 * step);
    const double a = analytic.empty() ? 0.0 : analytic[i];
    r.max_rel_error = std::max(r.max_rel_error, relative_error(a, numeric));
    r.max_abs_analytic = std::max(r.max_abs_analytic, std::abs(a));
    ++r.checked;
  }
  return r;
}

/// Tiny model with every zero-initialised PEFT factor randomised, a random
/// input batch and labels, and the combined training loss. PEFT scales are
/// raised so encoder-side gradients sit well above the round-off of a 1e-5
/// central difference (with the defaults they are near 1e-7).
inline ModelConfig gradient_check_config(PeftKind kind, bool dense) {
  auto mc = tiny_model_config(kind, dense);
  if (mc.method.lora) {
    mc.method.lora->alpha = 4.0;
    mc.method.lora->a_init_std = 0.3;
  }
  if (mc.method.adapter) mc.method.adapter->scale = 1.0;
  return mc;
}

struct TinyProblem {
  SegmentationModel model;
  Tensor images;
  std::vector<std::uint8_t> labels;
  LossConfig loss_cfg;

  explicit TinyProblem(PeftKind kind, bool dense = false, std::uint64_t seed = 5)
      : model(gradient_check_config(kind, dense), 1, 2) {
    const auto& mc = model.config();
    images = random_tensor({2, mc.encoder.input_resolution, mc.encoder.input_resolution, 3}, seed);
    labels = random_labels(static_cast<std::size_t>(2 * mc.window_size * mc.window_size),
                           static_cast<int>(mc.decoder.num_classes), seed + 1);
    loss_cfg.class_weights = {0.5, 1.0, 1.5};
    std::uint64_t s = seed + 100;
    for (auto& p : model.store().parameters()) {
      const bool zero_factor = p.path.ends_with(".B") || p.path.find(".up.") != std::string::npos ||
                               p.path.ends_with("no_mask_embed");
      if (zero_factor && p.trainable) randomize(p.tensor, s++, 1.0);
    }
  }

  Tensor loss() const { return segmentation_loss(model.forward(images), labels, loss_cfg).total; }
};

}  // namespace peftseg::testing
