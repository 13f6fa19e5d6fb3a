#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peftseg/params.hpp"
#include "peftseg/tensor.hpp"

namespace peftseg {

enum class Activation { gelu, relu, identity };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);
Tensor apply_activation(Activation a, const Tensor& x);

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out] or undefined

  Tensor forward(const Tensor& x) const;
  std::int64_t in_features() const { return weight.dim(1); }
  std::int64_t out_features() const { return weight.dim(0); }
};

/// Registers `<prefix>.weight` (and `<prefix>.bias`) in the store.
Linear make_linear(ParameterStore& store, const std::string& prefix, std::int64_t in, std::int64_t out, bool bias,
                   bool trainable, SeedDomain domain, Init weight_init);

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-6;

  Tensor forward(const Tensor& x) const;
};

LayerNorm make_layer_norm(ParameterStore& store, const std::string& prefix, std::int64_t dim, bool trainable,
                          SeedDomain domain, double eps);

/// Low-rank update B·A added to rows [row_offset, row_offset + B.rows) of a
/// frozen projection's output.
struct LowRankUpdate {
  std::string name;
  std::int64_t row_offset = 0;
  Tensor a;  // [r, k]
  Tensor b;  // [rows, r]
};

/// Frozen W0 (+ bias) with trainable low-rank pairs:
///   h = W0 x + bias + (alpha / r) * B (A x)
/// A plain LoRA layer holds one update covering all rows; a fused qkv
/// projection holds one update per targeted row block.
struct LinearWithLoRA {
  Tensor weight;  // W0 [d, k]
  Tensor bias;
  std::vector<LowRankUpdate> updates;
  double scale = 1.0;  // alpha / r

  Tensor forward(const Tensor& x) const;
};

Tensor lora_forward(const LinearWithLoRA& layer, const Tensor& x);

/// Folds every update into the base weight: W0 + (alpha / r) * B A.
Linear merge_lora(const LinearWithLoRA& layer);

/// Bottleneck block: down-projection, activation, up-projection, scaled.
struct AdapterModule {
  Linear down;  // [bottleneck, d]
  Linear up;    // [d, bottleneck]
  double scale = 0.1;
  Activation activation = Activation::gelu;

  /// s * Up(act(Down(x))) without the residual.
  Tensor branch(const Tensor& x) const;
  /// x + branch(x).
  Tensor forward(const Tensor& x) const;
};

Tensor adapter_forward(const AdapterModule& adapter, const Tensor& x);

struct Mlp {
  Linear fc1;
  Linear fc2;
  Activation activation = Activation::gelu;

  Tensor forward(const Tensor& x) const;
};

/// Scaled dot-product attention over [B, T, heads * head_dim] inputs.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t heads);

/// Attention with separate projections; keys/values may have their own width
/// and the projections may downsample to an internal width.
struct Attention {
  Linear q_proj;
  Linear k_proj;
  Linear v_proj;
  Linear out_proj;
  std::int64_t heads = 1;

  Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v) const;
};

Attention make_attention(ParameterStore& store, const std::string& prefix, std::int64_t embed_dim,
                         std::int64_t kv_dim, std::int64_t internal_dim, std::int64_t heads, bool trainable,
                         SeedDomain domain);

}  // namespace peftseg
