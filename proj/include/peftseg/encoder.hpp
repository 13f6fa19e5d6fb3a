#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "peftseg/layers.hpp"
#include "peftseg/params.hpp"

namespace peftseg {

/// Shape of a ViT-style image encoder.
struct EncoderSpec {
  std::string name = "tiny";
  std::int64_t num_blocks = 2;
  std::int64_t embed_dim = 32;
  std::int64_t num_heads = 4;
  std::int64_t mlp_hidden_dim = 128;
  std::int64_t patch_size = 8;
  std::int64_t input_resolution = 128;
  std::int64_t neck_dim = 64;     // image embedding channels handed to the decoder
  std::int64_t window_size = 0;   // local attention window in tokens, 0 = global

  std::int64_t grid() const { return input_resolution / patch_size; }
  std::int64_t num_tokens() const { return grid() * grid(); }

  /// Throws ConfigError on violated invariants.
  void validate() const;

  static EncoderSpec vit_b();
  static EncoderSpec vit_l();
  static EncoderSpec vit_h();
  static EncoderSpec tiny();
  static EncoderSpec preset(const std::string& name);
};

struct EncoderBlock {
  LayerNorm norm1;
  LinearWithLoRA qkv;  // fused [3d, d]; rows [0,d) query, [d,2d) key, [2d,3d) value
  LinearWithLoRA proj;
  LayerNorm norm2;
  Mlp mlp;
  std::optional<AdapterModule> adapter_attn;  // serial, on the attention output
  std::optional<AdapterModule> adapter_mlp;   // parallel to the MLP
};

/// Image embedding handed from encoder to decoder: features [B, h*w, C].
struct ImageEmbedding {
  Tensor features;
  std::int64_t height = 0;
  std::int64_t width = 0;

  std::int64_t batch() const { return features.dim(0); }
  std::int64_t channels() const { return features.dim(2); }
};

/// Pre-norm ViT with a 1x1 neck projection. Base weights are created frozen
/// in the backbone seed domain; PEFT modules are added by inject_peft.
class ViTEncoder {
 public:
  ViTEncoder(ParameterStore& store, EncoderSpec spec, std::string prefix = "encoder");

  /// images: [B, R, R, 3] normalised pixels at the encoder input resolution.
  ImageEmbedding forward(const Tensor& images) const;

  const EncoderSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }
  std::vector<EncoderBlock>& blocks() { return blocks_; }
  const std::vector<EncoderBlock>& blocks() const { return blocks_; }
  ParameterStore& store() { return *store_; }
  bool injected() const { return injected_; }
  void mark_injected() { injected_ = true; }

 private:
  Tensor block_forward(const EncoderBlock& block, const Tensor& x, std::int64_t batch) const;

  ParameterStore* store_;
  EncoderSpec spec_;
  std::string prefix_;
  Linear patch_embed_;
  Tensor pos_embed_;
  std::vector<EncoderBlock> blocks_;
  Linear neck_proj_;
  LayerNorm neck_norm_;
  bool injected_ = false;
};

}  // namespace peftseg
