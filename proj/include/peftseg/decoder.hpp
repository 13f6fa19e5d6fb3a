#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peftseg/encoder.hpp"
#include "peftseg/layers.hpp"
#include "peftseg/params.hpp"

namespace peftseg {

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names{"BACKGROUND", "CWD", "MISC", "STUMP", "VEGETATION"};
  return names;
}

struct DecoderConfig {
  static constexpr std::int64_t upsample_factor = 4;
  static constexpr std::int64_t mlp_depth = 3;

  std::int64_t num_classes = 5;
  std::int64_t token_dim = 64;
  std::int64_t two_way_depth = 2;
  std::int64_t num_heads = 4;
  std::int64_t mlp_dim = 256;
  std::int64_t attention_downsample = 2;  // cross-attention internal width = token_dim / this
  bool use_dense_embedding = false;
  double dense_init_std = 0.0;
  double class_token_std = 0.02;

  void validate() const;

  /// SAM's mask-decoder widths (C=256, depth 2, 8 heads, MLP 2048).
  static DecoderConfig sam_shaped(std::int64_t num_classes = 5);
};

/// Mask decoder driven only by the image embedding and N learned class tokens.
///
/// Pipeline: optional no-mask embedding add -> two-way transformer (plus a
/// final token-to-image attention) -> 4x transposed-conv upsampling -> tokens
/// attend the upsampled embedding -> per-class 3-layer MLP -> dot product with
/// the upsampled embedding -> bilinear resize to the requested resolution.
class PromptlessDecoder {
 public:
  PromptlessDecoder(ParameterStore& store, DecoderConfig config, std::string prefix = "decoder");

  /// Mask logits [B, N, out_h, out_w].
  Tensor decode(const ImageEmbedding& embedding, std::int64_t out_h, std::int64_t out_w) const;
  /// Logits at the decoder's native 4h x 4w resolution.
  Tensor decode_native(const ImageEmbedding& embedding) const;

  /// Turns the learned no-mask embedding on or off. When off it is skipped in
  /// forward and held frozen.
  void toggle_dense_embedding(bool on);
  bool dense_embedding_enabled() const { return config_.use_dense_embedding; }

  const DecoderConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }

 private:
  struct TwoWayLayer {
    Attention self_attn;
    LayerNorm norm1;
    Attention cross_token_to_image;
    LayerNorm norm2;
    Mlp mlp;
    LayerNorm norm3;
    Attention cross_image_to_token;
    LayerNorm norm4;
  };

  ParameterStore* store_;
  DecoderConfig config_;
  std::string prefix_;
  Tensor class_tokens_;   // [N, C]
  Tensor no_mask_embed_;  // [C]
  std::vector<TwoWayLayer> layers_;
  Attention final_attn_;
  LayerNorm norm_final_;
  Linear up1_;  // transposed conv C -> C/4 as [4*C/4, C]
  Tensor up1_bias_;
  LayerNorm up_norm_;
  Linear up2_;  // C/4 -> C/8
  Tensor up2_bias_;
  Attention reattend_;
  LayerNorm norm_reattend_;
  std::vector<Tensor> hyper_w_;  // per layer [N, out, in]
  std::vector<Tensor> hyper_b_;
};

/// Fixed sinusoidal (random Fourier) positional encoding [h*w, dim].
Tensor image_positional_encoding(std::int64_t h, std::int64_t w, std::int64_t dim);

/// Trainable decoder parameters for a config, enumerated without allocation.
std::int64_t decoder_parameter_count(const DecoderConfig& config);

}  // namespace peftseg
