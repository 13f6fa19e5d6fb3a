#include "peftseg/decoder.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "peftseg/errors.hpp"
#include "peftseg/ops.hpp"

namespace peftseg {

void DecoderConfig::validate() const {
  if (num_classes < 2) throw ConfigError("decoder.num_classes must be >= 2");
  if (token_dim < 16 || token_dim % 16 != 0) throw ConfigError("decoder.token_dim must be a positive multiple of 16");
  if (two_way_depth < 1) throw ConfigError("decoder.two_way_depth must be >= 1");
  if (attention_downsample < 1 || token_dim % attention_downsample != 0)
    throw ConfigError("decoder.attention_downsample must divide token_dim");
  if (num_heads < 1 || token_dim % num_heads != 0 || (token_dim / attention_downsample) % num_heads != 0)
    throw ConfigError("decoder.num_heads must divide token_dim and the cross-attention width");
  if (mlp_dim < 1) throw ConfigError("decoder.mlp_dim must be >= 1");
}

DecoderConfig DecoderConfig::sam_shaped(std::int64_t num_classes) {
  DecoderConfig c;
  c.num_classes = num_classes;
  c.token_dim = 256;
  c.two_way_depth = 2;
  c.num_heads = 8;
  c.mlp_dim = 2048;
  c.attention_downsample = 2;
  return c;
}

Tensor image_positional_encoding(std::int64_t h, std::int64_t w, std::int64_t dim) {
  if (dim % 2 != 0) throw ConfigError("positional encoding width must be even");
  const auto half = dim / 2;
  // Fixed Gaussian frequency matrix [2, half]; a constant, not a parameter.
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> freq(static_cast<std::size_t>(2 * half));
  for (auto& f : freq) f = dist(rng);
  std::vector<double> pe(static_cast<std::size_t>(h * w * dim));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const double cy = 2.0 * ((static_cast<double>(y) + 0.5) / static_cast<double>(h)) - 1.0;
      const double cx = 2.0 * ((static_cast<double>(x) + 0.5) / static_cast<double>(w)) - 1.0;
      double* row = pe.data() + (y * w + x) * dim;
      for (std::int64_t i = 0; i < half; ++i) {
        const double a = 2.0 * std::numbers::pi * (cx * freq[static_cast<std::size_t>(i)] + cy * freq[static_cast<std::size_t>(half + i)]);
        row[i] = std::sin(a);
        row[half + i] = std::cos(a);
      }
    }
  return Tensor::from_data({h * w, dim}, std::move(pe));
}

PromptlessDecoder::PromptlessDecoder(ParameterStore& store, DecoderConfig config, std::string prefix)
    : store_(&store), config_(config), prefix_(std::move(prefix)) {
  config_.validate();
  const auto c = config_.token_dim;
  const auto n = config_.num_classes;
  const auto inner = c / config_.attention_downsample;
  const auto c4 = c / 4;
  const auto c8 = c / 8;
  const auto dom = SeedDomain::head;
  auto fan = [](std::int64_t in) { return Init::uniform(1.0 / std::sqrt(static_cast<double>(in))); };

  class_tokens_ = store.create(prefix_ + ".class_tokens", {n, c}, Init::normal(config_.class_token_std), true, dom);
  no_mask_embed_ = store.create(prefix_ + ".no_mask_embed", {c},
                                config_.dense_init_std > 0 ? Init::normal(config_.dense_init_std) : Init::zeros(),
                                config_.use_dense_embedding, dom);

  for (std::int64_t i = 0; i < config_.two_way_depth; ++i) {
    const std::string p = prefix_ + ".transformer.layers." + std::to_string(i);
    TwoWayLayer l;
    l.self_attn = make_attention(store, p + ".self_attn", c, c, c, config_.num_heads, true, dom);
    l.norm1 = make_layer_norm(store, p + ".norm1", c, true, dom, 1e-5);
    l.cross_token_to_image = make_attention(store, p + ".cross_attn_token_to_image", c, c, inner, config_.num_heads, true, dom);
    l.norm2 = make_layer_norm(store, p + ".norm2", c, true, dom, 1e-5);
    l.mlp.fc1 = make_linear(store, p + ".mlp.lin1", c, config_.mlp_dim, true, true, dom, fan(c));
    l.mlp.fc2 = make_linear(store, p + ".mlp.lin2", config_.mlp_dim, c, true, true, dom, fan(config_.mlp_dim));
    l.mlp.activation = Activation::relu;
    l.norm3 = make_layer_norm(store, p + ".norm3", c, true, dom, 1e-5);
    l.cross_image_to_token = make_attention(store, p + ".cross_attn_image_to_token", c, c, inner, config_.num_heads, true, dom);
    l.norm4 = make_layer_norm(store, p + ".norm4", c, true, dom, 1e-5);
    layers_.push_back(std::move(l));
  }
  final_attn_ = make_attention(store, prefix_ + ".transformer.final_attn_token_to_image", c, c, inner, config_.num_heads, true, dom);
  norm_final_ = make_layer_norm(store, prefix_ + ".transformer.norm_final_attn", c, true, dom, 1e-5);

  up1_ = make_linear(store, prefix_ + ".output_upscaling.conv1", c, 4 * c4, false, true, dom, fan(c));
  up1_bias_ = store.create(prefix_ + ".output_upscaling.conv1.bias", {c4}, Init::zeros(), true, dom);
  up_norm_ = make_layer_norm(store, prefix_ + ".output_upscaling.norm", c4, true, dom, 1e-6);
  up2_ = make_linear(store, prefix_ + ".output_upscaling.conv2", c4, 4 * c8, false, true, dom, fan(c4));
  up2_bias_ = store.create(prefix_ + ".output_upscaling.conv2.bias", {c8}, Init::zeros(), true, dom);

  reattend_ = make_attention(store, prefix_ + ".reattend", c, c8, inner, config_.num_heads, true, dom);
  norm_reattend_ = make_layer_norm(store, prefix_ + ".norm_reattend", c, true, dom, 1e-5);

  const std::int64_t dims[DecoderConfig::mlp_depth + 1] = {c, c, c, c8};
  for (std::int64_t i = 0; i < DecoderConfig::mlp_depth; ++i) {
    const std::string p = prefix_ + ".hyper.layers." + std::to_string(i);
    hyper_w_.push_back(store.create(p + ".weight", {n, dims[i + 1], dims[i]}, fan(dims[i]), true, dom));
    hyper_b_.push_back(store.create(p + ".bias", {n, dims[i + 1]}, Init::zeros(), true, dom));
  }
}

void PromptlessDecoder::toggle_dense_embedding(bool on) {
  config_.use_dense_embedding = on;
  store_->set_trainable(prefix_ + ".no_mask_embed", on);
}

Tensor PromptlessDecoder::decode_native(const ImageEmbedding& embedding) const {
  if (!store_->materialized()) throw IntegrityError("decoder built in shape-only mode cannot run forward");
  const auto c = config_.token_dim;
  const auto& f = embedding.features;
  if (f.rank() != 3 || f.dim(2) != c)
    throw ShapeError("decode: embedding channel axis is " + (f.rank() == 3 ? std::to_string(f.dim(2)) : shape_str(f.shape())) +
                     ", decoder token_dim is " + std::to_string(c));
  const auto b = f.dim(0);
  const auto h = embedding.height, w = embedding.width;
  if (f.dim(1) != h * w) throw ShapeError("decode: embedding has " + std::to_string(f.dim(1)) + " positions for a " +
                                          std::to_string(h) + "x" + std::to_string(w) + " grid");

  Tensor keys = config_.use_dense_embedding ? ops::add_broadcast(f, no_mask_embed_) : f;
  const Tensor key_pe = image_positional_encoding(h, w, c);
  const Tensor tokens = ops::broadcast_batch(class_tokens_, b);
  const Tensor& query_pe = tokens;
  Tensor queries = tokens;

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (i == 0) {
      queries = l.self_attn.forward(queries, queries, queries);
    } else {
      Tensor q = ops::add(queries, query_pe);
      queries = ops::add(queries, l.self_attn.forward(q, q, queries));
    }
    queries = l.norm1.forward(queries);

    Tensor q = ops::add(queries, query_pe);
    Tensor k = ops::add_broadcast(keys, key_pe);
    queries = l.norm2.forward(ops::add(queries, l.cross_token_to_image.forward(q, k, keys)));
    queries = l.norm3.forward(ops::add(queries, l.mlp.forward(queries)));

    q = ops::add(queries, query_pe);
    k = ops::add_broadcast(keys, key_pe);
    keys = l.norm4.forward(ops::add(keys, l.cross_image_to_token.forward(k, q, queries)));
  }
  {
    Tensor q = ops::add(queries, query_pe);
    Tensor k = ops::add_broadcast(keys, key_pe);
    queries = norm_final_.forward(ops::add(queries, final_attn_.forward(q, k, keys)));
  }

  // Two stride-2 transposed convolutions: 1x1 channel expansion + pixel shuffle.
  Tensor up = ops::reshape(keys, {b, h, w, c});
  up = ops::add_broadcast(ops::pixel_shuffle2(up1_.forward(up)), up1_bias_);
  up = ops::gelu(up_norm_.forward(up));
  up = ops::add_broadcast(ops::pixel_shuffle2(up2_.forward(up)), up2_bias_);
  up = ops::gelu(up);
  const auto uh = 4 * h, uw = 4 * w, c8 = c / 8;
  up = ops::reshape(up, {b, uh * uw, c8});

  {
    Tensor q = ops::add(queries, query_pe);
    Tensor k = ops::add_broadcast(up, image_positional_encoding(uh, uw, c8));
    queries = norm_reattend_.forward(ops::add(queries, reattend_.forward(q, k, up)));
  }

  Tensor hyper = queries;
  for (std::size_t i = 0; i < hyper_w_.size(); ++i) {
    hyper = ops::grouped_linear(hyper, hyper_w_[i], hyper_b_[i]);
    if (i + 1 < hyper_w_.size()) hyper = ops::relu(hyper);
  }
  Tensor masks = ops::matmul_nt(hyper, up);  // [B, N, uh*uw]
  return ops::reshape(masks, {b, config_.num_classes, uh, uw});
}

Tensor PromptlessDecoder::decode(const ImageEmbedding& embedding, std::int64_t out_h, std::int64_t out_w) const {
  Tensor native = decode_native(embedding);
  if (native.dim(2) == out_h && native.dim(3) == out_w) return native;
  return ops::bilinear_resize(native, out_h, out_w);
}

std::int64_t decoder_parameter_count(const DecoderConfig& config) {
  ParameterStore store(false);
  PromptlessDecoder decoder(store, config);
  return count_trainable(TrainabilityPartition::from_store(store), store);
}

}  // namespace peftseg
