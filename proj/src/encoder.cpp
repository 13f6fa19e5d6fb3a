#include "peftseg/encoder.hpp"

#include <cmath>

#include "peftseg/errors.hpp"
#include "peftseg/ops.hpp"

namespace peftseg {

void EncoderSpec::validate() const {
  if (num_blocks < 1) throw ConfigError("encoder: num_blocks must be >= 1");
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0)
    throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  if (patch_size < 1 || input_resolution % patch_size != 0)
    throw ConfigError("encoder: input_resolution " + std::to_string(input_resolution) +
                      " not a multiple of patch_size " + std::to_string(patch_size));
  if (mlp_hidden_dim < 1 || neck_dim < 1) throw ConfigError("encoder: mlp_hidden_dim and neck_dim must be positive");
  if (window_size < 0 || (window_size > 0 && grid() % window_size != 0))
    throw ConfigError("encoder: token grid " + std::to_string(grid()) + " not divisible by window_size " +
                      std::to_string(window_size));
}

// Full-size presets follow the SAM image encoders; they are used for shape
// enumeration and parameter counting only.
EncoderSpec EncoderSpec::vit_b() { return {"vit_b", 12, 768, 12, 3072, 16, 1024, 256, 0}; }
EncoderSpec EncoderSpec::vit_l() { return {"vit_l", 24, 1024, 16, 4096, 16, 1024, 256, 0}; }
EncoderSpec EncoderSpec::vit_h() { return {"vit_h", 32, 1280, 16, 5120, 16, 1024, 256, 0}; }
EncoderSpec EncoderSpec::tiny() { return {}; }

EncoderSpec EncoderSpec::preset(const std::string& name) {
  if (name == "vit_b") return vit_b();
  if (name == "vit_l") return vit_l();
  if (name == "vit_h") return vit_h();
  if (name == "tiny") return tiny();
  throw ConfigError("unknown encoder preset '" + name + "' (expected tiny, vit_b, vit_l or vit_h)");
}

ViTEncoder::ViTEncoder(ParameterStore& store, EncoderSpec spec, std::string prefix)
    : store_(&store), spec_(std::move(spec)), prefix_(std::move(prefix)) {
  spec_.validate();
  const auto d = spec_.embed_dim;
  const auto patch_in = spec_.patch_size * spec_.patch_size * 3;
  const auto frozen = SeedDomain::backbone;
  auto fan = [](std::int64_t n) { return Init::normal(1.0 / std::sqrt(static_cast<double>(n))); };

  patch_embed_ = make_linear(store, prefix_ + ".patch_embed", patch_in, d, true, false, frozen, fan(patch_in));
  pos_embed_ = store.create(prefix_ + ".pos_embed", {spec_.num_tokens(), d}, Init::normal(0.02), false, frozen);
  blocks_.reserve(static_cast<std::size_t>(spec_.num_blocks));
  for (std::int64_t i = 0; i < spec_.num_blocks; ++i) {
    const std::string p = prefix_ + ".blocks." + std::to_string(i);
    EncoderBlock b;
    b.norm1 = make_layer_norm(store, p + ".norm1", d, false, frozen, 1e-6);
    auto qkv = make_linear(store, p + ".attn.qkv", d, 3 * d, true, false, frozen, fan(d));
    b.qkv.weight = qkv.weight;
    b.qkv.bias = qkv.bias;
    auto proj = make_linear(store, p + ".attn.proj", d, d, true, false, frozen, fan(d));
    b.proj.weight = proj.weight;
    b.proj.bias = proj.bias;
    b.norm2 = make_layer_norm(store, p + ".norm2", d, false, frozen, 1e-6);
    b.mlp.fc1 = make_linear(store, p + ".mlp.fc1", d, spec_.mlp_hidden_dim, true, false, frozen, fan(d));
    b.mlp.fc2 = make_linear(store, p + ".mlp.fc2", spec_.mlp_hidden_dim, d, true, false, frozen, fan(spec_.mlp_hidden_dim));
    b.mlp.activation = Activation::gelu;
    blocks_.push_back(std::move(b));
  }
  neck_proj_ = make_linear(store, prefix_ + ".neck.proj", d, spec_.neck_dim, false, false, frozen, fan(d));
  neck_norm_ = make_layer_norm(store, prefix_ + ".neck.norm", spec_.neck_dim, false, frozen, 1e-6);
}

Tensor ViTEncoder::block_forward(const EncoderBlock& block, const Tensor& x, std::int64_t batch) const {
  const auto d = spec_.embed_dim;
  const auto g = spec_.grid();
  const auto ws = spec_.window_size;

  Tensor a = block.norm1.forward(x);
  if (ws > 0) a = ops::window_partition(ops::reshape(a, {batch, g, g, d}), ws);
  Tensor qkv = block.qkv.forward(a);
  Tensor o = multi_head_attention(ops::slice_last(qkv, 0, d), ops::slice_last(qkv, d, d), ops::slice_last(qkv, 2 * d, d),
                                  spec_.num_heads);
  o = block.proj.forward(o);
  if (ws > 0) o = ops::reshape(ops::window_unpartition(o, batch, g, g, ws), {batch, g * g, d});
  if (block.adapter_attn) o = block.adapter_attn->forward(o);
  Tensor h = ops::add(x, o);

  Tensor m = block.norm2.forward(h);
  Tensor mo = block.mlp.forward(m);
  if (block.adapter_mlp) mo = ops::add(mo, block.adapter_mlp->branch(m));
  return ops::add(h, mo);
}

ImageEmbedding ViTEncoder::forward(const Tensor& images) const {
  if (!store_->materialized()) throw IntegrityError("encoder built in shape-only mode cannot run forward");
  const auto r = spec_.input_resolution;
  if (images.rank() != 4 || images.dim(1) != r || images.dim(2) != r || images.dim(3) != 3)
    throw ShapeError("encoder: expected images [B," + std::to_string(r) + "," + std::to_string(r) + ",3], got " +
                     shape_str(images.shape()));
  const auto batch = images.dim(0);
  Tensor x = patch_embed_.forward(ops::patchify(images, spec_.patch_size));
  x = ops::add_broadcast(x, pos_embed_);
  for (const auto& b : blocks_) x = block_forward(b, x, batch);
  Tensor e = neck_norm_.forward(neck_proj_.forward(x));
  return {e, spec_.grid(), spec_.grid()};
}

}  // namespace peftseg
