#include "peftseg/peft.hpp"

#include <cmath>

#include "peftseg/errors.hpp"

namespace peftseg {

LoraTarget lora_target_from_name(const std::string& name) {
  if (name == "query" || name == "q") return LoraTarget::query;
  if (name == "key" || name == "k") return LoraTarget::key;
  if (name == "value" || name == "v") return LoraTarget::value;
  if (name == "output" || name == "o") return LoraTarget::output;
  throw ConfigError("unknown LoRA target '" + name + "' (expected query, key, value or output)");
}

std::string lora_target_name(LoraTarget t) {
  switch (t) {
    case LoraTarget::query:
      return "query";
    case LoraTarget::key:
      return "key";
    case LoraTarget::value:
      return "value";
    case LoraTarget::output:
      return "output";
  }
  return "?";
}

void LoRAConfig::validate(std::int64_t embed_dim) const {
  if (rank < 1) throw ConfigError("peft.lora.rank must be >= 1");
  if (rank >= embed_dim)
    throw ConfigError("peft.lora.rank " + std::to_string(rank) + " must be well below the model width " +
                      std::to_string(embed_dim));
  if (targets.empty()) throw ConfigError("peft.lora.targets must not be empty");
  if (!(a_init_std > 0.0)) throw ConfigError("peft.lora.a_init_std must be positive");
}

void AdapterConfig::validate(std::int64_t embed_dim) const {
  if (bottleneck < 1 || bottleneck >= embed_dim)
    throw ConfigError("peft.adapter.bottleneck " + std::to_string(bottleneck) + " must be in [1, " +
                      std::to_string(embed_dim) + ")");
  if (!(scale > 0.0)) throw ConfigError("peft.adapter.scale must be > 0");
}

PeftKind peft_kind_from_name(const std::string& name) {
  if (name == "adapter_h") return PeftKind::adapter_h;
  if (name == "adapter_l") return PeftKind::adapter_l;
  if (name == "lora") return PeftKind::lora;
  if (name == "decoder_only") return PeftKind::decoder_only;
  throw ConfigError("unknown PEFT method kind '" + name + "' (expected adapter_h, adapter_l, lora or decoder_only)");
}

std::string peft_kind_name(PeftKind kind) {
  switch (kind) {
    case PeftKind::adapter_h:
      return "adapter_h";
    case PeftKind::adapter_l:
      return "adapter_l";
    case PeftKind::lora:
      return "lora";
    case PeftKind::decoder_only:
      return "decoder_only";
  }
  return "?";
}

std::string peft_kind_label(PeftKind kind) {
  switch (kind) {
    case PeftKind::adapter_h:
      return "AdapterH";
    case PeftKind::adapter_l:
      return "AdapterL";
    case PeftKind::lora:
      return "LoRA";
    case PeftKind::decoder_only:
      return "SAM Decoder";
  }
  return "?";
}

PeftMethod PeftMethod::of(PeftKind kind) {
  PeftMethod m;
  m.kind = kind;
  if (kind == PeftKind::adapter_h || kind == PeftKind::adapter_l) m.adapter = AdapterConfig{};
  if (kind == PeftKind::lora) m.lora = LoRAConfig{};
  return m;
}

void PeftMethod::validate(std::int64_t embed_dim) const {
  switch (kind) {
    case PeftKind::adapter_h:
    case PeftKind::adapter_l:
      if (!adapter) throw ConfigError(peft_kind_name(kind) + " requires an adapter configuration");
      adapter->validate(embed_dim);
      break;
    case PeftKind::lora:
      if (!lora) throw ConfigError("lora requires a LoRA configuration");
      lora->validate(embed_dim);
      break;
    case PeftKind::decoder_only:
      break;
  }
}

namespace {

AdapterModule make_adapter(ParameterStore& store, const std::string& prefix, std::int64_t d, const AdapterConfig& cfg) {
  AdapterModule a;
  const auto bound = 1.0 / std::sqrt(static_cast<double>(d));
  a.down = make_linear(store, prefix + ".down", d, cfg.bottleneck, true, true, SeedDomain::head, Init::uniform(bound));
  const Init up_init = cfg.zero_init_up ? Init::zeros()
                                        : Init::uniform(1.0 / std::sqrt(static_cast<double>(cfg.bottleneck)));
  a.up = make_linear(store, prefix + ".up", cfg.bottleneck, d, true, true, SeedDomain::head, up_init);
  a.scale = cfg.scale;
  a.activation = cfg.activation;
  return a;
}

LowRankUpdate make_update(ParameterStore& store, const std::string& prefix, std::int64_t row_offset,
                          std::int64_t rows, std::int64_t k, const LoRAConfig& cfg) {
  LowRankUpdate u;
  u.name = prefix;
  u.row_offset = row_offset;
  u.a = store.create(prefix + ".A", {cfg.rank, k}, Init::normal(cfg.a_init_std), true, SeedDomain::head);
  u.b = store.create(prefix + ".B", {rows, cfg.rank}, Init::zeros(), true, SeedDomain::head);
  return u;
}

}  // namespace

TrainabilityPartition inject_peft(ViTEncoder& encoder, const PeftMethod& method) {
  if (encoder.injected()) throw ConfigError("encoder already carries PEFT modules");
  const auto d = encoder.spec().embed_dim;
  method.validate(d);
  auto& store = encoder.store();
  auto& blocks = encoder.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = encoder.prefix() + ".blocks." + std::to_string(i);
    auto& b = blocks[i];
    switch (method.kind) {
      case PeftKind::adapter_h:
        b.adapter_attn = make_adapter(store, p + ".adapter_attn", d, *method.adapter);
        b.adapter_mlp = make_adapter(store, p + ".adapter_mlp", d, *method.adapter);
        break;
      case PeftKind::adapter_l:
        b.adapter_mlp = make_adapter(store, p + ".adapter_mlp", d, *method.adapter);
        break;
      case PeftKind::lora: {
        const auto& cfg = *method.lora;
        b.qkv.scale = cfg.scale();
        b.proj.scale = cfg.scale();
        // Fused qkv: each target gets its own pair confined to its row block.
        if (cfg.targets.count(LoraTarget::query)) b.qkv.updates.push_back(make_update(store, p + ".attn.qkv.lora_q", 0, d, d, cfg));
        if (cfg.targets.count(LoraTarget::key)) b.qkv.updates.push_back(make_update(store, p + ".attn.qkv.lora_k", d, d, d, cfg));
        if (cfg.targets.count(LoraTarget::value)) b.qkv.updates.push_back(make_update(store, p + ".attn.qkv.lora_v", 2 * d, d, d, cfg));
        if (cfg.targets.count(LoraTarget::output)) b.proj.updates.push_back(make_update(store, p + ".attn.proj.lora", 0, d, d, cfg));
        break;
      }
      case PeftKind::decoder_only:
        break;
    }
  }
  encoder.mark_injected();
  return TrainabilityPartition::from_store(store);
}

std::int64_t peft_parameter_count(const EncoderSpec& spec, const PeftMethod& method) {
  const auto d = spec.embed_dim;
  switch (method.kind) {
    case PeftKind::adapter_h:
    case PeftKind::adapter_l: {
      const auto b = method.adapter->bottleneck;
      const auto per_adapter = d * b + b + b * d + d;
      const auto per_block = method.kind == PeftKind::adapter_h ? 2 : 1;
      return spec.num_blocks * per_block * per_adapter;
    }
    case PeftKind::lora: {
      const auto r = method.lora->rank;
      return spec.num_blocks * static_cast<std::int64_t>(method.lora->targets.size()) * (r * d + d * r);
    }
    case PeftKind::decoder_only:
      return 0;
  }
  return 0;
}

std::int64_t enumerated_peft_parameter_count(const EncoderSpec& spec, const PeftMethod& method) {
  ParameterStore store(false);
  ViTEncoder encoder(store, spec);
  return count_trainable(inject_peft(encoder, method), store);
}

}  // namespace peftseg
