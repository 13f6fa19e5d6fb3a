#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>

#include "peftseg/encoder.hpp"
#include "peftseg/layers.hpp"
#include "peftseg/params.hpp"

namespace peftseg {

enum class LoraTarget { query, key, value, output };

LoraTarget lora_target_from_name(const std::string& name);
std::string lora_target_name(LoraTarget t);

struct LoRAConfig {
  std::int64_t rank = 4;
  double alpha = 4.0;  // alpha = r gives scale 1
  std::set<LoraTarget> targets{LoraTarget::query, LoraTarget::value};
  double a_init_std = 0.01;  // B always starts at zero

  double scale() const { return alpha / static_cast<double>(rank); }
  void validate(std::int64_t embed_dim) const;
};

enum class AdapterPlacement { serial_post_attention, parallel_mlp };

struct AdapterConfig {
  std::int64_t bottleneck = 32;
  double scale = 0.1;
  Activation activation = Activation::gelu;
  bool zero_init_up = true;

  void validate(std::int64_t embed_dim) const;
};

enum class PeftKind { adapter_h, adapter_l, lora, decoder_only };

PeftKind peft_kind_from_name(const std::string& name);
std::string peft_kind_name(PeftKind kind);
/// Display label used in report tables ("AdapterH", "LoRA", ...).
std::string peft_kind_label(PeftKind kind);

/// adapter_h: serial adapter on the attention output plus one parallel to the
/// MLP in every block. adapter_l: the parallel adapter only. lora: low-rank
/// updates on the targeted attention projections. decoder_only: nothing.
struct PeftMethod {
  PeftKind kind = PeftKind::decoder_only;
  std::optional<AdapterConfig> adapter;
  std::optional<LoRAConfig> lora;

  /// Method with the default configuration for its kind.
  static PeftMethod of(PeftKind kind);
  void validate(std::int64_t embed_dim) const;
};

/// Adds the method's modules to every encoder block as trainable parameters
/// and returns the partition of the encoder's store. Encoder base weights stay
/// frozen. Throws ConfigError on a second injection.
TrainabilityPartition inject_peft(ViTEncoder& encoder, const PeftMethod& method);

/// Closed-form count of parameters a method adds to an encoder.
std::int64_t peft_parameter_count(const EncoderSpec& spec, const PeftMethod& method);

/// Builds a shape-only encoder, injects, and counts what the partition marks
/// trainable. Used to cross-check the closed form at full scale.
std::int64_t enumerated_peft_parameter_count(const EncoderSpec& spec, const PeftMethod& method);

}  // namespace peftseg
