#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "peftseg/decoder.hpp"
#include "peftseg/encoder.hpp"
#include "peftseg/image.hpp"
#include "peftseg/peft.hpp"

namespace peftseg {

struct ModelConfig {
  EncoderSpec encoder = EncoderSpec::tiny();
  DecoderConfig decoder;
  PeftMethod method;
  std::int64_t window_size = 512;

  void validate() const;
};

/// Frozen encoder + injected PEFT modules + promptless decoder, all held in
/// one parameter store. Logits come back at window resolution.
class SegmentationModel {
 public:
  SegmentationModel(const ModelConfig& config, std::uint64_t backbone_seed, std::uint64_t head_seed);
  SegmentationModel(const SegmentationModel&) = delete;
  SegmentationModel& operator=(const SegmentationModel&) = delete;

  /// Box-downsamples window images to the encoder resolution and normalises
  /// them: [B, R, R, 3].
  Tensor preprocess(const std::vector<const ImageU8*>& images) const;

  /// images [B, R, R, 3] -> logits [B, N, window, window].
  Tensor forward(const Tensor& images) const;
  Tensor forward(const std::vector<const ImageU8*>& images) const { return forward(preprocess(images)); }

  /// Switches the no-mask embedding and refreshes the partition.
  void set_dense_embedding(bool on);

  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  const TrainabilityPartition& partition() const { return partition_; }
  const ViTEncoder& encoder() const { return *encoder_; }
  ViTEncoder& encoder() { return *encoder_; }
  const PromptlessDecoder& decoder() const { return *decoder_; }

 private:
  ModelConfig config_;
  std::unique_ptr<ParameterStore> store_;
  std::unique_ptr<ViTEncoder> encoder_;
  std::unique_ptr<PromptlessDecoder> decoder_;
  TrainabilityPartition partition_;
};

}  // namespace peftseg
