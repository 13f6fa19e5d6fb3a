#include "peftseg/model.hpp"

#include "peftseg/errors.hpp"

namespace peftseg {

namespace {
constexpr double kMean[3] = {123.675, 116.28, 103.53};
constexpr double kStd[3] = {58.395, 57.12, 57.375};
}  // namespace

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  method.validate(encoder.embed_dim);
  if (encoder.neck_dim != decoder.token_dim)
    throw ConfigError("encoder neck_dim " + std::to_string(encoder.neck_dim) + " must equal decoder token_dim " +
                      std::to_string(decoder.token_dim));
  if (window_size < encoder.input_resolution || window_size % encoder.input_resolution != 0)
    throw ConfigError("window_size must be a multiple of the encoder input resolution");
}

SegmentationModel::SegmentationModel(const ModelConfig& config, std::uint64_t backbone_seed, std::uint64_t head_seed)
    : config_(config), store_(std::make_unique<ParameterStore>(true, backbone_seed, head_seed)) {
  config_.validate();
  encoder_ = std::make_unique<ViTEncoder>(*store_, config_.encoder);
  inject_peft(*encoder_, config_.method);
  decoder_ = std::make_unique<PromptlessDecoder>(*store_, config_.decoder);
  partition_ = TrainabilityPartition::from_store(*store_);
}

Tensor SegmentationModel::preprocess(const std::vector<const ImageU8*>& images) const {
  const auto r = config_.encoder.input_resolution;
  const auto win = config_.window_size;
  const auto f = win / r;
  const auto b = static_cast<std::int64_t>(images.size());
  std::vector<double> out(static_cast<std::size_t>(b * r * r * 3));
  const double inv = 1.0 / static_cast<double>(f * f);
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& img = *images[static_cast<std::size_t>(i)];
    if (img.height != win || img.width != win || img.channels != 3)
      throw ShapeError("preprocess: expected " + std::to_string(win) + "x" + std::to_string(win) + "x3 window, got " +
                       std::to_string(img.height) + "x" + std::to_string(img.width) + "x" + std::to_string(img.channels));
    for (std::int64_t y = 0; y < r; ++y)
      for (std::int64_t x = 0; x < r; ++x)
        for (std::int64_t c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (std::int64_t dy = 0; dy < f; ++dy)
            for (std::int64_t dx = 0; dx < f; ++dx) acc += img.at(y * f + dy, x * f + dx, c);
          out[static_cast<std::size_t>(((i * r + y) * r + x) * 3 + c)] = (acc * inv - kMean[c]) / kStd[c];
        }
  }
  return Tensor::from_data({b, r, r, 3}, std::move(out));
}

Tensor SegmentationModel::forward(const Tensor& images) const {
  return decoder_->decode(encoder_->forward(images), config_.window_size, config_.window_size);
}

void SegmentationModel::set_dense_embedding(bool on) {
  decoder_->toggle_dense_embedding(on);
  config_.decoder.use_dense_embedding = on;
  partition_ = TrainabilityPartition::from_store(*store_);
}

}  // namespace peftseg
