#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "peftseg/geo.hpp"
#include "peftseg/model.hpp"
#include "peftseg/tensor.hpp"

namespace peftseg {

struct OptimizerConfig {
  double base_lr = 0.005;
  double momentum = 0.9;
  double weight_decay = 0.001;

  void validate() const;
};

enum class DecayKind { cosine, step };

struct ScheduleConfig {
  double warmup_fraction = 0.1;
  double terminal_lr_ratio = 0.1;
  std::int64_t total_steps = 0;
  DecayKind decay = DecayKind::cosine;
  /// Step decay only: fractions of the post-warm-up span at which the rate
  /// is multiplied by terminal_lr_ratio.
  std::vector<double> step_milestones{0.5};

  std::int64_t warmup_steps() const;
  void validate() const;
};

/// Linear 0 -> base over the warm-up steps, then cosine (or step) decay to
/// base * terminal_lr_ratio at total_steps. Throws std::out_of_range outside
/// [0, total_steps].
double lr_at(std::int64_t step, const ScheduleConfig& schedule, const OptimizerConfig& opt);

struct LossConfig {
  std::vector<double> class_weights;  // empty = unit weights
  double dice_smoothing = 1.0;
  double lambda_ce = 1.0;
  double lambda_dice = 1.0;

  void validate(std::int64_t num_classes) const;
};

/// Pixel-weighted cross-entropy of logits [B,N,H,W] against class ids
/// (B*H*W values): sum w[y] * -log p_y / sum w[y].
Tensor weighted_ce(const Tensor& logits, std::span<const std::uint8_t> target, const std::vector<double>& weights);

/// 1 - mean_c (2 sum p_c y_c + eps) / (sum p_c + sum y_c + eps) over the batch.
Tensor dice_loss(const Tensor& logits, std::span<const std::uint8_t> target, double eps);

struct LossValue {
  Tensor total;
  double ce = 0.0;
  double dice = 0.0;
};

/// lambda_ce * CE + lambda_dice * Dice sharing one softmax pass.
LossValue segmentation_loss(const Tensor& logits, std::span<const std::uint8_t> target, const LossConfig& cfg);

/// Inverse pixel frequency normalised to mean 1. A class with no pixels gets
/// the largest weight among present classes and a warning.
std::vector<double> compute_class_weights(const std::vector<std::int64_t>& pixel_counts,
                                          std::vector<std::string>* warnings = nullptr);
std::vector<std::int64_t> class_pixel_counts(const std::vector<WindowSample>& samples, int num_classes);

/// SGD with momentum, weight decay folded into the gradient:
/// g += wd * p; buf = m * buf + g; p -= lr * buf.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, OptimizerConfig cfg);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> momentum_;
  OptimizerConfig cfg_;
};

struct RunConfig {
  std::int64_t epochs = 50;
  std::int64_t batch_size = 4;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool augment = true;

  void validate() const;
};

struct TrainConfig {
  OptimizerConfig optim;
  ScheduleConfig schedule;
  LossConfig loss;
  RunConfig run;
};

struct StepRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss_ce = 0.0;
  double loss_dice = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> log;
  double initial_loss = 0.0;  // mean over the first epoch
  double final_loss = 0.0;    // mean over the last epoch
  std::int64_t total_steps = 0;
};

/// Trains the model's trainable parameters on pre-extracted samples. Batch
/// order and augmentation are drawn from `seed`. Each record is also written
/// to `log_jsonl` when given. Throws NumericError on a non-finite loss after
/// writing a diagnostic snapshot next to `snapshot_path` (if non-empty).
TrainResult train(SegmentationModel& model, const std::vector<WindowSample>& samples, TrainConfig cfg,
                  std::uint64_t seed, std::ostream* log_jsonl = nullptr,
                  const std::filesystem::path& snapshot_path = {});

/// SHA-256 over every parameter path and value in store order.
std::string parameter_hash(const ParameterStore& store);

/// Binary checkpoint: magic, JSON header length, JSON header (caller
/// metadata plus the parameter table), then raw little-endian doubles.
void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store, const nlohmann::json& meta);
/// Loads values into a store with the same parameter table and returns the
/// header metadata. Throws IntegrityError on any table mismatch.
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParameterStore& store);
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace peftseg
