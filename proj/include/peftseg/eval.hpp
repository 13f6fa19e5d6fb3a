#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "peftseg/geo.hpp"
#include "peftseg/model.hpp"

namespace peftseg {

/// counts[i * N + j] = pixels with ground truth i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 5);

  int num_classes() const { return n_; }
  std::int64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth * n_ + pred)]; }
  std::int64_t total() const;
  const std::vector<std::int64_t>& counts() const { return counts_; }

  void add(int truth, int pred, std::int64_t count = 1);
  void merge(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int n_;
  std::vector<std::int64_t> counts_;
};

/// Adds one count per pixel. Throws ShapeError on length mismatch and
/// LabelError on ids >= N.
ConfusionMatrix& accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target, ConfusionMatrix& cm);

struct MetricsReport {
  std::vector<double> per_class_iou;        // NaN for classes with an empty union
  std::vector<double> per_class_precision;  // NaN where TP + FP = 0
  std::vector<double> per_class_recall;     // NaN where TP + FN = 0
  std::vector<double> per_class_dice;
  double miou = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_dice = 0.0;
  double micro_dice = 0.0;
  std::vector<std::int64_t> pixel_counts;  // ground-truth pixels per class
  int excluded_classes = 0;                // empty-union classes left out of the means
};

/// Macro means skip undefined per-class values. Throws InputError on an empty
/// matrix.
MetricsReport metrics_from_confusion(const ConfusionMatrix& cm);

/// Per-pixel argmax over the class axis of logits [B,N,H,W] (ties go to the
/// lower id).
std::vector<std::uint8_t> predict_labels(const Tensor& logits);

/// One confusion matrix over all samples, evaluated in batches without
/// building a graph.
ConfusionMatrix confusion_over(const SegmentationModel& model, const std::vector<WindowSample>& samples,
                               std::int64_t batch_size = 4);
MetricsReport evaluate(const SegmentationModel& model, const std::vector<WindowSample>& samples,
                       std::int64_t batch_size = 4);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct AggregateReport {
  std::map<std::string, MeanStd> metrics;  // precision, recall, macro_dice, micro_dice, miou
  std::vector<MeanStd> per_class_iou;
  std::size_t runs = 0;
  bool single_run = false;
};

/// Mean and sample (n - 1) standard deviation per metric; std is 0 for a
/// single run and the flag is set.
AggregateReport aggregate_runs(const std::vector<MetricsReport>& reports);

std::string format_mean_std(const MeanStd& m);

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const AggregateReport& r);

struct TableRow {
  std::string method;
  std::int64_t trainable_params = 0;
  AggregateReport aggregate;
};

/// Plain-text table with one row per method: trainable parameters,
/// precision, recall, macro and micro Dice, mIoU (mean +/- std).
void write_results_table(std::ostream& os, const std::vector<TableRow>& rows);

/// Per-class IoU bar-chart data, one row per (method, class).
void write_per_class_csv(std::ostream& os, const std::vector<TableRow>& rows, const std::vector<std::string>& class_names);
/// Grouped bar chart of per-class IoU as a standalone SVG.
void write_per_class_svg(std::ostream& os, const std::vector<TableRow>& rows, const std::vector<std::string>& class_names);

}  // namespace peftseg
