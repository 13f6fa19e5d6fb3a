#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "peftseg/geo.hpp"

namespace peftseg {

/// Pixel position inside a window (row, col).
struct PixelPoint {
  std::int64_t row = 0;
  std::int64_t col = 0;
  bool operator==(const PixelPoint&) const = default;
};

struct PointPromptGrid {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<PixelPoint> points;  // row-major
};

/// dims x dims points at ((i + 0.5) * size / dims), truncated to whole pixels.
/// Throws ConfigError for dims < 1 or size < 1.
PointPromptGrid make_grid(std::int64_t window_size, std::int64_t dims);
PointPromptGrid make_grid(std::int64_t window_size, std::int64_t rows, std::int64_t cols);

/// Bit-packed binary mask.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::int64_t height, std::int64_t width);

  std::int64_t height() const { return h_; }
  std::int64_t width() const { return w_; }
  bool get(std::int64_t r, std::int64_t c) const;
  void set(std::int64_t r, std::int64_t c, bool v = true);
  std::int64_t count() const;
  bool empty() const { return count() == 0; }
  std::int64_t intersection(const BinaryMask& o) const;
  /// FNV-1a over the packed words.
  std::uint64_t hash() const;
  const std::vector<std::uint64_t>& words() const { return bits_; }

  bool operator==(const BinaryMask&) const = default;

 private:
  std::int64_t h_ = 0;
  std::int64_t w_ = 0;
  std::vector<std::uint64_t> bits_;
};

/// Intersection over union; 0 when both masks are empty. Throws ShapeError
/// when dimensions differ.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

struct CandidateMask {
  BinaryMask mask;
  double score = 0.0;
};

/// Strict ranking used by nms: higher score first, then smaller mask hash,
/// then lexicographically smaller packed words.
bool candidate_before(const CandidateMask& a, const CandidateMask& b);

/// Greedy suppression in candidate_before order: a candidate is dropped when
/// its IoU with an already kept mask exceeds iou_threshold.
std::vector<CandidateMask> nms(std::vector<CandidateMask> candidates, double iou_threshold);

struct MaskMatch {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double iou = 0.0;
};

struct MatchResult {
  std::vector<MaskMatch> pairs;  // one-to-one, every pair has IoU > 0
  std::int64_t tp = 0;           // pairs with IoU > tp_threshold
  std::int64_t fp = 0;
  std::int64_t fn = 0;
};

/// Greedy one-to-one matching by descending IoU (ties: lower pred index, then
/// lower gt index). A pair counts as a true positive only when its IoU is
/// strictly greater than tp_threshold.
MatchResult match_masks(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts,
                        double tp_threshold = 0.5);

/// 4-connected components of each class in a label mask, skipping class 0
/// and the nodata id 255. Ordered by first pixel in row-major order.
std::vector<BinaryMask> ground_truth_instances(std::span<const std::uint8_t> labels, std::int64_t height,
                                               std::int64_t width);

/// Promptable engine: one image at a time, then point prompts against it.
class PromptableSegmenter {
 public:
  virtual ~PromptableSegmenter() = default;
  virtual void set_window(const WindowSample& window) = 0;
  virtual std::vector<CandidateMask> segment(const PixelPoint& point) const = 0;
};

/// Stub engine that reads the label mask: a prompt returns the 4-connected
/// same-class component under the point (background included, nodata gives
/// nothing). Corruption c in [0, 1] removes floor(c * size) pixels of each
/// component, innermost last: pixels are dropped in order of increasing
/// city-block distance to the nearest pixel outside the component (the
/// window border counts as outside), ties by row-major index.
class StubSegmenter : public PromptableSegmenter {
 public:
  explicit StubSegmenter(double corruption = 0.0, double score = 0.95);

  void set_window(const WindowSample& window) override;
  std::vector<CandidateMask> segment(const PixelPoint& point) const override;

  std::size_t component_count() const { return masks_.size(); }

 private:
  double corruption_;
  double score_;
  std::int64_t h_ = 0;
  std::int64_t w_ = 0;
  std::vector<std::int32_t> component_;  // per pixel, -1 for nodata
  std::vector<BinaryMask> masks_;
};

struct ZeroShotConfig {
  std::int64_t grid_dims = 32;
  double score_threshold = 0.7;
  double nms_iou = 0.7;
  double match_iou = 0.5;
  double stub_corruption = 0.0;
  double stub_score = 0.95;

  void validate() const;
};

struct ZeroShotWindowResult {
  std::string window_id;
  bool skipped = false;
  std::string error;
  std::int64_t candidates = 0;
  std::int64_t after_filter = 0;
  std::int64_t after_nms = 0;
  std::int64_t gt_instances = 0;
  MatchResult match;
};

struct ZeroShotReport {
  /// Mean IoU over matched prediction/instance pairs across all windows.
  /// 0 when nothing matched.
  double miou = 0.0;
  /// Mean over ground-truth instances with unmatched instances counted as 0.
  double instance_miou = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t matched_pairs = 0;
  std::int64_t gt_instances = 0;
  std::int64_t windows = 0;
  std::int64_t skipped_windows = 0;
  std::vector<ZeroShotWindowResult> per_window;
};

/// Runs the grid-prompt protocol on each window: prompt, score filter
/// (score >= threshold), nms, match against ground-truth instances. A window
/// whose segmenter throws is skipped and recorded. Throws InputError for an
/// empty window list or when ids and samples differ in length.
ZeroShotReport zeroshot_miou(PromptableSegmenter& segmenter, const std::vector<WindowSample>& windows,
                             const std::vector<std::string>& window_ids, const ZeroShotConfig& cfg);

nlohmann::json to_json(const ZeroShotReport& r, const ZeroShotConfig& cfg);

}  // namespace peftseg
