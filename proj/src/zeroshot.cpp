#include "peftseg/zeroshot.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <numeric>

#include "peftseg/errors.hpp"
#include "peftseg/params.hpp"

namespace peftseg {

PointPromptGrid make_grid(std::int64_t window_size, std::int64_t dims) { return make_grid(window_size, dims, dims); }

PointPromptGrid make_grid(std::int64_t window_size, std::int64_t rows, std::int64_t cols) {
  if (window_size < 1) throw ConfigError("make_grid: window size must be positive, got " + std::to_string(window_size));
  if (rows < 1 || cols < 1)
    throw ConfigError("make_grid: grid dims must be >= 1, got " + std::to_string(rows) + "x" + std::to_string(cols));
  PointPromptGrid g{rows, cols, {}};
  g.points.reserve(static_cast<std::size_t>(rows * cols));
  auto at = [&](std::int64_t i, std::int64_t n) {
    return static_cast<std::int64_t>(std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(window_size) /
                                                static_cast<double>(n)));
  };
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) g.points.push_back({at(i, rows), at(j, cols)});
  return g;
}

BinaryMask::BinaryMask(std::int64_t height, std::int64_t width)
    : h_(height), w_(width), bits_(static_cast<std::size_t>((height * width + 63) / 64), 0) {
  if (height < 0 || width < 0) throw ShapeError("BinaryMask: negative dimensions");
}

bool BinaryMask::get(std::int64_t r, std::int64_t c) const {
  const auto i = static_cast<std::uint64_t>(r * w_ + c);
  return (bits_[i / 64] >> (i % 64)) & 1U;
}

void BinaryMask::set(std::int64_t r, std::int64_t c, bool v) {
  const auto i = static_cast<std::uint64_t>(r * w_ + c);
  const std::uint64_t bit = std::uint64_t{1} << (i % 64);
  if (v)
    bits_[i / 64] |= bit;
  else
    bits_[i / 64] &= ~bit;
}

std::int64_t BinaryMask::count() const {
  std::int64_t n = 0;
  for (auto w : bits_) n += std::popcount(w);
  return n;
}

std::int64_t BinaryMask::intersection(const BinaryMask& o) const {
  if (h_ != o.h_ || w_ != o.w_) throw ShapeError("BinaryMask: dimension mismatch");
  std::int64_t n = 0;
  for (std::size_t i = 0; i < bits_.size(); ++i) n += std::popcount(bits_[i] & o.bits_[i]);
  return n;
}

std::uint64_t BinaryMask::hash() const { return fnv1a64(bits_.data(), bits_.size() * sizeof(std::uint64_t)); }

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  const auto inter = a.intersection(b);
  const auto uni = a.count() + b.count() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

bool candidate_before(const CandidateMask& a, const CandidateMask& b) {
  if (a.score != b.score) return a.score > b.score;
  const auto ha = a.mask.hash(), hb = b.mask.hash();
  if (ha != hb) return ha < hb;
  return a.mask.words() < b.mask.words();
}

std::vector<CandidateMask> nms(std::vector<CandidateMask> candidates, double iou_threshold) {
  // Hash once per candidate instead of inside the comparator.
  std::vector<std::uint64_t> hashes(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) hashes[i] = candidates[i].mask.hash();
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const auto& a = candidates[i];
    const auto& b = candidates[j];
    if (a.score != b.score) return a.score > b.score;
    if (hashes[i] != hashes[j]) return hashes[i] < hashes[j];
    return a.mask.words() < b.mask.words();
  });
  std::vector<CandidateMask> kept;
  std::vector<std::int64_t> kept_counts;
  for (auto i : order) {
    auto& c = candidates[i];
    const auto n = c.mask.count();
    bool drop = false;
    for (std::size_t k = 0; k < kept.size() && !drop; ++k) {
      const auto inter = c.mask.intersection(kept[k].mask);
      const auto uni = n + kept_counts[k] - inter;
      const double iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
      drop = iou > iou_threshold;
    }
    if (!drop) {
      kept.push_back(std::move(c));
      kept_counts.push_back(n);
    }
  }
  return kept;
}

MatchResult match_masks(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts, double tp_threshold) {
  struct Pair {
    std::size_t p, g;
    double iou;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = mask_iou(preds[p], gts[g]);
      if (iou > 0.0) pairs.push_back({p, g, iou});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  std::vector<bool> pred_used(preds.size(), false), gt_used(gts.size(), false);
  MatchResult r;
  for (const auto& pr : pairs) {
    if (pred_used[pr.p] || gt_used[pr.g]) continue;
    pred_used[pr.p] = gt_used[pr.g] = true;
    r.pairs.push_back({pr.p, pr.g, pr.iou});
    if (pr.iou > tp_threshold) ++r.tp;
  }
  r.fp = static_cast<std::int64_t>(preds.size()) - r.tp;
  r.fn = static_cast<std::int64_t>(gts.size()) - r.tp;
  return r;
}

namespace {

// Labels 4-connected regions of equal value; `skip` values stay -1.
std::vector<std::int32_t> label_components(std::span<const std::uint8_t> labels, std::int64_t h, std::int64_t w,
                                           std::initializer_list<std::uint8_t> skip, std::int32_t& count) {
  std::vector<std::int32_t> comp(static_cast<std::size_t>(h * w), -1);
  count = 0;
  std::vector<std::int64_t> stack;
  for (std::int64_t start = 0; start < h * w; ++start) {
    const auto v = labels[static_cast<std::size_t>(start)];
    if (comp[static_cast<std::size_t>(start)] >= 0 || std::find(skip.begin(), skip.end(), v) != skip.end()) continue;
    const std::int32_t id = count++;
    comp[static_cast<std::size_t>(start)] = id;
    stack.assign(1, start);
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      const auto r = i / w, c = i % w;
      const std::int64_t nb[4] = {r > 0 ? i - w : -1, r + 1 < h ? i + w : -1, c > 0 ? i - 1 : -1, c + 1 < w ? i + 1 : -1};
      for (auto j : nb) {
        if (j < 0) continue;
        const auto ju = static_cast<std::size_t>(j);
        if (comp[ju] < 0 && labels[ju] == v) {
          comp[ju] = id;
          stack.push_back(j);
        }
      }
    }
  }
  return comp;
}

void check_label_span(std::span<const std::uint8_t> labels, std::int64_t h, std::int64_t w) {
  if (h < 0 || w < 0 || static_cast<std::int64_t>(labels.size()) != h * w)
    throw ShapeError("label mask has " + std::to_string(labels.size()) + " values, expected " + std::to_string(h) + "x" +
                     std::to_string(w));
}

}  // namespace

std::vector<BinaryMask> ground_truth_instances(std::span<const std::uint8_t> labels, std::int64_t height,
                                               std::int64_t width) {
  check_label_span(labels, height, width);
  std::int32_t n = 0;
  const auto comp = label_components(labels, height, width, {0, 255}, n);
  std::vector<BinaryMask> out(static_cast<std::size_t>(n), BinaryMask(height, width));
  for (std::int64_t i = 0; i < height * width; ++i)
    if (const auto id = comp[static_cast<std::size_t>(i)]; id >= 0) out[static_cast<std::size_t>(id)].set(i / width, i % width);
  return out;
}

StubSegmenter::StubSegmenter(double corruption, double score) : corruption_(corruption), score_(score) {
  if (!(corruption >= 0.0 && corruption <= 1.0))
    throw ConfigError("zeroshot.stub_corruption must be in [0, 1], got " + std::to_string(corruption));
  if (!(score >= 0.0 && score <= 1.0)) throw ConfigError("zeroshot.stub_score must be in [0, 1], got " + std::to_string(score));
}

void StubSegmenter::set_window(const WindowSample& window) {
  h_ = window.mask.height;
  w_ = window.mask.width;
  const std::span<const std::uint8_t> labels(window.mask.data);
  check_label_span(labels, h_, w_);
  std::int32_t n = 0;
  component_ = label_components(labels, h_, w_, {255}, n);
  const auto npx = static_cast<std::size_t>(h_ * w_);

  // City-block distance to the nearest pixel of another component or outside
  // the window, by multi-source BFS from the component borders.
  std::vector<std::int64_t> dist(npx, -1);
  std::deque<std::int64_t> queue;
  for (std::int64_t i = 0; i < h_ * w_; ++i) {
    const auto id = component_[static_cast<std::size_t>(i)];
    if (id < 0) continue;
    const auto r = i / w_, c = i % w_;
    const bool border = r == 0 || c == 0 || r == h_ - 1 || c == w_ - 1 || component_[static_cast<std::size_t>(i - w_)] != id ||
                        component_[static_cast<std::size_t>(i + w_)] != id || component_[static_cast<std::size_t>(i - 1)] != id ||
                        component_[static_cast<std::size_t>(i + 1)] != id;
    if (border) {
      dist[static_cast<std::size_t>(i)] = 1;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const auto i = queue.front();
    queue.pop_front();
    const auto r = i / w_, c = i % w_;
    const auto id = component_[static_cast<std::size_t>(i)];
    const std::int64_t nb[4] = {r > 0 ? i - w_ : -1, r + 1 < h_ ? i + w_ : -1, c > 0 ? i - 1 : -1, c + 1 < w_ ? i + 1 : -1};
    for (auto j : nb) {
      if (j < 0) continue;
      const auto ju = static_cast<std::size_t>(j);
      if (dist[ju] < 0 && component_[ju] == id) {
        dist[ju] = dist[static_cast<std::size_t>(i)] + 1;
        queue.push_back(j);
      }
    }
  }

  std::vector<std::vector<std::int64_t>> pixels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < h_ * w_; ++i)
    if (const auto id = component_[static_cast<std::size_t>(i)]; id >= 0) pixels[static_cast<std::size_t>(id)].push_back(i);
  masks_.assign(static_cast<std::size_t>(n), BinaryMask(h_, w_));
  for (std::size_t id = 0; id < pixels.size(); ++id) {
    auto& px = pixels[id];
    const auto drop = static_cast<std::size_t>(std::floor(corruption_ * static_cast<double>(px.size())));
    // Row-major order already breaks ties; stable sort keeps it.
    std::stable_sort(px.begin(), px.end(),
                     [&](std::int64_t a, std::int64_t b) { return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)]; });
    for (std::size_t k = drop; k < px.size(); ++k) masks_[id].set(px[k] / w_, px[k] % w_);
  }
}

std::vector<CandidateMask> StubSegmenter::segment(const PixelPoint& point) const {
  if (point.row < 0 || point.col < 0 || point.row >= h_ || point.col >= w_)
    throw InputError("prompt (" + std::to_string(point.row) + ", " + std::to_string(point.col) + ") outside the " +
                     std::to_string(h_) + "x" + std::to_string(w_) + " window");
  const auto id = component_[static_cast<std::size_t>(point.row * w_ + point.col)];
  if (id < 0) return {};
  return {CandidateMask{masks_[static_cast<std::size_t>(id)], score_}};
}

void ZeroShotConfig::validate() const {
  if (grid_dims < 1) throw ConfigError("zeroshot.grid_dims must be >= 1, got " + std::to_string(grid_dims));
  auto unit = [](double v, const char* key) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(key) + " must be in [0, 1], got " + std::to_string(v));
  };
  unit(score_threshold, "zeroshot.score_threshold");
  unit(nms_iou, "zeroshot.nms_iou");
  unit(match_iou, "zeroshot.match_iou");
  unit(stub_corruption, "zeroshot.stub_corruption");
  unit(stub_score, "zeroshot.stub_score");
}

ZeroShotReport zeroshot_miou(PromptableSegmenter& segmenter, const std::vector<WindowSample>& windows,
                             const std::vector<std::string>& window_ids, const ZeroShotConfig& cfg) {
  cfg.validate();
  if (windows.empty()) throw InputError("zeroshot: the test manifest has no windows");
  if (windows.size() != window_ids.size())
    throw InputError("zeroshot: " + std::to_string(windows.size()) + " windows but " + std::to_string(window_ids.size()) + " ids");
  ZeroShotReport rep;
  double matched_sum = 0.0;
  for (std::size_t wi = 0; wi < windows.size(); ++wi) {
    const auto& win = windows[wi];
    ZeroShotWindowResult res;
    res.window_id = window_ids[wi];
    const auto gts = ground_truth_instances(win.mask.data, win.mask.height, win.mask.width);
    res.gt_instances = static_cast<std::int64_t>(gts.size());
    std::vector<CandidateMask> cands;
    try {
      segmenter.set_window(win);
      const auto grid = make_grid(win.mask.height, cfg.grid_dims, cfg.grid_dims);
      for (const auto& p : grid.points)
        for (auto& c : segmenter.segment(p)) cands.push_back(std::move(c));
    } catch (const std::exception& e) {
      res.skipped = true;
      res.error = e.what();
      ++rep.skipped_windows;
      rep.per_window.push_back(std::move(res));
      continue;
    }
    res.candidates = static_cast<std::int64_t>(cands.size());
    std::erase_if(cands, [&](const CandidateMask& c) { return c.score < cfg.score_threshold || c.mask.empty(); });
    res.after_filter = static_cast<std::int64_t>(cands.size());
    auto kept = nms(std::move(cands), cfg.nms_iou);
    res.after_nms = static_cast<std::int64_t>(kept.size());
    std::vector<BinaryMask> preds;
    preds.reserve(kept.size());
    for (auto& k : kept) preds.push_back(std::move(k.mask));
    res.match = match_masks(preds, gts, cfg.match_iou);

    for (const auto& m : res.match.pairs) matched_sum += m.iou;
    rep.matched_pairs += static_cast<std::int64_t>(res.match.pairs.size());
    rep.gt_instances += res.gt_instances;
    rep.tp += res.match.tp;
    rep.fp += res.match.fp;
    rep.fn += res.match.fn;
    ++rep.windows;
    rep.per_window.push_back(std::move(res));
  }
  rep.miou = rep.matched_pairs > 0 ? matched_sum / static_cast<double>(rep.matched_pairs) : 0.0;
  rep.instance_miou = rep.gt_instances > 0 ? matched_sum / static_cast<double>(rep.gt_instances) : 0.0;
  return rep;
}

nlohmann::json to_json(const ZeroShotReport& r, const ZeroShotConfig& cfg) {
  nlohmann::json j;
  j["metric_note"] =
      "class-agnostic: miou is the mean IoU over matched prediction/instance pairs; instance_miou counts unmatched "
      "ground-truth instances as 0";
  j["miou"] = r.miou;
  j["instance_miou"] = r.instance_miou;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  j["matched_pairs"] = r.matched_pairs;
  j["gt_instances"] = r.gt_instances;
  j["windows"] = r.windows;
  j["skipped_windows"] = r.skipped_windows;
  j["params"] = {{"grid_dims", cfg.grid_dims},     {"score_threshold", cfg.score_threshold},
                 {"nms_iou", cfg.nms_iou},         {"match_iou", cfg.match_iou},
                 {"stub_corruption", cfg.stub_corruption}, {"stub_score", cfg.stub_score}};
  auto& pw = j["per_window"] = nlohmann::json::array();
  for (const auto& w : r.per_window) {
    nlohmann::json e{{"id", w.window_id}, {"skipped", w.skipped}};
    if (w.skipped) {
      e["error"] = w.error;
    } else {
      e["candidates"] = w.candidates;
      e["after_filter"] = w.after_filter;
      e["after_nms"] = w.after_nms;
      e["gt_instances"] = w.gt_instances;
      e["tp"] = w.match.tp;
      e["fp"] = w.match.fp;
      e["fn"] = w.match.fn;
    }
    pw.push_back(std::move(e));
  }
  return j;
}

}  // namespace peftseg
