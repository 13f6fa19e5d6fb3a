#include "peftseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "peftseg/errors.hpp"

namespace peftseg {

using nlohmann::json;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_defined(const std::vector<double>& v) {
  double s = 0.0;
  int n = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  return n ? s / n : 0.0;
}
}  // namespace

ConfusionMatrix::ConfusionMatrix(int num_classes) : n_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

void ConfusionMatrix::add(int truth, int pred, std::int64_t count) {
  if (truth < 0 || truth >= n_ || pred < 0 || pred >= n_)
    throw LabelError("confusion entry (" + std::to_string(truth) + ", " + std::to_string(pred) + ") outside " +
                     std::to_string(n_) + " classes");
  counts_[static_cast<std::size_t>(truth * n_ + pred)] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ShapeError("cannot merge confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

ConfusionMatrix& accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target, ConfusionMatrix& cm) {
  if (pred.size() != target.size())
    throw ShapeError("accumulate: prediction has " + std::to_string(pred.size()) + " pixels, target " +
                     std::to_string(target.size()));
  const int n = cm.num_classes();
  std::vector<std::int64_t> local(static_cast<std::size_t>(n * n), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= n || target[i] >= n)
      throw LabelError("accumulate: pixel " + std::to_string(i) + " has id outside " + std::to_string(n) + " classes");
    ++local[static_cast<std::size_t>(target[i] * n + pred[i])];
  }
  for (int t = 0; t < n; ++t)
    for (int p = 0; p < n; ++p)
      if (auto c = local[static_cast<std::size_t>(t * n + p)]) cm.add(t, p, c);
  return cm;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const int n = cm.num_classes();
  if (cm.total() == 0) throw InputError("metrics: confusion matrix is empty");
  MetricsReport r;
  r.per_class_iou.assign(static_cast<std::size_t>(n), kNaN);
  r.per_class_precision.assign(static_cast<std::size_t>(n), kNaN);
  r.per_class_recall.assign(static_cast<std::size_t>(n), kNaN);
  r.per_class_dice.assign(static_cast<std::size_t>(n), kNaN);
  r.pixel_counts.assign(static_cast<std::size_t>(n), 0);
  std::int64_t tp_sum = 0, fp_sum = 0, fn_sum = 0;
  for (int c = 0; c < n; ++c) {
    const auto tp = cm.at(c, c);
    std::int64_t fp = 0, fn = 0;
    for (int k = 0; k < n; ++k) {
      if (k == c) continue;
      fp += cm.at(k, c);
      fn += cm.at(c, k);
    }
    tp_sum += tp;
    fp_sum += fp;
    fn_sum += fn;
    r.pixel_counts[static_cast<std::size_t>(c)] = tp + fn;
    const auto u = static_cast<std::size_t>(c);
    if (tp + fp + fn == 0) {
      ++r.excluded_classes;
      continue;
    }
    r.per_class_iou[u] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    r.per_class_dice[u] = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    if (tp + fp > 0) r.per_class_precision[u] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) r.per_class_recall[u] = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  r.miou = mean_defined(r.per_class_iou);
  r.macro_precision = mean_defined(r.per_class_precision);
  r.macro_recall = mean_defined(r.per_class_recall);
  r.macro_dice = mean_defined(r.per_class_dice);
  r.micro_dice = static_cast<double>(2 * tp_sum) / static_cast<double>(2 * tp_sum + fp_sum + fn_sum);
  return r;
}

std::vector<std::uint8_t> predict_labels(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("predict_labels: expected [B,N,H,W], got " + shape_str(logits.shape()));
  const auto b = logits.dim(0), n = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  const auto z = logits.data();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(b * hw));
#pragma omp parallel for schedule(static)
  for (std::int64_t q = 0; q < b * hw; ++q) {
    const auto bi = q / hw, i = q % hw;
    std::int64_t best = 0;
    double bv = z[static_cast<std::size_t>(bi * n * hw + i)];
    for (std::int64_t c = 1; c < n; ++c) {
      const double v = z[static_cast<std::size_t>(bi * n * hw + c * hw + i)];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    out[static_cast<std::size_t>(q)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

ConfusionMatrix confusion_over(const SegmentationModel& model, const std::vector<WindowSample>& samples,
                               std::int64_t batch_size) {
  if (samples.empty()) throw InputError("evaluate: no test windows");
  NoGradGuard no_grad;
  ConfusionMatrix cm(static_cast<int>(model.config().decoder.num_classes));
  const auto n = static_cast<std::int64_t>(samples.size());
  for (std::int64_t s = 0; s < n; s += batch_size) {
    std::vector<const ImageU8*> imgs;
    std::vector<std::uint8_t> target;
    for (auto i = s; i < std::min(n, s + batch_size); ++i) {
      imgs.push_back(&samples[static_cast<std::size_t>(i)].image);
      const auto& m = samples[static_cast<std::size_t>(i)].mask.data;
      target.insert(target.end(), m.begin(), m.end());
    }
    const auto pred = predict_labels(model.forward(imgs));
    peftseg::accumulate(pred, target, cm);
  }
  return cm;
}

MetricsReport evaluate(const SegmentationModel& model, const std::vector<WindowSample>& samples, std::int64_t batch_size) {
  return metrics_from_confusion(confusion_over(model, samples, batch_size));
}

// ---------------------------------------------------------------- aggregation

namespace {

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  std::vector<double> d;
  for (double x : v)
    if (!std::isnan(x)) d.push_back(x);
  if (d.empty()) return {kNaN, kNaN};
  // Identical runs report their value and an exact zero spread.
  if (std::all_of(d.begin(), d.end(), [&](double x) { return x == d.front(); })) return {d.front(), 0.0};
  m.mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  if (d.size() > 1) {
    double ss = 0.0;
    for (double x : d) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(d.size() - 1));
  }
  return m;
}

}  // namespace

AggregateReport aggregate_runs(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw InputError("aggregate_runs: no reports");
  AggregateReport a;
  a.runs = reports.size();
  a.single_run = reports.size() == 1;
  auto collect = [&](auto field) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(field(r));
    return mean_std(v);
  };
  a.metrics["precision"] = collect([](const MetricsReport& r) { return r.macro_precision; });
  a.metrics["recall"] = collect([](const MetricsReport& r) { return r.macro_recall; });
  a.metrics["macro_dice"] = collect([](const MetricsReport& r) { return r.macro_dice; });
  a.metrics["micro_dice"] = collect([](const MetricsReport& r) { return r.micro_dice; });
  a.metrics["miou"] = collect([](const MetricsReport& r) { return r.miou; });
  const auto n = reports.front().per_class_iou.size();
  for (std::size_t c = 0; c < n; ++c)
    a.per_class_iou.push_back(collect([c](const MetricsReport& r) { return r.per_class_iou.at(c); }));
  return a;
}

std::string format_mean_std(const MeanStd& m) {
  if (std::isnan(m.mean)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", m.mean, m.std);
  return buf;
}

namespace {
json num(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}
}  // namespace

json to_json(const MetricsReport& r) {
  return {{"per_class_iou", nums(r.per_class_iou)},
          {"per_class_precision", nums(r.per_class_precision)},
          {"per_class_recall", nums(r.per_class_recall)},
          {"per_class_dice", nums(r.per_class_dice)},
          {"miou", r.miou},
          {"macro_precision", r.macro_precision},
          {"macro_recall", r.macro_recall},
          {"macro_dice", r.macro_dice},
          {"micro_dice", r.micro_dice},
          {"pixel_counts", r.pixel_counts},
          {"excluded_classes", r.excluded_classes}};
}

json to_json(const AggregateReport& r) {
  json m = json::object();
  for (const auto& [k, v] : r.metrics) m[k] = {{"mean", num(v.mean)}, {"std", num(v.std)}};
  json pc = json::array();
  for (const auto& v : r.per_class_iou) pc.push_back({{"mean", num(v.mean)}, {"std", num(v.std)}});
  return {{"metrics", m}, {"per_class_iou", pc}, {"runs", r.runs}, {"single_run", r.single_run}};
}

void write_results_table(std::ostream& os, const std::vector<TableRow>& rows) {
  const char* cols[] = {"Precision", "Recall", "Dice (macro)", "Dice (micro)", "mIoU"};
  const char* keys[] = {"precision", "recall", "macro_dice", "micro_dice", "miou"};
  std::size_t name_w = 6;
  for (const auto& r : rows) name_w = std::max(name_w, r.method.size());
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "Method" << std::setw(18) << "Trainable Params";
  for (auto c : cols) os << std::setw(17) << c;
  os << '\n' << std::string(name_w + 2 + 18 + 17 * 5, '-') << '\n';
  for (const auto& r : rows) {
    std::ostringstream p;
    p << std::fixed << std::setprecision(2) << static_cast<double>(r.trainable_params) / 1e6 << "M";
    os << std::setw(static_cast<int>(name_w) + 2) << r.method << std::setw(18) << p.str();
    for (auto k : keys) {
      auto it = r.aggregate.metrics.find(k);
      const auto s = it == r.aggregate.metrics.end() ? std::string("n/a") : format_mean_std(it->second);
      // The plus-minus sign is two bytes in UTF-8 but one column wide.
      os << s << std::string(s.size() < 18 ? 18 - s.size() : 1, ' ');
    }
    if (r.aggregate.single_run) os << "(single run)";
    os << '\n';
  }
}

void write_per_class_csv(std::ostream& os, const std::vector<TableRow>& rows, const std::vector<std::string>& class_names) {
  os << "method,class,iou_mean,iou_std,runs\n";
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.aggregate.per_class_iou.size(); ++c) {
      const auto& v = r.aggregate.per_class_iou[c];
      os << r.method << ',' << (c < class_names.size() ? class_names[c] : std::to_string(c)) << ',';
      if (std::isnan(v.mean)) os << ",,";
      else os << std::setprecision(6) << v.mean << ',' << v.std << ',';
      os << r.aggregate.runs << '\n';
    }
}

void write_per_class_svg(std::ostream& os, const std::vector<TableRow>& rows, const std::vector<std::string>& class_names) {
  static const char* palette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7"};
  const std::size_t nc = class_names.size(), nm = std::max<std::size_t>(rows.size(), 1);
  const double left = 50, top = 30, plot_h = 260, group_w = 40.0 + 22.0 * static_cast<double>(nm);
  const double width = left + group_w * static_cast<double>(nc) + 180, height = top + plot_h + 60;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">Per-class IoU</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + plot_h * (1.0 - t / 4.0);
    os << "<line x1=\"" << left << "\" x2=\"" << left + group_w * static_cast<double>(nc) << "\" y1=\"" << y << "\" y2=\"" << y
       << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 30 << "\" y=\"" << y + 4 << "\">" << std::fixed << std::setprecision(2)
       << t / 4.0 << "</text>\n";
  }
  for (std::size_t c = 0; c < nc; ++c) {
    const double gx = left + group_w * static_cast<double>(c) + 20;
    for (std::size_t m = 0; m < rows.size(); ++m) {
      const auto& v = c < rows[m].aggregate.per_class_iou.size() ? rows[m].aggregate.per_class_iou[c] : MeanStd{kNaN, kNaN};
      const double val = std::isnan(v.mean) ? 0.0 : v.mean;
      const double h = plot_h * val, x = gx + 22.0 * static_cast<double>(m);
      os << "<rect x=\"" << x << "\" y=\"" << top + plot_h - h << "\" width=\"18\" height=\"" << h << "\" fill=\""
         << palette[m % 8] << "\"/>\n";
      if (!std::isnan(v.std) && v.std > 0)
        os << "<line x1=\"" << x + 9 << "\" x2=\"" << x + 9 << "\" y1=\"" << top + plot_h - plot_h * (val + v.std)
           << "\" y2=\"" << top + plot_h - plot_h * std::max(0.0, val - v.std) << "\" stroke=\"#333\"/>\n";
    }
    os << "<text x=\"" << gx << "\" y=\"" << top + plot_h + 16 << "\">" << class_names[c] << "</text>\n";
  }
  for (std::size_t m = 0; m < rows.size(); ++m) {
    const double y = top + 14.0 * static_cast<double>(m);
    const double x = left + group_w * static_cast<double>(nc) + 20;
    os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\"" << palette[m % 8] << "\"/>\n<text x=\""
       << x + 14 << "\" y=\"" << y + 9 << "\">" << rows[m].method << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace peftseg
