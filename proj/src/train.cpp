#include "peftseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "peftseg/errors.hpp"
#include "peftseg/hash.hpp"

namespace peftseg {

using nlohmann::json;

void OptimizerConfig::validate() const {
  if (!(base_lr > 0)) throw ConfigError("optim.base_lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("optim.momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("optim.weight_decay must be >= 0");
}

std::int64_t ScheduleConfig::warmup_steps() const {
  return static_cast<std::int64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
}

void ScheduleConfig::validate() const {
  if (!(warmup_fraction > 0 && warmup_fraction < 1)) throw ConfigError("schedule.warmup_fraction must be in (0, 1)");
  if (!(terminal_lr_ratio > 0 && terminal_lr_ratio <= 1)) throw ConfigError("schedule.terminal_lr_ratio must be in (0, 1]");
  for (double m : step_milestones)
    if (!(m > 0 && m < 1)) throw ConfigError("schedule.step_milestones must lie in (0, 1)");
}

double lr_at(std::int64_t step, const ScheduleConfig& schedule, const OptimizerConfig& opt) {
  const auto total = schedule.total_steps;
  if (total < 1) throw std::out_of_range("lr_at: schedule has no steps");
  if (step < 0 || step > total)
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  const auto warm = std::max<std::int64_t>(schedule.warmup_steps(), 1);
  const double base = opt.base_lr;
  if (step <= warm) return base * static_cast<double>(step) / static_cast<double>(warm);
  const double lo = base * schedule.terminal_lr_ratio;
  const double t = static_cast<double>(step - warm) / static_cast<double>(std::max<std::int64_t>(total - warm, 1));
  if (schedule.decay == DecayKind::step) {
    double lr = base;
    for (double m : schedule.step_milestones)
      if (t >= m) lr *= schedule.terminal_lr_ratio;
    return std::max(lr, lo);
  }
  return lo + 0.5 * (base - lo) * (1.0 + std::cos(std::numbers::pi * t));
}

void LossConfig::validate(std::int64_t num_classes) const {
  if (!class_weights.empty()) {
    if (static_cast<std::int64_t>(class_weights.size()) != num_classes)
      throw ConfigError("loss.class_weights needs " + std::to_string(num_classes) + " entries");
    for (double w : class_weights)
      if (!(w > 0)) throw ConfigError("loss.class_weights must be positive");
  }
  if (!(dice_smoothing > 0)) throw ConfigError("loss.dice_smoothing must be > 0");
  if (!(lambda_ce >= 0 && lambda_dice >= 0)) throw ConfigError("loss lambdas must be >= 0");
}

// ---------------------------------------------------------------- losses

namespace {

struct SoftmaxPlanes {
  std::int64_t b = 0, n = 0, hw = 0;
  std::vector<double> p;  // same layout as logits
};

SoftmaxPlanes channel_softmax(const Tensor& logits, std::span<const std::uint8_t> target) {
  if (logits.rank() != 4) throw ShapeError("loss: logits must be [B,N,H,W], got " + shape_str(logits.shape()));
  SoftmaxPlanes s;
  s.b = logits.dim(0);
  s.n = logits.dim(1);
  s.hw = logits.dim(2) * logits.dim(3);
  if (static_cast<std::int64_t>(target.size()) != s.b * s.hw)
    throw ShapeError("loss: target has " + std::to_string(target.size()) + " pixels, logits cover " +
                     std::to_string(s.b * s.hw));
  for (auto y : target)
    if (y >= s.n) throw LabelError("loss: target id " + std::to_string(y) + " >= num_classes " + std::to_string(s.n));
  const auto z = logits.data();
  s.p.resize(z.size());
  const auto n = s.n, hw = s.hw;
#pragma omp parallel for schedule(static)
  for (std::int64_t q = 0; q < s.b * hw; ++q) {
    const auto bi = q / hw, i = q % hw;
    const auto base = bi * n * hw + i;
    double mx = z[static_cast<std::size_t>(base)];
    for (std::int64_t c = 1; c < n; ++c) mx = std::max(mx, z[static_cast<std::size_t>(base + c * hw)]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < n; ++c) {
      const double e = std::exp(z[static_cast<std::size_t>(base + c * hw)] - mx);
      s.p[static_cast<std::size_t>(base + c * hw)] = e;
      sum += e;
    }
    for (std::int64_t c = 0; c < n; ++c) s.p[static_cast<std::size_t>(base + c * hw)] /= sum;
  }
  return s;
}

std::vector<double> unit_or(const std::vector<double>& w, std::int64_t n) {
  if (w.empty()) return std::vector<double>(static_cast<std::size_t>(n), 1.0);
  if (static_cast<std::int64_t>(w.size()) != n) throw ConfigError("class weight count does not match num_classes");
  return w;
}

// CE value and its gradient coefficient per pixel: dL/dz_c = (w_y / W) (p_c - [c = y]).
double ce_forward(const SoftmaxPlanes& s, std::span<const std::uint8_t> t, const std::vector<double>& w, double& wsum) {
  double num = 0.0;
  wsum = 0.0;
  for (std::int64_t q = 0; q < s.b * s.hw; ++q) {
    const auto bi = q / s.hw, i = q % s.hw;
    const auto y = t[static_cast<std::size_t>(q)];
    const double py = s.p[static_cast<std::size_t>(bi * s.n * s.hw + y * s.hw + i)];
    num += w[y] * -std::log(std::max(py, 1e-300));
    wsum += w[y];
  }
  return num / wsum;
}

void ce_backward(const SoftmaxPlanes& s, std::span<const std::uint8_t> t, const std::vector<double>& w, double wsum,
                 double g, std::span<double> gz) {
#pragma omp parallel for schedule(static)
  for (std::int64_t q = 0; q < s.b * s.hw; ++q) {
    const auto bi = q / s.hw, i = q % s.hw;
    const auto y = t[static_cast<std::size_t>(q)];
    const double k = g * w[y] / wsum;
    for (std::int64_t c = 0; c < s.n; ++c) {
      const auto idx = static_cast<std::size_t>(bi * s.n * s.hw + c * s.hw + i);
      gz[idx] += k * (s.p[idx] - (c == y ? 1.0 : 0.0));
    }
  }
}

struct DiceStats {
  std::vector<double> inter, psum, ysum;
};

double dice_forward(const SoftmaxPlanes& s, std::span<const std::uint8_t> t, double eps, DiceStats& st) {
  st.inter.assign(static_cast<std::size_t>(s.n), 0.0);
  st.psum.assign(static_cast<std::size_t>(s.n), 0.0);
  st.ysum.assign(static_cast<std::size_t>(s.n), 0.0);
  for (std::int64_t q = 0; q < s.b * s.hw; ++q) {
    const auto bi = q / s.hw, i = q % s.hw;
    const auto y = t[static_cast<std::size_t>(q)];
    for (std::int64_t c = 0; c < s.n; ++c) st.psum[static_cast<std::size_t>(c)] += s.p[static_cast<std::size_t>(bi * s.n * s.hw + c * s.hw + i)];
    st.inter[y] += s.p[static_cast<std::size_t>(bi * s.n * s.hw + y * s.hw + i)];
    st.ysum[y] += 1.0;
  }
  double mean = 0.0;
  for (std::int64_t c = 0; c < s.n; ++c) {
    const auto k = static_cast<std::size_t>(c);
    mean += (2.0 * st.inter[k] + eps) / (st.psum[k] + st.ysum[k] + eps);
  }
  return 1.0 - mean / static_cast<double>(s.n);
}

void dice_backward(const SoftmaxPlanes& s, std::span<const std::uint8_t> t, double eps, const DiceStats& st, double g,
                   std::span<double> gz) {
  const auto n = s.n;
  // dL/dp_c at a pixel = -(1/N) (2 y_c D_c - (2 I_c + eps)) / D_c^2 with D_c = P_c + Y_c + eps.
  std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
  for (std::int64_t c = 0; c < n; ++c) {
    const auto k = static_cast<std::size_t>(c);
    const double den = st.psum[k] + st.ysum[k] + eps;
    a[k] = -2.0 / (static_cast<double>(n) * den);                                       // times y_c
    b[k] = (2.0 * st.inter[k] + eps) / (static_cast<double>(n) * den * den);            // constant
  }
#pragma omp parallel for schedule(static)
  for (std::int64_t q = 0; q < s.b * s.hw; ++q) {
    const auto bi = q / s.hw, i = q % s.hw;
    const auto y = t[static_cast<std::size_t>(q)];
    double gp[256];
    double dot = 0.0;
    for (std::int64_t c = 0; c < n; ++c) {
      const auto k = static_cast<std::size_t>(c);
      gp[c] = b[k] + (c == y ? a[k] : 0.0);
      dot += gp[c] * s.p[static_cast<std::size_t>(bi * n * s.hw + c * s.hw + i)];
    }
    for (std::int64_t c = 0; c < n; ++c) {
      const auto idx = static_cast<std::size_t>(bi * n * s.hw + c * s.hw + i);
      gz[idx] += g * s.p[idx] * (gp[c] - dot);
    }
  }
}

void check_class_count(std::int64_t n) {
  if (n > 256) throw ShapeError("loss: more than 256 classes are not supported");
}

}  // namespace

Tensor weighted_ce(const Tensor& logits, std::span<const std::uint8_t> target, const std::vector<double>& weights) {
  auto s = std::make_shared<SoftmaxPlanes>(channel_softmax(logits, target));
  const auto w = unit_or(weights, s->n);
  double wsum = 0.0;
  const double v = ce_forward(*s, target, w, wsum);
  auto y = detail::make_result({}, {&logits});
  y.data()[0] = v;
  if (y.requires_grad()) {
    std::vector<std::uint8_t> t(target.begin(), target.end());
    y.node()->backward = [ln = logits.node_ptr(), s, t = std::move(t), w, wsum](TensorNode& self) {
      ce_backward(*s, t, w, wsum, self.grad[0], ln->grad_buffer());
    };
  }
  return y;
}

Tensor dice_loss(const Tensor& logits, std::span<const std::uint8_t> target, double eps) {
  auto s = std::make_shared<SoftmaxPlanes>(channel_softmax(logits, target));
  check_class_count(s->n);
  DiceStats st;
  const double v = dice_forward(*s, target, eps, st);
  auto y = detail::make_result({}, {&logits});
  y.data()[0] = v;
  if (y.requires_grad()) {
    std::vector<std::uint8_t> t(target.begin(), target.end());
    y.node()->backward = [ln = logits.node_ptr(), s, t = std::move(t), eps, st](TensorNode& self) {
      dice_backward(*s, t, eps, st, self.grad[0], ln->grad_buffer());
    };
  }
  return y;
}

LossValue segmentation_loss(const Tensor& logits, std::span<const std::uint8_t> target, const LossConfig& cfg) {
  auto s = std::make_shared<SoftmaxPlanes>(channel_softmax(logits, target));
  check_class_count(s->n);
  const auto w = unit_or(cfg.class_weights, s->n);
  double wsum = 0.0;
  DiceStats st;
  LossValue out;
  out.ce = ce_forward(*s, target, w, wsum);
  out.dice = dice_forward(*s, target, cfg.dice_smoothing, st);
  out.total = detail::make_result({}, {&logits});
  out.total.data()[0] = cfg.lambda_ce * out.ce + cfg.lambda_dice * out.dice;
  if (out.total.requires_grad()) {
    std::vector<std::uint8_t> t(target.begin(), target.end());
    out.total.node()->backward = [ln = logits.node_ptr(), s, t = std::move(t), w, wsum, st, cfg](TensorNode& self) {
      auto gz = ln->grad_buffer();
      ce_backward(*s, t, w, wsum, cfg.lambda_ce * self.grad[0], gz);
      dice_backward(*s, t, cfg.dice_smoothing, st, cfg.lambda_dice * self.grad[0], gz);
    };
  }
  return out;
}

std::vector<double> compute_class_weights(const std::vector<std::int64_t>& pixel_counts, std::vector<std::string>* warnings) {
  const auto n = pixel_counts.size();
  if (n == 0) throw InputError("class weights need at least one class");
  const double total = static_cast<double>(std::accumulate(pixel_counts.begin(), pixel_counts.end(), std::int64_t{0}));
  if (!(total > 0)) throw InputError("class weights: training windows contain no labelled pixels");
  std::vector<double> w(n, 0.0);
  double cap = 0.0;
  for (std::size_t c = 0; c < n; ++c)
    if (pixel_counts[c] > 0) {
      w[c] = total / (static_cast<double>(n) * static_cast<double>(pixel_counts[c]));
      cap = std::max(cap, w[c]);
    }
  for (std::size_t c = 0; c < n; ++c)
    if (pixel_counts[c] == 0) {
      w[c] = cap;
      if (warnings)
        warnings->push_back("class " + std::to_string(c) + " absent from training windows; weight capped at " +
                            std::to_string(cap) + " before normalisation");
    }
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(n);
  for (auto& v : w) v /= mean;
  return w;
}

std::vector<std::int64_t> class_pixel_counts(const std::vector<WindowSample>& samples, int num_classes) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& s : samples)
    for (auto v : s.mask.data) {
      if (v >= num_classes) throw LabelError("mask id " + std::to_string(v) + " >= num_classes");
      ++counts[v];
    }
  return counts;
}

// ---------------------------------------------------------------- optimizer

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) momentum_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
}

void SgdOptimizer::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const auto g = p.grad();
    auto v = p.data();
    auto& buf = momentum_[i];
    for (std::size_t j = 0; j < buf.size(); ++j) {
      const double gj = (g.empty() ? 0.0 : g[j]) + cfg_.weight_decay * v[j];
      buf[j] = cfg_.momentum * buf[j] + gj;
      v[j] -= lr * buf[j];
    }
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void RunConfig::validate() const {
  if (epochs < 1) throw ConfigError("run.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("run.batch_size must be >= 1");
  if (seeds.empty()) throw ConfigError("run.seeds must not be empty");
}

// ---------------------------------------------------------------- loop

namespace {

void write_snapshot(const std::filesystem::path& path, const StepRecord& rec, const Tensor& logits,
                    const std::vector<std::string>& batch_ids) {
  if (path.empty()) return;
  double mx = 0.0;
  std::int64_t non_finite = 0;
  for (double v : logits.data()) {
    if (!std::isfinite(v)) ++non_finite;
    else mx = std::max(mx, std::abs(v));
  }
  json snap = {{"step", rec.step},           {"lr", rec.lr},
               {"loss_ce", rec.loss_ce},     {"loss_dice", rec.loss_dice},
               {"max_abs_logit", mx},        {"non_finite_logits", non_finite},
               {"batch", batch_ids}};
  std::ofstream f(path);
  f << snap.dump(1) << '\n';
}

json record_json(const StepRecord& r) {
  return {{"step", r.step}, {"lr", r.lr}, {"loss_ce", r.loss_ce}, {"loss_dice", r.loss_dice}, {"loss", r.loss}};
}

}  // namespace

TrainResult train(SegmentationModel& model, const std::vector<WindowSample>& samples, TrainConfig cfg, std::uint64_t seed,
                  std::ostream* log_jsonl, const std::filesystem::path& snapshot_path) {
  cfg.run.validate();
  cfg.optim.validate();
  cfg.schedule.validate();
  cfg.loss.validate(model.config().decoder.num_classes);
  if (samples.empty()) throw InputError("train: no training windows");

  const auto n = static_cast<std::int64_t>(samples.size());
  const auto bs = cfg.run.batch_size;
  const auto per_epoch = (n + bs - 1) / bs;
  cfg.schedule.total_steps = cfg.run.epochs * per_epoch;

  std::vector<Tensor> params;
  for (const auto& p : model.store().parameters())
    if (p.trainable) params.push_back(p.tensor);
  SgdOptimizer opt(params, cfg.optim);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult res;
  res.total_steps = cfg.schedule.total_steps;
  std::int64_t step = 0;
  double first_sum = 0.0, last_sum = 0.0;
  for (std::int64_t epoch = 0; epoch < cfg.run.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::int64_t bstart = 0; bstart < n; bstart += bs) {
      const auto bend = std::min(n, bstart + bs);
      std::vector<WindowSample> batch;
      std::vector<std::string> ids;
      for (auto i = bstart; i < bend; ++i) {
        batch.push_back(samples[order[static_cast<std::size_t>(i)]]);
        ids.push_back(std::to_string(order[static_cast<std::size_t>(i)]));
        if (cfg.run.augment) augment(batch.back(), rng);
      }
      std::vector<const ImageU8*> imgs;
      std::vector<std::uint8_t> target;
      for (const auto& s : batch) {
        imgs.push_back(&s.image);
        target.insert(target.end(), s.mask.data.begin(), s.mask.data.end());
      }

      ++step;
      StepRecord rec;
      rec.step = step;
      rec.lr = lr_at(step, cfg.schedule, cfg.optim);
      Tensor logits = model.forward(imgs);
      LossValue loss = segmentation_loss(logits, target, cfg.loss);
      rec.loss_ce = loss.ce;
      rec.loss_dice = loss.dice;
      rec.loss = loss.total.item();
      if (!std::isfinite(rec.loss)) {
        write_snapshot(snapshot_path, rec, logits, ids);
        throw NumericError("non-finite loss at step " + std::to_string(step) + " (ce " + std::to_string(rec.loss_ce) +
                           ", dice " + std::to_string(rec.loss_dice) + ")");
      }
      if (loss.total.requires_grad()) {
        loss.total.backward();
        opt.step(rec.lr);
        opt.zero_grad();
      }
      epoch_sum += rec.loss;
      res.log.push_back(rec);
      if (log_jsonl) *log_jsonl << record_json(rec).dump() << '\n';
    }
    const double mean = epoch_sum / static_cast<double>(per_epoch);
    if (epoch == 0) first_sum = mean;
    last_sum = mean;
  }
  res.initial_loss = first_sum;
  res.final_loss = last_sum;
  return res;
}

// ---------------------------------------------------------------- checkpoints

namespace {
constexpr char kMagic[8] = {'P', 'S', 'E', 'G', 'C', 'K', 'P', '1'};
}

std::string parameter_hash(const ParameterStore& store) {
  std::vector<std::uint8_t> bytes;
  for (const auto& p : store.parameters()) {
    bytes.insert(bytes.end(), p.path.begin(), p.path.end());
    bytes.push_back(0);
    if (!p.tensor.defined()) continue;
    const auto d = p.tensor.data();
    const auto* raw = reinterpret_cast<const std::uint8_t*>(d.data());
    bytes.insert(bytes.end(), raw, raw + d.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store, const json& meta) {
  json header = meta;
  json table = json::array();
  for (const auto& p : store.parameters()) table.push_back({{"path", p.path}, {"shape", p.shape}, {"trainable", p.trainable}});
  header["parameters"] = table;
  header["parameter_sha256"] = parameter_hash(store);
  const auto text = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write checkpoint " + path.string());
  f.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : store.parameters()) {
    if (!p.tensor.defined()) throw IntegrityError("cannot checkpoint a shape-only store");
    const auto d = p.tensor.data();
    f.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!f) throw InputError("write failed for checkpoint " + path.string());
}

namespace {

json read_header(std::ifstream& f, const std::filesystem::path& path) {
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IntegrityError(path.string() + ": not a checkpoint");
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f || len > (1ULL << 32)) throw IntegrityError(path.string() + ": corrupt header length");
  std::string text(len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(len));
  if (!f) throw IntegrityError(path.string() + ": truncated header");
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  }
}

}  // namespace

json read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("checkpoint not found: " + path.string());
  return read_header(f, path);
}

json load_checkpoint(const std::filesystem::path& path, ParameterStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("checkpoint not found: " + path.string());
  json header = read_header(f, path);
  const auto& table = header.at("parameters");
  if (table.size() != store.parameters().size())
    throw IntegrityError(path.string() + ": parameter table has " + std::to_string(table.size()) + " entries, model has " +
                         std::to_string(store.parameters().size()));
  for (std::size_t i = 0; i < table.size(); ++i) {
    auto& p = store.parameters()[i];
    if (table[i].at("path").get<std::string>() != p.path || table[i].at("shape").get<Shape>() != p.shape)
      throw IntegrityError(path.string() + ": parameter " + std::to_string(i) + " is " +
                           table[i].at("path").get<std::string>() + ", model expects " + p.path);
    auto d = p.tensor.data();
    f.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!f) throw IntegrityError(path.string() + ": truncated parameter data at " + p.path);
  }
  if (header.contains("parameter_sha256") && header["parameter_sha256"].get<std::string>() != parameter_hash(store))
    throw IntegrityError(path.string() + ": parameter checksum mismatch");
  return header;
}

}  // namespace peftseg
