#include "peftseg/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "peftseg/errors.hpp"

namespace peftseg {

Json default_config() {
  const SyntheticFieldSpec s;
  const EncoderSpec e = EncoderSpec::tiny();
  const DecoderConfig d;
  const LoRAConfig lora;
  const AdapterConfig adapter;
  const ScheduleConfig sched;
  const LossConfig loss;
  const ZeroShotConfig zs;
  return Json{
      {"synth",
       {{"seed", 7},
        {"width_m", s.width_m},
        {"height_m", s.height_m},
        {"pixel_size", s.pixel_size},
        {"origin_x", s.origin_x},
        {"origin_y", s.origin_y},
        {"boundary_margin_m", s.boundary_margin_m},
        {"corner_cut_m", s.corner_cut_m},
        {"nodata_holes", s.nodata_holes},
        {"hole_size_m", s.hole_size_m},
        {"vegetation", s.vegetation},
        {"cwd", s.cwd},
        {"stumps", s.stumps},
        {"misc", s.misc}}},
      {"sampling",
       {{"seed", 3},
        {"train_windows", 1000},
        {"window_size", 512},
        {"retries", 100},
        {"exclude_test_overlap", true},
        {"tile_size_m", 10.0},
        {"test_fraction", 0.4},
        {"export_windows", false}}},
      {"encoder",
       {{"num_blocks", e.num_blocks},
        {"embed_dim", e.embed_dim},
        {"num_heads", e.num_heads},
        {"mlp_hidden_dim", e.mlp_hidden_dim},
        {"patch_size", e.patch_size},
        {"input_resolution", e.input_resolution},
        {"neck_dim", e.neck_dim},
        {"window_size", e.window_size}}},
      {"decoder",
       {{"num_classes", d.num_classes},
        {"token_dim", d.token_dim},
        {"two_way_depth", d.two_way_depth},
        {"num_heads", d.num_heads},
        {"mlp_dim", d.mlp_dim},
        {"attention_downsample", d.attention_downsample},
        {"dense_embedding", d.use_dense_embedding},
        {"dense_init_std", d.dense_init_std},
        {"class_token_std", d.class_token_std}}},
      {"peft",
       {{"kind", "all"},
        {"lora", {{"rank", lora.rank}, {"alpha", lora.alpha}, {"targets", {"query", "value"}}, {"a_init_std", lora.a_init_std}}},
        // The tiny encoder is 32 wide, so the adapter bottleneck shrinks with it.
        {"adapter", {{"bottleneck", 8}, {"scale", adapter.scale}}}}},
      {"model", {{"backbone_seed", 11}}},
      {"optim", {{"base_lr", 0.05}, {"momentum", 0.9}, {"weight_decay", 0.001}}},
      {"schedule",
       {{"warmup_fraction", sched.warmup_fraction},
        {"terminal_lr_ratio", sched.terminal_lr_ratio},
        {"decay", "cosine"},
        {"step_milestones", sched.step_milestones}}},
      {"loss",
       {{"class_weighting", "inverse_frequency"},
        {"dice_smoothing", loss.dice_smoothing},
        {"lambda_ce", loss.lambda_ce},
        {"lambda_dice", loss.lambda_dice}}},
      {"run", {{"epochs", 50}, {"batch_size", 4}, {"seeds", {0, 1, 2}}, {"augment", true}, {"eval_batch_size", 4}}},
      {"zeroshot",
       {{"grid_dims", zs.grid_dims},
        {"score_threshold", zs.score_threshold},
        {"nms_iou", zs.nms_iou},
        {"match_iou", zs.match_iou},
        {"stub_corruption", zs.stub_corruption},
        {"stub_score", zs.stub_score}}},
  };
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest_key(const std::string& key, const std::vector<std::string>& candidates) {
  std::string best;
  std::size_t best_d = 0;
  for (const auto& c : candidates) {
    const auto d = edit_distance(key, c);
    if (best.empty() || d < best_d) {
      best = c;
      best_d = d;
    }
  }
  return best;
}

namespace {

void collect_keys(const Json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object())
      collect_keys(*it, key, out);
    else
      out.push_back(key);
  }
}

std::string type_name(const Json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

bool compatible(const Json& def, const Json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_integer()) return v.is_number_integer() || (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()));
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  if (def.is_object()) return v.is_object();
  return false;
}

[[noreturn]] void unknown_key(const std::string& key) {
  const auto keys = config_keys(default_config());
  throw ConfigError("unknown config key '" + key + "'; did you mean '" + nearest_key(key, keys) + "'?");
}

void merge_at(Json& base, const Json& over, const std::string& prefix) {
  if (!over.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (auto it = over.begin(); it != over.end(); ++it) {
    const auto key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) unknown_key(key);
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_at(slot, *it, key);
      continue;
    }
    if (!compatible(slot, *it))
      throw ConfigError("config key '" + key + "' expects " + type_name(slot) + ", got " + type_name(*it) + " (" + it->dump() + ")");
    if (slot.is_number_integer() && !it->is_number_integer())
      slot = static_cast<std::int64_t>(it->get<double>());
    else
      slot = *it;
  }
}

}  // namespace

void merge_config(Json& base, const Json& overrides) { merge_at(base, overrides, ""); }

Json load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json file;
  try {
    file = Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  auto cfg = default_config();
  merge_config(cfg, file);
  return cfg;
}

void apply_override(Json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  // Build the nested object for the dotted key and merge it.
  Json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    parts.push_back(part);
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  // A scalar override that names a whole section is a type error, not a merge.
  const Json* node = &cfg;
  for (const auto& p : parts) {
    if (!node->is_object() || !node->contains(p)) unknown_key(key);
    node = &(*node)[p];
  }
  if (node->is_object() && !value.is_object()) throw ConfigError("config key '" + key + "' is a section, not a value");
  merge_config(cfg, patch);
}

std::vector<std::string> config_keys(const Json& cfg) {
  std::vector<std::string> out;
  collect_keys(cfg, "", out);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<PeftKind> selected_methods(const Json& cfg) {
  const auto spec = cfg.at("peft").at("kind").get<std::string>();
  if (spec == "all") return {PeftKind::adapter_h, PeftKind::adapter_l, PeftKind::lora, PeftKind::decoder_only};
  std::vector<PeftKind> out;
  std::stringstream ss(spec);
  for (std::string name; std::getline(ss, name, ',');) {
    if (name.empty()) continue;
    const auto k = peft_kind_from_name(name);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  if (out.empty()) throw ConfigError("peft.kind selects no method");
  return out;
}

ModelConfig model_config(const Json& cfg, PeftKind kind) {
  ModelConfig mc;
  const auto& e = cfg.at("encoder");
  mc.encoder.num_blocks = e.at("num_blocks");
  mc.encoder.embed_dim = e.at("embed_dim");
  mc.encoder.num_heads = e.at("num_heads");
  mc.encoder.mlp_hidden_dim = e.at("mlp_hidden_dim");
  mc.encoder.patch_size = e.at("patch_size");
  mc.encoder.input_resolution = e.at("input_resolution");
  mc.encoder.neck_dim = e.at("neck_dim");
  mc.encoder.window_size = e.at("window_size");
  const auto& d = cfg.at("decoder");
  mc.decoder.num_classes = d.at("num_classes");
  mc.decoder.token_dim = d.at("token_dim");
  mc.decoder.two_way_depth = d.at("two_way_depth");
  mc.decoder.num_heads = d.at("num_heads");
  mc.decoder.mlp_dim = d.at("mlp_dim");
  mc.decoder.attention_downsample = d.at("attention_downsample");
  mc.decoder.use_dense_embedding = d.at("dense_embedding");
  mc.decoder.dense_init_std = d.at("dense_init_std");
  mc.decoder.class_token_std = d.at("class_token_std");
  mc.method = PeftMethod::of(kind);
  const auto& p = cfg.at("peft");
  if (mc.method.lora) {
    mc.method.lora->rank = p.at("lora").at("rank");
    mc.method.lora->alpha = p.at("lora").at("alpha");
    mc.method.lora->a_init_std = p.at("lora").at("a_init_std");
    mc.method.lora->targets.clear();
    for (const auto& t : p.at("lora").at("targets")) mc.method.lora->targets.insert(lora_target_from_name(t.get<std::string>()));
  }
  if (mc.method.adapter) {
    mc.method.adapter->bottleneck = p.at("adapter").at("bottleneck");
    mc.method.adapter->scale = p.at("adapter").at("scale");
  }
  mc.window_size = cfg.at("sampling").at("window_size");
  mc.validate();
  return mc;
}

TrainConfig train_config(const Json& cfg) {
  TrainConfig tc;
  const auto& o = cfg.at("optim");
  tc.optim.base_lr = o.at("base_lr");
  tc.optim.momentum = o.at("momentum");
  tc.optim.weight_decay = o.at("weight_decay");
  const auto& s = cfg.at("schedule");
  tc.schedule.warmup_fraction = s.at("warmup_fraction");
  tc.schedule.terminal_lr_ratio = s.at("terminal_lr_ratio");
  const auto decay = s.at("decay").get<std::string>();
  if (decay == "cosine")
    tc.schedule.decay = DecayKind::cosine;
  else if (decay == "step")
    tc.schedule.decay = DecayKind::step;
  else
    throw ConfigError("schedule.decay must be 'cosine' or 'step', got '" + decay + "'");
  tc.schedule.step_milestones = s.at("step_milestones").get<std::vector<double>>();
  const auto& l = cfg.at("loss");
  const auto weighting = l.at("class_weighting").get<std::string>();
  if (weighting != "inverse_frequency" && weighting != "none")
    throw ConfigError("loss.class_weighting must be 'inverse_frequency' or 'none', got '" + weighting + "'");
  tc.loss.dice_smoothing = l.at("dice_smoothing");
  tc.loss.lambda_ce = l.at("lambda_ce");
  tc.loss.lambda_dice = l.at("lambda_dice");
  const auto& r = cfg.at("run");
  tc.run.epochs = r.at("epochs");
  tc.run.batch_size = r.at("batch_size");
  tc.run.seeds = r.at("seeds").get<std::vector<std::uint64_t>>();
  tc.run.augment = r.at("augment");
  tc.optim.validate();
  tc.run.validate();
  return tc;
}

SamplingOptions sampling_options(const Json& cfg) {
  const auto& s = cfg.at("sampling");
  SamplingOptions o;
  o.window_size = s.at("window_size");
  o.retries_per_window = s.at("retries");
  o.exclude_test_overlap = s.at("exclude_test_overlap");
  if (o.window_size < 1) throw ConfigError("sampling.window_size must be positive");
  if (o.retries_per_window < 1) throw ConfigError("sampling.retries must be positive");
  if (s.at("train_windows").get<std::int64_t>() < 0) throw ConfigError("sampling.train_windows must be >= 0");
  const double tf = s.at("test_fraction");
  if (!(tf > 0.0 && tf < 1.0)) throw ConfigError("sampling.test_fraction must be in (0, 1)");
  if (!(s.at("tile_size_m").get<double>() > 0.0)) throw ConfigError("sampling.tile_size_m must be positive");
  return o;
}

SyntheticFieldSpec synth_spec(const Json& cfg) {
  const auto& s = cfg.at("synth");
  SyntheticFieldSpec f;
  f.width_m = s.at("width_m");
  f.height_m = s.at("height_m");
  f.pixel_size = s.at("pixel_size");
  f.origin_x = s.at("origin_x");
  f.origin_y = s.at("origin_y");
  f.boundary_margin_m = s.at("boundary_margin_m");
  f.corner_cut_m = s.at("corner_cut_m");
  f.nodata_holes = s.at("nodata_holes");
  f.hole_size_m = s.at("hole_size_m");
  f.vegetation = s.at("vegetation");
  f.cwd = s.at("cwd");
  f.stumps = s.at("stumps");
  f.misc = s.at("misc");
  if (!(f.width_m > 0 && f.height_m > 0 && f.pixel_size > 0)) throw ConfigError("synth extent and pixel size must be positive");
  if (f.vegetation < 0 || f.cwd < 0 || f.stumps < 0 || f.misc < 0 || f.nodata_holes < 0)
    throw ConfigError("synth object counts must be >= 0");
  return f;
}

ZeroShotConfig zeroshot_config(const Json& cfg) {
  const auto& z = cfg.at("zeroshot");
  ZeroShotConfig c;
  c.grid_dims = z.at("grid_dims");
  c.score_threshold = z.at("score_threshold");
  c.nms_iou = z.at("nms_iou");
  c.match_iou = z.at("match_iou");
  c.stub_corruption = z.at("stub_corruption");
  c.stub_score = z.at("stub_score");
  c.validate();
  return c;
}

}  // namespace peftseg
