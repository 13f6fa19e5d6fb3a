#include "peftseg/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "peftseg/decoder.hpp"
#include "peftseg/errors.hpp"
#include "peftseg/hash.hpp"
#include "peftseg/peft.hpp"
#include "peftseg/tensor.hpp"

namespace fs = std::filesystem;

namespace peftseg {
namespace {

std::ostream& out(const CommandContext& ctx) { return ctx.out ? *ctx.out : std::cout; }

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& p, const std::string& produced_by) {
  if (!fs::exists(p)) throw InputError("missing " + p.string() + " (run `peftseg " + produced_by + "` first)");
}

void write_json_file(const fs::path& p, const Json& j) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

Json checksums(const std::vector<fs::path>& files) {
  Json j = Json::object();
  for (const auto& f : files)
    if (fs::exists(f)) j[f.filename().string()] = sha256_file(f);
  return j;
}

void write_run_manifest(const fs::path& dir, const std::string& command, const Json& cfg, const CommandContext& ctx,
                        const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs, Json extra = Json::object()) {
  Json m{{"tool", "peftseg"},
         {"version", kToolVersion},
         {"command", command},
         {"command_line", ctx.command_line},
         {"created_utc", utc_now()},
         {"config", cfg},
         {"seeds", {{"synth", cfg["synth"]["seed"]}, {"sampling", cfg["sampling"]["seed"]}, {"run", cfg["run"]["seeds"]},
                    {"backbone", cfg["model"]["backbone_seed"]}}},
         {"inputs", checksums(inputs)},
         {"outputs", Json::array()}};
  for (const auto& o : outputs) m["outputs"].push_back(fs::relative(o, ctx.root).string());
  m["output_checksums"] = checksums(outputs);
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = *it;
  write_json_file(dir / "run_manifest.json", m);
}

struct Field {
  GeoRaster image, labels;
  Polygon boundary;
};

Field load_field(const fs::path& root) {
  const auto p = field_paths(root);
  require_file(p.image, "synth");
  require_file(p.labels, "synth");
  require_file(p.boundary, "synth");
  return {read_geotiff(p.image), read_geotiff(p.labels), read_geojson_polygon(p.boundary)};
}

TileGrid split_grid(const Json& cfg, const GeoRaster& image) {
  auto grid = build_tile_grid(image, cfg["sampling"]["tile_size_m"].get<double>());
  assign_split_by_columns(grid, cfg["sampling"]["test_fraction"].get<double>());
  return grid;
}

std::string thousands(std::int64_t v) {
  auto s = std::to_string(v < 0 ? -v : v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return v < 0 ? "-" + s : s;
}

void export_window(const fs::path& dir, const WindowSample& s, const Window& w, const GeoRaster& like) {
  ensure_dir(dir);
  GeoRaster img{s.image, {w.min_x, w.max_y, like.transform.pixel_size}, like.epsg, 0};
  GeoRaster msk{s.mask, {w.min_x, w.max_y, like.transform.pixel_size}, like.epsg, 255};
  write_geotiff(dir / "image.tif", img);
  write_geotiff(dir / "mask.tif", msk);
}

int num_classes(const Json& cfg) { return cfg["decoder"]["num_classes"].get<int>(); }

}  // namespace

fs::path resolve_output_root(const std::string& explicit_root) {
  if (!explicit_root.empty()) return explicit_root;
  if (const char* env = std::getenv("PEFTSEG_OUTPUT_ROOT"); env && *env) return env;
  return "peftseg_out";
}

FieldPaths field_paths(const fs::path& root) {
  return {root / "synth" / "image.tif", root / "synth" / "labels.tif", root / "synth" / "boundary.geojson"};
}

fs::path manifest_path(const fs::path& root, Split split) { return root / "sample" / (split_name(split) + ".jsonl"); }

std::string variant_name(bool dense) { return dense ? "dense" : "nodense"; }

fs::path run_dir(const fs::path& root, PeftKind kind, bool dense, std::uint64_t seed) {
  return root / "train" / peft_kind_name(kind) / variant_name(dense) / ("seed_" + std::to_string(seed));
}

void cmd_synth(const Json& cfg, const CommandContext& ctx) {
  const auto spec = synth_spec(cfg);
  const auto seed = cfg["synth"]["seed"].get<std::uint64_t>();
  const auto p = field_paths(ctx.root);
  if (ctx.dry_run) {
    out(ctx) << "synth: would generate a " << spec.width_m << " x " << spec.height_m << " m field at " << spec.pixel_size
             << " m/px (seed " << seed << ") into " << (ctx.root / "synth").string() << "\n";
    return;
  }
  auto field = generate_synthetic_field(spec, seed);
  ensure_dir(ctx.root / "synth");
  write_geotiff(p.image, field.image);
  write_geotiff(p.labels, field.labels);
  write_geojson_polygon(p.boundary, field.boundary, field.image.epsg);
  Json painted = Json::array();
  for (auto v : field.painted) painted.push_back(v);
  write_run_manifest(ctx.root / "synth", "synth", cfg, ctx, {}, {p.image, p.labels, p.boundary},
                     {{"painted_pixels", painted}});
  out(ctx) << "synth: " << field.image.cols() << "x" << field.image.rows() << " px field written to "
           << (ctx.root / "synth").string() << "\n";
}

void cmd_sample(const Json& cfg, const CommandContext& ctx) {
  const auto opts = sampling_options(cfg);
  const auto n = cfg["sampling"]["train_windows"].get<std::int64_t>();
  const auto seed = cfg["sampling"]["seed"].get<std::uint64_t>();
  if (ctx.dry_run) {
    out(ctx) << "sample: would draw " << n << " random train windows (seed " << seed << ") and the grid test windows of size "
             << opts.window_size << " from " << (ctx.root / "synth").string() << "\n";
    return;
  }
  const auto field = load_field(ctx.root);
  const auto p = field_paths(ctx.root);
  const auto grid = split_grid(cfg, field.image);
  const ValidityMap validity(field.image, field.labels, field.boundary);
  auto train = sample_random_windows(grid, validity, n, seed, opts);
  auto test = sample_grid_windows(grid, validity, opts);
  const auto img_sha = sha256_file(p.image), lbl_sha = sha256_file(p.labels);
  for (auto* m : {&train, &test}) {
    m->image_sha256 = img_sha;
    m->labels_sha256 = lbl_sha;
  }
  ensure_dir(ctx.root / "sample");
  train.save(manifest_path(ctx.root, Split::train));
  test.save(manifest_path(ctx.root, Split::test));
  std::vector<fs::path> outputs{manifest_path(ctx.root, Split::train), manifest_path(ctx.root, Split::test)};
  if (cfg["sampling"]["export_windows"].get<bool>()) {
    for (const auto* m : {&train, &test})
      for (const auto& w : m->windows)
        export_window(ctx.root / "sample" / "windows" / split_name(w.split) / w.id,
                      extract_window(field.image, field.labels, w, num_classes(cfg)), w, field.image);
  }
  write_run_manifest(ctx.root / "sample", "sample", cfg, ctx, {p.image, p.labels, p.boundary}, outputs,
                     {{"train_windows", train.windows.size()}, {"test_windows", test.windows.size()}});
  out(ctx) << "sample: " << train.windows.size() << " train and " << test.windows.size() << " test windows\n";
}

std::vector<WindowSample> load_split(const fs::path& root, Split split, int n_classes, std::vector<std::string>* ids) {
  const auto mp = manifest_path(root, split);
  require_file(mp, "sample");
  const auto manifest = WindowManifest::load(mp);
  const auto p = field_paths(root);
  require_file(p.image, "synth");
  require_file(p.labels, "synth");
  if (!manifest.image_sha256.empty() && manifest.image_sha256 != sha256_file(p.image))
    throw IntegrityError(mp.string() + " was sampled from a different image than " + p.image.string());
  if (!manifest.labels_sha256.empty() && manifest.labels_sha256 != sha256_file(p.labels))
    throw IntegrityError(mp.string() + " was sampled from different labels than " + p.labels.string());
  const auto image = read_geotiff(p.image);
  const auto labels = read_geotiff(p.labels);
  std::vector<WindowSample> samples;
  samples.reserve(manifest.windows.size());
  for (const auto& w : manifest.windows) {
    samples.push_back(extract_window(image, labels, w, n_classes));
    if (ids) ids->push_back(w.id);
  }
  return samples;
}

void cmd_train(const Json& cfg, const CommandContext& ctx, bool ablate_dense) {
  const auto methods = selected_methods(cfg);
  auto tc = train_config(cfg);
  const bool weighted = cfg["loss"]["class_weighting"].get<std::string>() == "inverse_frequency";
  const auto backbone_seed = cfg["model"]["backbone_seed"].get<std::uint64_t>();
  std::vector<bool> variants{cfg["decoder"]["dense_embedding"].get<bool>()};
  if (ablate_dense) variants = {false, true};
  for (auto k : methods) model_config(cfg, k);  // validate before any work

  if (ctx.dry_run) {
    out(ctx) << "train: would run " << methods.size() * variants.size() * tc.run.seeds.size() << " runs ("
             << methods.size() << " methods x " << variants.size() << " variants x " << tc.run.seeds.size() << " seeds), "
             << tc.run.epochs << " epochs each, into " << (ctx.root / "train").string() << "\n";
    return;
  }
  const auto samples = load_split(ctx.root, Split::train, num_classes(cfg));
  if (samples.empty()) throw InputError("train manifest " + manifest_path(ctx.root, Split::train).string() + " has no windows");
  if (weighted) {
    std::vector<std::string> warnings;
    tc.loss.class_weights = compute_class_weights(class_pixel_counts(samples, num_classes(cfg)), &warnings);
    for (const auto& w : warnings) out(ctx) << "warning: " << w << "\n";
  }
  const auto mp = manifest_path(ctx.root, Split::train);
  for (auto kind : methods) {
    for (bool dense : variants) {
      auto run_cfg = cfg;
      run_cfg["decoder"]["dense_embedding"] = dense;
      const auto mc = model_config(run_cfg, kind);
      for (auto seed : tc.run.seeds) {
        SegmentationModel model(mc, backbone_seed, seed);
        const auto trainable = count_trainable(model.partition(), model.store());
        out(ctx) << "train: " << peft_kind_name(kind) << " [" << variant_name(dense) << "] seed " << seed << ": "
                 << thousands(trainable) << " trainable parameters (encoder modules "
                 << thousands(peft_parameter_count(mc.encoder, mc.method)) << ")\n";
        const auto dir = run_dir(ctx.root, kind, dense, seed);
        ensure_dir(dir);
        std::ofstream log(dir / "log.jsonl");
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = train(model, samples, tc, seed, &log, dir / "nonfinite_snapshot.json");
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        Json meta{{"method", peft_kind_name(kind)}, {"variant", variant_name(dense)}, {"seed", seed},
                  {"backbone_seed", backbone_seed}, {"config", run_cfg}, {"class_weights", tc.loss.class_weights},
                  {"trainable_parameters", trainable}, {"initial_loss", res.initial_loss}, {"final_loss", res.final_loss},
                  {"total_steps", res.total_steps}};
        save_checkpoint(dir / "checkpoint.bin", model.store(), meta);
        log.close();
        write_run_manifest(dir, "train", run_cfg, ctx, {mp}, {dir / "checkpoint.bin", dir / "log.jsonl"},
                           {{"method", peft_kind_name(kind)}, {"variant", variant_name(dense)}, {"seed", seed},
                            {"initial_loss", res.initial_loss}, {"final_loss", res.final_loss}});
        out(ctx) << "  loss " << std::setprecision(4) << res.initial_loss << " -> " << res.final_loss << " over "
                 << res.total_steps << " steps (" << std::fixed << std::setprecision(1) << secs << " s)\n"
                 << std::defaultfloat;
      }
    }
  }
}

namespace {

struct EvalGroup {
  PeftKind kind;
  bool dense;
  std::int64_t trainable = 0;
  std::vector<MetricsReport> reports;
};

// Largest |a - b| between untrained models with and without a zero dense
// embedding on the first test window.
double untrained_dense_gap(const Json& cfg, PeftKind kind, std::uint64_t seed, const WindowSample& sample) {
  auto c = cfg;
  c["decoder"]["dense_embedding"] = false;
  SegmentationModel off(model_config(c, kind), cfg["model"]["backbone_seed"].get<std::uint64_t>(), seed);
  c["decoder"]["dense_embedding"] = true;
  SegmentationModel on(model_config(c, kind), cfg["model"]["backbone_seed"].get<std::uint64_t>(), seed);
  NoGradGuard guard;
  const auto a = off.forward({&sample.image});
  const auto b = on.forward({&sample.image});
  double gap = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) gap = std::max(gap, std::abs(a.data()[i] - b.data()[i]));
  return gap;
}

std::string row_label(PeftKind kind, bool dense, bool ablate) {
  auto s = peft_kind_label(kind);
  if (ablate) s += dense ? " +dense" : " -dense";
  return s;
}

}  // namespace

void cmd_eval(const Json& cfg, const CommandContext& ctx, bool ablate_dense) {
  const auto methods = selected_methods(cfg);
  const auto seeds = cfg["run"]["seeds"].get<std::vector<std::uint64_t>>();
  std::vector<bool> variants{cfg["decoder"]["dense_embedding"].get<bool>()};
  if (ablate_dense) variants = {false, true};
  if (ctx.dry_run) {
    out(ctx) << "eval: would evaluate " << methods.size() * variants.size() * seeds.size() << " checkpoints on "
             << manifest_path(ctx.root, Split::test).string() << " and write " << (ctx.root / "eval").string() << "\n";
    return;
  }
  std::vector<std::string> ids;
  const auto samples = load_split(ctx.root, Split::test, num_classes(cfg), &ids);
  if (samples.empty()) throw InputError("test manifest " + manifest_path(ctx.root, Split::test).string() + " has no windows");
  const auto batch = cfg["run"]["eval_batch_size"].get<std::int64_t>();
  const auto evald = ctx.root / "eval";
  ensure_dir(evald);

  std::vector<EvalGroup> groups;
  std::vector<std::string> missing;
  std::vector<fs::path> inputs{manifest_path(ctx.root, Split::test)};
  std::ofstream runs(evald / "runs.jsonl");
  for (auto kind : methods)
    for (bool dense : variants) {
      EvalGroup g{kind, dense, 0, {}};
      for (auto seed : seeds) {
        const auto ckpt = run_dir(ctx.root, kind, dense, seed) / "checkpoint.bin";
        if (!fs::exists(ckpt)) {
          missing.push_back(fs::relative(ckpt, ctx.root).string());
          out(ctx) << "warning: missing checkpoint " << ckpt.string() << ", skipped\n";
          continue;
        }
        const auto meta = read_checkpoint_header(ckpt);
        Json run_cfg = default_config();
        merge_config(run_cfg, meta.at("config"));
        SegmentationModel model(model_config(run_cfg, kind), meta.at("backbone_seed").get<std::uint64_t>(), seed);
        load_checkpoint(ckpt, model.store());
        g.trainable = count_trainable(model.partition(), model.store());
        auto rep = evaluate(model, samples, batch);
        runs << Json{{"method", peft_kind_name(kind)}, {"variant", variant_name(dense)}, {"seed", seed},
                     {"checkpoint", fs::relative(ckpt, ctx.root).string()}, {"metrics", to_json(rep)}}
                    .dump()
             << '\n';
        out(ctx) << "eval: " << peft_kind_name(kind) << " [" << variant_name(dense) << "] seed " << seed << ": mIoU "
                 << std::fixed << std::setprecision(3) << rep.miou << std::defaultfloat << "\n";
        inputs.push_back(ckpt);
        g.reports.push_back(std::move(rep));
      }
      groups.push_back(std::move(g));
    }
  runs.close();

  std::vector<TableRow> rows;
  std::ofstream aggs(evald / "aggregates.jsonl");
  for (const auto& g : groups) {
    if (g.reports.empty()) continue;
    TableRow row{row_label(g.kind, g.dense, ablate_dense), g.trainable, aggregate_runs(g.reports)};
    aggs << Json{{"method", peft_kind_name(g.kind)}, {"label", row.method}, {"variant", variant_name(g.dense)},
                 {"trainable_parameters", g.trainable}, {"aggregate", to_json(row.aggregate)}}
                .dump()
         << '\n';
    rows.push_back(std::move(row));
  }
  aggs.close();
  {
    std::ofstream t(evald / "table.txt");
    write_results_table(t, rows);
    write_results_table(out(ctx), rows);
    std::ofstream csv(evald / "per_class_iou.csv");
    write_per_class_csv(csv, rows, default_class_names());
    std::ofstream svg(evald / "per_class_iou.svg");
    write_per_class_svg(svg, rows, default_class_names());
  }
  std::vector<fs::path> outputs{evald / "runs.jsonl", evald / "aggregates.jsonl", evald / "table.txt",
                                evald / "per_class_iou.csv", evald / "per_class_iou.svg"};

  Json extra{{"missing_checkpoints", missing}, {"test_windows", ids}};
  if (ablate_dense) {
    // Paired comparison per method plus the zero-init equivalence check.
    std::ofstream ab(evald / "ablation.jsonl");
    for (auto kind : methods) {
      Json pair{{"method", peft_kind_name(kind)}};
      for (const auto& g : groups)
        if (g.kind == kind && !g.reports.empty()) pair[variant_name(g.dense)] = to_json(aggregate_runs(g.reports));
      const double gap = untrained_dense_gap(cfg, kind, seeds.front(), samples.front());
      pair["untrained_max_abs_diff"] = gap;
      pair["untrained_outputs_identical"] = gap == 0.0;
      ab << pair.dump() << '\n';
    }
    outputs.push_back(evald / "ablation.jsonl");
  }
  write_run_manifest(evald, ablate_dense ? "eval --ablate-dense" : "eval", cfg, ctx, inputs, outputs, extra);
}

void cmd_zeroshot(const Json& cfg, const CommandContext& ctx) {
  const auto zc = zeroshot_config(cfg);
  if (ctx.dry_run) {
    out(ctx) << "zeroshot: would prompt a " << zc.grid_dims << "x" << zc.grid_dims << " grid on every window of "
             << manifest_path(ctx.root, Split::test).string() << " with the stub segmenter (corruption "
             << zc.stub_corruption << ")\n";
    return;
  }
  std::vector<std::string> ids;
  const auto samples = load_split(ctx.root, Split::test, num_classes(cfg), &ids);
  StubSegmenter seg(zc.stub_corruption, zc.stub_score);
  const auto rep = zeroshot_miou(seg, samples, ids, zc);
  const auto dir = ctx.root / "zeroshot";
  ensure_dir(dir);
  write_json_file(dir / "report.json", to_json(rep, zc));
  write_run_manifest(dir, "zeroshot", cfg, ctx, {manifest_path(ctx.root, Split::test)}, {dir / "report.json"});
  out(ctx) << "zeroshot: mIoU " << std::fixed << std::setprecision(3) << rep.miou << " over " << rep.matched_pairs
           << " matched pairs, instance mIoU " << rep.instance_miou << std::defaultfloat << " (TP " << rep.tp << ", FP "
           << rep.fp << ", FN " << rep.fn << ", " << rep.skipped_windows << " windows skipped)\n";
}

std::vector<ParameterTableRow> full_scale_parameter_table(std::int64_t decoder_count) {
  const auto vit_h = EncoderSpec::preset("vit_h");
  std::vector<ParameterTableRow> rows;
  for (auto kind : {PeftKind::adapter_h, PeftKind::adapter_l, PeftKind::lora, PeftKind::decoder_only}) {
    const auto p = peft_parameter_count(vit_h, PeftMethod::of(kind));
    rows.push_back({peft_kind_label(kind), p, decoder_count + p});
  }
  return rows;
}

void cmd_params(const Json& cfg, const CommandContext& ctx, const fs::path& export_dir) {
  auto& os = out(ctx);
  os << "desk scale (config encoder and decoder):\n";
  for (auto kind : selected_methods(cfg)) {
    const auto mc = model_config(cfg, kind);
    const auto peft = peft_parameter_count(mc.encoder, mc.method);
    const auto dec = decoder_parameter_count(mc.decoder);
    os << "  " << std::left << std::setw(14) << peft_kind_label(kind) << std::right << std::setw(12) << thousands(dec + peft)
       << " trainable (decoder " << thousands(dec) << ", encoder modules " << thousands(peft) << ")\n";
    if (!export_dir.empty() && !ctx.dry_run) {
      ensure_dir(export_dir);
      SegmentationModel model(mc, 0, 0);
      std::ofstream audit(export_dir / (peft_kind_name(kind) + "_partition.txt"));
      model.partition().write_audit(audit);
    }
  }
  const auto sam = decoder_parameter_count(DecoderConfig::sam_shaped(num_classes(cfg)));
  os << "full scale (ViT-H encoder, SAM-shaped decoder " << thousands(sam) << "):\n";
  for (const auto& r : full_scale_parameter_table(sam))
    os << "  " << std::left << std::setw(14) << r.method << std::right << std::setw(12) << thousands(r.total)
       << " (encoder modules " << thousands(r.peft) << ")\n";
  os << "with the decoder at 4.34M:\n";
  for (const auto& r : full_scale_parameter_table(4'340'000))
    os << "  " << std::left << std::setw(14) << r.method << std::right << std::fixed << std::setprecision(2)
       << static_cast<double>(r.total) / 1e6 << "M\n"
       << std::defaultfloat;
}

AggregateReport aggregate_from_json(const Json& j) {
  auto val = [](const Json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
  AggregateReport r;
  for (auto it = j.at("metrics").begin(); it != j.at("metrics").end(); ++it)
    r.metrics[it.key()] = {val(it->at("mean")), val(it->at("std"))};
  for (const auto& v : j.at("per_class_iou")) r.per_class_iou.push_back({val(v.at("mean")), val(v.at("std"))});
  r.runs = j.at("runs").get<std::size_t>();
  r.single_run = j.at("single_run").get<bool>();
  return r;
}

void cmd_plot(const Json& cfg, const CommandContext& ctx) {
  (void)cfg;
  const auto evald = ctx.root / "eval";
  const auto src = evald / "aggregates.jsonl";
  require_file(src, "eval");
  if (ctx.dry_run) {
    out(ctx) << "plot: would redraw " << (evald / "per_class_iou.svg").string() << " from " << src.string() << "\n";
    return;
  }
  std::ifstream in(src);
  std::vector<TableRow> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = Json::parse(line);
    rows.push_back({j.at("label").get<std::string>(), j.at("trainable_parameters").get<std::int64_t>(),
                    aggregate_from_json(j.at("aggregate"))});
  }
  std::ofstream csv(evald / "per_class_iou.csv");
  write_per_class_csv(csv, rows, default_class_names());
  std::ofstream svg(evald / "per_class_iou.svg");
  write_per_class_svg(svg, rows, default_class_names());
  out(ctx) << "plot: " << rows.size() << " series written to " << (evald / "per_class_iou.svg").string() << "\n";
}

}  // namespace peftseg
