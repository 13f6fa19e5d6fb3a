#pragma once

// Command implementations behind the CLI. Every command reads the run config,
// works under one output root and records a run manifest next to what it
// wrote.
//
//   <root>/synth/     image.tif labels.tif boundary.geojson
//   <root>/sample/    train.jsonl test.jsonl [windows/<split>/<id>/]
//   <root>/train/<method>/<variant>/seed_<s>/   checkpoint.bin log.jsonl
//   <root>/eval/      runs.jsonl aggregates.jsonl table.txt per_class_iou.{csv,svg}
//   <root>/zeroshot/  report.json

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "peftseg/config.hpp"
#include "peftseg/eval.hpp"

namespace peftseg {

inline constexpr const char* kToolVersion = "0.1.0";

struct CommandContext {
  std::filesystem::path root;
  bool dry_run = false;
  std::ostream* out = nullptr;  // progress and summaries
  std::string command_line;     // recorded in the run manifest
};

/// Output root: the explicit value when non-empty, else $PEFTSEG_OUTPUT_ROOT,
/// else ./peftseg_out.
std::filesystem::path resolve_output_root(const std::string& explicit_root);

struct FieldPaths {
  std::filesystem::path image, labels, boundary;
};
FieldPaths field_paths(const std::filesystem::path& root);
std::filesystem::path manifest_path(const std::filesystem::path& root, Split split);
std::filesystem::path run_dir(const std::filesystem::path& root, PeftKind kind, bool dense, std::uint64_t seed);
std::string variant_name(bool dense);

void cmd_synth(const Json& cfg, const CommandContext& ctx);
void cmd_sample(const Json& cfg, const CommandContext& ctx);
/// One run per selected method x seed; with ablate_dense, once with and once
/// without the dense embedding.
void cmd_train(const Json& cfg, const CommandContext& ctx, bool ablate_dense);
void cmd_eval(const Json& cfg, const CommandContext& ctx, bool ablate_dense);
void cmd_zeroshot(const Json& cfg, const CommandContext& ctx);
/// Trainable-parameter counts at desk and full scale; optionally writes each
/// method's partition audit into export_dir.
void cmd_params(const Json& cfg, const CommandContext& ctx, const std::filesystem::path& export_dir);
/// Re-emits the per-class IoU chart from eval/aggregates.jsonl.
void cmd_plot(const Json& cfg, const CommandContext& ctx);

/// Loads windows of one split from the synth rasters, checking the manifest
/// checksums against the rasters. Throws InputError naming a missing file.
std::vector<WindowSample> load_split(const std::filesystem::path& root, Split split, int num_classes,
                                     std::vector<std::string>* ids = nullptr);

/// Full-scale reproduction of the trainable-parameter table.
struct ParameterTableRow {
  std::string method;
  std::int64_t peft = 0;
  std::int64_t total = 0;
};
std::vector<ParameterTableRow> full_scale_parameter_table(std::int64_t decoder_count);

AggregateReport aggregate_from_json(const Json& j);

}  // namespace peftseg
