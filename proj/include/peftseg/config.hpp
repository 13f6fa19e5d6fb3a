#pragma once

// Run configuration. One JSON document drives every command; the defaults
// below double as the schema, so a key that is not in the defaults is an
// error and every value must keep its default's type.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "peftseg/geo.hpp"
#include "peftseg/model.hpp"
#include "peftseg/train.hpp"
#include "peftseg/zeroshot.hpp"

namespace peftseg {

using Json = nlohmann::json;

/// Desk-scale defaults for every section (synth, sampling, encoder, decoder,
/// peft, model, optim, schedule, loss, run, zeroshot).
Json default_config();

/// Defaults overlaid with the file's contents. Throws ConfigError on parse
/// failures, unknown keys and type mismatches.
Json load_config(const std::filesystem::path& path);

/// Overlays `overrides` onto `base` with the same checks as load_config.
void merge_config(Json& base, const Json& overrides);

/// Applies one "dotted.key=value" assignment. The value is parsed as JSON
/// and taken as a plain string when that fails.
void apply_override(Json& cfg, const std::string& assignment);

/// Every leaf key in dotted form, sorted.
std::vector<std::string> config_keys(const Json& cfg);

/// Closest candidate by edit distance (empty when there are no candidates).
std::string nearest_key(const std::string& key, const std::vector<std::string>& candidates);
std::size_t edit_distance(const std::string& a, const std::string& b);

/// Methods selected by peft.kind: "all", one name, or a comma-separated list.
std::vector<PeftKind> selected_methods(const Json& cfg);

ModelConfig model_config(const Json& cfg, PeftKind kind);
TrainConfig train_config(const Json& cfg);
SamplingOptions sampling_options(const Json& cfg);
SyntheticFieldSpec synth_spec(const Json& cfg);
ZeroShotConfig zeroshot_config(const Json& cfg);

}  // namespace peftseg
