#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "peftseg/config.hpp"
#include "peftseg/errors.hpp"

using namespace peftseg;

TEST_CASE("unknown keys suggest the nearest known key") {
  auto cfg = default_config();
  try {
    merge_config(cfg, Json::parse(R"({"optim": {"base_rl": 0.1}})"));
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("optim.base_lr") != std::string::npos);
  }
  CHECK(edit_distance("kitten", "sitting") == 3);
  CHECK(nearest_key("run.epoch", config_keys(cfg)) == "run.epochs");
}

TEST_CASE("type mismatches and bad values are rejected") {
  auto cfg = default_config();
  CHECK_THROWS_AS(merge_config(cfg, Json::parse(R"({"run": {"epochs": "many"}})")), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "no_equals_sign"), ConfigError);
  apply_override(cfg, "peft.kind=\"unicorn\"");
  CHECK_THROWS_AS(selected_methods(cfg), ConfigError);
}

TEST_CASE("overrides reach the typed configs") {
  auto cfg = default_config();
  apply_override(cfg, "optim.base_lr=0.01");
  apply_override(cfg, "peft.lora.rank=8");
  apply_override(cfg, "schedule.decay=step");
  CHECK(train_config(cfg).optim.base_lr == 0.01);
  CHECK(train_config(cfg).schedule.decay == DecayKind::step);
  CHECK(model_config(cfg, PeftKind::lora).method.lora->rank == 8);
  CHECK_FALSE(model_config(cfg, PeftKind::decoder_only).method.lora.has_value());
}

TEST_CASE("method selection") {
  auto cfg = default_config();
  CHECK(selected_methods(cfg).size() == 4);
  apply_override(cfg, "peft.kind=\"lora,decoder_only\"");
  CHECK(selected_methods(cfg) == std::vector<PeftKind>{PeftKind::lora, PeftKind::decoder_only});
}

TEST_CASE("every default key is reachable and the defaults validate") {
  const auto cfg = default_config();
  const auto keys = config_keys(cfg);
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  CHECK(std::find(keys.begin(), keys.end(), "zeroshot.grid_dims") != keys.end());
  for (auto kind : selected_methods(cfg)) CHECK_NOTHROW(model_config(cfg, kind).validate());
  CHECK_NOTHROW(zeroshot_config(cfg).validate());
}

TEST_CASE("config files load and reject unknown sections") {
  const auto dir = std::filesystem::temp_directory_path() / "peftseg_cfg_test";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "ok.json") << R"({"run": {"epochs": 3}, "peft": {"kind": "lora"}})";
  std::ofstream(dir / "bad.json") << R"({"runn": {"epochs": 3}})";
  std::ofstream(dir / "broken.json") << "{ not json";
  const auto cfg = load_config(dir / "ok.json");
  CHECK(cfg["run"]["epochs"] == 3);
  CHECK(cfg["optim"]["momentum"] == default_config()["optim"]["momentum"]);
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
  std::filesystem::remove_all(dir);
}
