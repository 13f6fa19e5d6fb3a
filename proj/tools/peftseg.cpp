// peftseg: synthetic data, window sampling, PEFT training, evaluation and the
// zero-shot baseline from one config file.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
// 1 anything else.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "peftseg/config.hpp"
#include "peftseg/errors.hpp"
#include "peftseg/pipeline.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_root;
  bool dry_run = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON run config (defaults apply to missing keys)");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set optim.base_lr=0.01")->take_all();
  cmd->add_option("-o,--out", c.out_root, "Output root (default: $PEFTSEG_OUTPUT_ROOT or ./peftseg_out)");
  cmd->add_flag("--dry-run", c.dry_run, "Print the plan and write nothing");
}

std::string join_args(int argc, char** argv) {
  std::ostringstream os;
  for (int i = 0; i < argc; ++i) os << (i ? " " : "") << argv[i];
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace peftseg;
  CLI::App app{"Parameter-efficient segmentation toolkit"};
  app.require_subcommand(1);

  Common common;
  std::int64_t train_samples = -1;
  std::string methods, seeds;
  std::int64_t epochs = -1;
  bool ablate_dense = false;
  std::string export_dir;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic orthomosaic, labels and boundary");
  auto* sample = app.add_subcommand("sample", "Write train (random) and test (grid) window manifests");
  auto* trn = app.add_subcommand("train", "Train every selected method x seed");
  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints and write reports, table and chart data");
  auto* zs = app.add_subcommand("zeroshot", "Grid-prompt zero-shot baseline with the stub segmenter");
  auto* params = app.add_subcommand("params", "Print trainable-parameter counts");
  auto* plot = app.add_subcommand("plot", "Redraw the per-class IoU chart from eval aggregates");
  auto* show = app.add_subcommand("config", "Print the effective config");
  for (auto* c : {synth, sample, trn, ev, zs, params, plot, show}) add_common(c, common);
  sample->add_option("--train-samples", train_samples, "Number of random train windows");
  for (auto* c : {trn, ev, params}) c->add_option("--methods", methods, "Comma-separated methods or 'all'");
  for (auto* c : {trn, ev}) {
    c->add_option("--seeds", seeds, "Comma-separated run seeds");
    c->add_flag("--ablate-dense", ablate_dense, "Run both with and without the learned dense embedding");
  }
  trn->add_option("--epochs", epochs, "Training epochs");
  params->add_option("--export-partition", export_dir, "Write each method's trainable/frozen path list here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    Json cfg = common.config_path.empty() ? default_config() : load_config(common.config_path);
    for (const auto& o : common.overrides) apply_override(cfg, o);
    if (train_samples >= 0) apply_override(cfg, "sampling.train_windows=" + std::to_string(train_samples));
    if (!methods.empty()) apply_override(cfg, "peft.kind=\"" + methods + "\"");
    if (epochs >= 0) apply_override(cfg, "run.epochs=" + std::to_string(epochs));
    if (!seeds.empty()) {
      Json list = Json::array();
      std::stringstream ss(seeds);
      for (std::string s; std::getline(ss, s, ',');)
        if (!s.empty()) list.push_back(std::stoull(s));
      merge_config(cfg, Json{{"run", {{"seeds", list}}}});
    }

    CommandContext ctx{resolve_output_root(common.out_root), common.dry_run, &std::cout, join_args(argc, argv)};
    if (*synth) cmd_synth(cfg, ctx);
    if (*sample) cmd_sample(cfg, ctx);
    if (*trn) cmd_train(cfg, ctx, ablate_dense);
    if (*ev) cmd_eval(cfg, ctx, ablate_dense);
    if (*zs) cmd_zeroshot(cfg, ctx);
    if (*params) cmd_params(cfg, ctx, export_dir);
    if (*plot) cmd_plot(cfg, ctx);
    if (*show) std::cout << cfg.dump(2) << '\n';
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const IntegrityError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
