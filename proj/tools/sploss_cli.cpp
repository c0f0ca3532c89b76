#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sploss/pipeline.hpp"

using namespace sploss;

namespace {

enum Exit { ok = 0, config_error = 1, runtime_error = 2 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
};

void add_common(CLI::App* cmd, Common& c, bool checkpoint) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required();
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--out", c.out, "overrides the config output_dir");
  if (checkpoint) cmd->add_option("--checkpoint", c.checkpoint, "model file (default <out>/model_best.spnet)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.output_dir = *c.out;
  return cfg;
}

fs::path checkpoint_of(const Common& c, const ExperimentConfig& cfg) {
  const fs::path p = c.checkpoint ? fs::path(*c.checkpoint) : default_checkpoint(cfg);
  if (!fs::is_regular_file(p)) throw ConfigError("checkpoint '" + p.string() + "' does not exist");
  return p;
}

void print(const SummarySection& s) {
  for (const auto& [k, v] : s.entries)
    if (k.rfind("artifact.", 0) != 0) std::cout << k << '=' << v << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sploss: stationary-point losses, toy geometry and adversarial evaluation"};
  app.require_subcommand(1);
  Common common;

  auto* train_cmd = app.add_subcommand("train", "train a model and save best/final checkpoints");
  add_common(train_cmd, common, false);
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "no per-epoch log lines");

  auto* attack_cmd = app.add_subcommand("attack", "run the configured attacks against a checkpoint");
  add_common(attack_cmd, common, true);

  auto* analyze_cmd = app.add_subcommand("analyze", "boundary, landscape and midpoint analysis of a checkpoint");
  add_common(analyze_cmd, common, true);

  auto* sweep_cmd = app.add_subcommand("sweep", "robust accuracy over an epsilon list");
  add_common(sweep_cmd, common, true);

  auto* stat_cmd = app.add_subcommand("stationary", "locate the binary stationary point of a loss");
  std::string loss_kind = "sp_ce";
  std::optional<std::string> variant;
  LossSpec defaults;
  double eta = 1.0, alpha = defaults.alpha, gamma = defaults.gamma;
  bool full_vector = false;
  std::optional<std::string> stat_config, stat_out;
  stat_cmd->add_option("--loss", loss_kind, "ce | focal | sp_ce | sp_focal | grad_starvation");
  stat_cmd->add_option("--variant", variant, "sp_ce variant: single_term | with_complement");
  stat_cmd->add_option("--eta", eta, "regularizer weight");
  stat_cmd->add_option("--alpha", alpha, "focal alpha");
  stat_cmd->add_option("--gamma", gamma, "focal gamma");
  stat_cmd->add_flag("--full-vector", full_vector, "regularize every class probability");
  stat_cmd->add_option("--config", stat_config, "take the loss from this config instead");
  stat_cmd->add_option("--out", stat_out, "also write loss_curve.csv and a summary section here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }

  try {
    if (*train_cmd) {
      const ExperimentConfig cfg = resolve(common);
      const auto o = cmd_train(cfg, [&](const EpochLog& e) {
        if (!quiet)
          std::printf("epoch %zu loss %.6f train_acc %.4f test_acc %.4f\n", e.epoch, e.train_loss, e.train_accuracy,
                      e.test_accuracy);
      });
      print(o.summary);
    } else if (*attack_cmd) {
      const ExperimentConfig cfg = resolve(common);
      if (cfg.attacks.empty()) throw ConfigError("config has no attacks");
      print(cmd_attack(cfg, checkpoint_of(common, cfg)).summary);
    } else if (*analyze_cmd) {
      const ExperimentConfig cfg = resolve(common);
      const auto o = cmd_analyze(cfg, checkpoint_of(common, cfg));
      if (o.artifacts.empty()) std::cout << "analysis disabled: nothing written\n";
      print(o.summary);
    } else if (*sweep_cmd) {
      const ExperimentConfig cfg = resolve(common);
      print(cmd_sweep(cfg, checkpoint_of(common, cfg)).summary);
    } else if (*stat_cmd) {
      LossSpec spec;
      if (stat_config) {
        spec = load_config(*stat_config).loss;
      } else {
        Json j;
        j["kind"] = loss_kind;
        const LossKind k = parse_loss_kind(loss_kind);
        if (k == LossKind::focal || k == LossKind::sp_focal) {
          j["alpha"] = alpha;
          j["gamma"] = gamma;
        }
        if (k != LossKind::ce && k != LossKind::focal) j["eta"] = eta;
        if (variant) j["variant"] = *variant;
        if (full_vector) j["full_vector"] = true;
        spec = detail::parse_loss(j, "stationary");
      }
      std::optional<fs::path> out;
      if (stat_out) out = fs::path(*stat_out);
      std::cout << cmd_stationary(spec, out).text;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const InvalidArgument& e) {
    // bad flag values for the loss land here when parsed outside a config
    std::cerr << "error: " << e.what() << '\n';
    return *stat_cmd ? config_error : runtime_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return runtime_error;
  }
  return ok;
}
