// Command-line front end: coeffs, train, sample, eval, compare, inpaint.
// Exit codes: 0 success, 2 configuration error, 3 numeric abort.

#include "difflab/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

namespace {

difflab::ExperimentConfig load_config(const std::string& config_path,
                                      const std::vector<std::string>& overrides,
                                      const std::string& out_dir) {
  nlohmann::json doc = nlohmann::json::object();
  if (!config_path.empty())
    doc = nlohmann::json::parse(difflab::read_text_file(config_path));
  for (const auto& ov : overrides) difflab::apply_override(doc, ov);
  auto cfg = difflab::config_from_json(doc);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale diffusion backdoor laboratory"};
  app.fallthrough();  // global options may follow the subcommand
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON experiment config");
  app.add_option("--out", out_dir, "Output directory (overrides config)");
  app.add_option("--set", overrides, "Dotted-path override, e.g. training.steps=8000");

  auto* coeffs = app.add_subcommand("coeffs", "Dump scheduler/transition coefficients as CSV");

  auto* train = app.add_subcommand("train", "Train a model and write checkpoint + log");
  std::string variant = "unified";
  std::string tag = "checkpoint";
  train->add_option("--variant", variant, "unified | baddiffusion");
  train->add_option("--tag", tag, "Checkpoint base name");

  auto* sample = app.add_subcommand("sample", "Generate clean or backdoor samples");
  std::string checkpoint;
  std::string which = "clean";
  sample->add_option("--checkpoint", checkpoint, "Checkpoint base path")->required();
  sample->add_option("--which", which, "clean | backdoor");

  auto* eval = app.add_subcommand("eval", "Evaluate a sample dump");
  std::string samples_base, target_base, cleanset_base;
  eval->add_option("--samples", samples_base, "Sample dump base path")->required();
  eval->add_option("--target", target_base, "Target dump base path (1 row)");
  eval->add_option("--cleanset", cleanset_base, "Clean reference dump base path");

  auto* compare = app.add_subcommand("compare", "Train loss variants and compare samplers");

  auto* inpaint = app.add_subcommand("inpaint", "Restore corrupted toy images");
  std::string inpaint_checkpoint;
  inpaint->add_option("--checkpoint", inpaint_checkpoint, "Checkpoint base path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = load_config(config_path, overrides, out_dir);
    if (coeffs->parsed()) {
      std::printf("%s\n", difflab::cmd_coeffs(cfg).c_str());
    } else if (train->parsed()) {
      difflab::LossVariant lv = difflab::LossVariant::Unified;
      if (variant == "baddiffusion")
        lv = difflab::LossVariant::BadDiffusionOracle;
      else if (variant != "unified")
        throw difflab::ConfigError("unknown loss variant: " + variant);
      std::printf("%s\n", difflab::cmd_train(cfg, lv, tag).c_str());
    } else if (sample->parsed()) {
      for (const auto& path : difflab::cmd_sample(cfg, checkpoint, which))
        std::printf("%s\n", path.c_str());
    } else if (eval->parsed()) {
      std::printf("%s\n",
                  difflab::cmd_eval(cfg, samples_base, target_base, cleanset_base).c_str());
    } else if (compare->parsed()) {
      std::printf("%s\n", difflab::cmd_compare(cfg).c_str());
    } else if (inpaint->parsed()) {
      std::printf("%s\n", difflab::cmd_inpaint(cfg, inpaint_checkpoint).c_str());
    }
  } catch (const difflab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const difflab::NumericError& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
