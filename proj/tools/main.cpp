#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

std::string default_label(const std::string& checkpoint) {
  const std::filesystem::path p(checkpoint);
  const std::string parent = p.parent_path().filename().string();
  return parent.empty() ? p.stem().string() : parent + "_" + p.stem().string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-generated instruction-free tuning pipeline for speech projectors"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed_override;
  bool dry_run = false;
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--out", out_dir, "Output directory (overrides output_dir)");
  app.add_option("--seed-override", seed_override, "Derive every seed from this value");
  app.add_flag("--dry-run", dry_run, "Validate and print the work plan without writing anything");

  auto* world = app.add_subcommand("world", "Write the synthetic corpus and its feature store");

  std::vector<std::string> tags;
  auto* datagen = app.add_subcommand("datagen", "Generate training targets for config tags");
  datagen->add_option("tags", tags, "Config tags, e.g. SIFT_s SIFT_sp")->required();

  std::string plan;
  auto* train = app.add_subcommand("train", "Run a training plan");
  train->add_option("plan", plan, "Plan name from the config")->required();

  std::string checkpoint, label;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--label", label, "Output subdirectory name (default: <dir>_<stem> of the checkpoint)");

  auto* report = app.add_subcommand("report", "Evaluate every checkpoint of a trained plan into one report");
  report->add_option("plan", plan, "Plan name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    sift::cli::RunConfig config = sift::cli::load_run_config(config_path);
    if (out_dir) config.output_dir = *out_dir;
    if (seed_override) sift::cli::override_seeds(config, *seed_override);
    sift::cli::CommandOptions options;
    options.dry_run = dry_run;
    options.log = &std::cout;

    if (world->parsed()) {
      sift::cli::cmd_world(config, options);
    } else if (datagen->parsed()) {
      for (const auto& tag : tags) sift::ConfigTag::parse(tag);
      for (const auto& tag : tags) sift::cli::cmd_datagen(config, tag, options);
    } else if (train->parsed()) {
      sift::cli::cmd_train(config, plan, options);
    } else if (eval->parsed()) {
      sift::cli::cmd_eval(config, checkpoint, label.empty() ? default_label(checkpoint) : label, options);
    } else if (report->parsed()) {
      sift::cli::cmd_report(config, plan, options);
    }
  } catch (const std::exception& e) {
    std::cerr << "sift: " << e.what() << "\n";
    return sift::cli::exit_code_for(e);
  }
  return 0;
}
