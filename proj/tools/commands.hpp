#pragma once

#include <exception>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "run_config.hpp"
#include "sift/runtime.hpp"

namespace sift::cli {

// Output layout under RunConfig::output_dir:
//   world/corpus.jsonl, world/heldout.jsonl, world/features.bin, world/world.json
//   datasets/TAG.jsonl, datasets/TAG.quarantine.jsonl,
//   datasets/TAG.heldout.jsonl, datasets/TAG.heldout.quarantine.jsonl
//   train/PLAN/{init,STAGE...,final}.ckpt, train/PLAN/ledger.jsonl, train/PLAN/freeze.txt
//   eval/LABEL/{report files}, eval/LABEL/summary.json
//   report/PLAN/{report files}, report/PLAN/summary.json
class Layout {
 public:
  explicit Layout(std::string root) : root_(std::move(root)) {}
  std::string world_dir() const { return root_ + "/world"; }
  std::string dataset(const std::string& tag, bool heldout) const;
  std::string quarantine(const std::string& tag, bool heldout) const;
  std::string train_dir(const std::string& plan) const { return root_ + "/train/" + plan; }
  std::string eval_dir(const std::string& label) const { return root_ + "/eval/" + label; }
  std::string report_dir(const std::string& plan) const { return root_ + "/report/" + plan; }

 private:
  std::string root_;
};

// Everything a command needs past the corpus stage. The LM's lexicon is a
// function of the config (and, for external corpora, of the records), so
// every command rebuilds the same LM.
struct Pipeline {
  std::vector<corpus::SpeechRecord> train, heldout;
  std::shared_ptr<const model::ToyLM> lm;
  std::shared_ptr<corpus::EncoderSet> encoders;
  std::unique_ptr<Runtime> runtime;
};

// Loads the corpus named by the config (the world's output or an external
// corpus) and builds the frozen LM and runtime over train + held-out records.
Pipeline load_pipeline(const RunConfig& config);

struct CommandOptions {
  bool dry_run = false;
  std::ostream* log = nullptr;  // progress and summary lines; nullptr = silent
};

// Each command returns the paths it wrote (nothing on a dry run).
std::vector<std::string> cmd_world(const RunConfig& config, const CommandOptions& options);
std::vector<std::string> cmd_datagen(const RunConfig& config, const std::string& tag, const CommandOptions& options);
std::vector<std::string> cmd_train(const RunConfig& config, const std::string& plan, const CommandOptions& options);
std::vector<std::string> cmd_eval(const RunConfig& config, const std::string& checkpoint, const std::string& label,
                                  const CommandOptions& options);
// Evaluates every checkpoint of a trained plan (init and each stage) and
// writes one combined report with the plan's ledger.
std::vector<std::string> cmd_report(const RunConfig& config, const std::string& plan, const CommandOptions& options);

// 1 for configuration errors, 2 for everything else.
int exit_code_for(const std::exception& e);

}  // namespace sift::cli
