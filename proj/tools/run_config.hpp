#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sift/corpus.hpp"
#include "sift/datagen.hpp"
#include "sift/lm.hpp"
#include "sift/training.hpp"

namespace sift::cli {

// Every stream seed of a run. All are required in the config file.
struct Seeds {
  std::uint64_t world = 0;
  std::uint64_t lm = 0;
  std::uint64_t datagen = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
};

struct WorldSection {
  corpus::SyntheticWorldSpec spec;  // spec.seed comes from Seeds::world
  std::int64_t n_records = 0;
  std::int64_t n_heldout = 0;
  std::uint64_t heldout_first_index = 1000000;
};

// Paths of an externally prepared corpus; relative paths resolve against the
// config file's directory.
struct CorpusSection {
  std::string train;
  std::string heldout;
  std::string features;
};

struct ModelSection {
  model::ToyLMConfig lm;  // lexicon is derived, never configured
  int group = 4;
  int d_hidden = 128;
  bool bias = true;
  bool paralinguistic = true;
};

struct LlmEndpoint {
  std::string base_url;
  std::string model;
  std::string token_env;
  int timeout_ms = 60000;
};

struct DatagenSection {
  std::string llm = "toy";  // "toy" or a key of RunConfig::llm
  int max_in_flight = 4;
  datagen::RetryPolicy retry;
  model::DecodeParams decode;
  std::string system_prompt{datagen::kDialogSystemMessage};
  std::vector<std::string> sit_instructions{std::string(datagen::kDescribeInstruction)};
  std::vector<std::string> tsit_prompts;
};

struct StageSection {
  std::string name;
  std::vector<std::pair<std::string, double>> mix;  // config tag -> weight
  std::set<ParamGroup> trainable;
  int steps = 0;
  int batch_size = 8;
  training::OptimizerConfig optimizer;
  std::uint64_t seed = 0;
};

// Either a preset (with PresetOptions; its seed is Seeds::train) or explicit
// stages, each with its own seed.
struct PlanSection {
  std::optional<std::string> preset;
  training::PresetOptions options;
  datagen::MixStrategy strategy = datagen::MixStrategy::proportional;
  std::vector<StageSection> stages;
};

struct JudgeSection {
  std::string llm;
  std::string rubric;
  int max_in_flight = 2;
};

struct EvalSection {
  std::vector<std::string> attributes = {"emotion"};
  double ridge = 1e-3;
  std::vector<std::string> alignment_tags = {"SIFT_s", "SIFT_sp"};
  int alignment_items = 200;
  bool alignment_generation = true;
  std::string generation_instruction = "repeat the transcript twice";
  int generation_items = 50;
  model::DecodeParams decode;
  std::optional<JudgeSection> judge;
};

struct RunConfig {
  Seeds seeds;
  std::string output_dir;
  std::string base_dir;  // directory of the config file
  std::optional<WorldSection> world;
  std::optional<CorpusSection> corpus;
  ModelSection model;
  DatagenSection datagen;
  std::map<std::string, LlmEndpoint> llm;
  std::map<std::string, PlanSection> plans;
  EvalSection eval;

  std::string resolve(const std::string& path) const;
};

// Parses and validates a config document. Unknown keys, missing seeds, type
// errors and inconsistent sections raise ConfigError naming the JSON path.
RunConfig parse_run_config(std::string_view text, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path);

// Replaces every seed with one derived from `seed`, including explicit stage
// seeds.
void override_seeds(RunConfig& config, std::uint64_t seed);

}  // namespace sift::cli
