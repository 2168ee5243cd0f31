#pragma once

#include <chrono>
#include <functional>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sift/checkpoint.hpp"
#include "sift/datagen.hpp"
#include "sift/runtime.hpp"

namespace sift::training {

enum class OptimizerKind { sgd, adam };
enum class Schedule { constant, cosine };

std::string_view to_string(OptimizerKind k);
std::string_view to_string(Schedule s);
OptimizerKind optimizer_kind_from_string(std::string_view s);
Schedule schedule_from_string(std::string_view s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  Schedule schedule = Schedule::constant;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // Learning rate for 0-based update `step` of `steps`.
  double lr_at(int step, int steps) const;
};

struct Stage {
  std::string name;
  datagen::DatasetMix mix;
  std::set<ParamGroup> trainable;
  int steps = 0;
  int batch_size = 8;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  // Throws InvalidSpec.
  void validate() const;
};

struct StagePlan {
  std::string name;
  std::vector<Stage> stages;

  void validate() const;
};

// Source of training examples for one stage. Returns nullptr when exhausted.
class ExampleStream {
 public:
  virtual ~ExampleStream() = default;
  virtual const TrainingExample* next() = 0;
};

// Endless draws with replacement from a mix; the order depends only on the
// seed.
class MixStream final : public ExampleStream {
 public:
  MixStream(datagen::DatasetMix mix, std::uint64_t seed);
  const TrainingExample* next() override;

 private:
  datagen::DatasetMix mix_;
  datagen::MixSampler sampler_;
  Rng rng_;
};

// Walks a fixed list once.
class ListStream final : public ExampleStream {
 public:
  explicit ListStream(std::vector<TrainingExample> examples) : examples_(std::move(examples)) {}
  const TrainingExample* next() override;

 private:
  std::vector<TrainingExample> examples_;
  std::size_t pos_ = 0;
};

struct StepRecord {
  std::int64_t step = 0;
  std::string stage;
  double loss = 0.0;
  std::size_t masked_tokens = 0;
  std::size_t correct_tokens = 0;
  std::map<ParamGroup, double> grad_norms;
  double lr = 0.0;
};

struct StageRecord {
  std::string stage;
  std::int64_t first_step = 0;
  std::int64_t steps = 0;
  std::string input_hash;
  std::string output_hash;
  std::map<ParamGroup, std::string> group_hashes;
  std::vector<std::string> config_tags;  // distinct tags in the stage's mix
  double wall_seconds = 0.0;             // kept out of the JSONL form
};

// Append-only training log with contiguous step indices.
class RunLedger {
 public:
  void append(StepRecord r);  // throws InvalidSpec on a non-contiguous step
  void close_stage(StageRecord r);
  std::int64_t next_step() const { return static_cast<std::int64_t>(steps_.size()); }
  const std::vector<StepRecord>& steps() const { return steps_; }
  const std::vector<StageRecord>& stages() const { return stages_; }

  // One JSON object per line: step records
  //   {"step","stage","loss","masked_tokens","grad_norms":{...},"lr"}
  // followed, at each stage end, by
  //   {"event":"stage_end","stage","first_step","steps","input_hash","output_hash","group_hashes","config_tags"}
  // Wall-clock time is excluded so that equal runs give equal bytes.
  std::string to_jsonl() const;
  // Inverse of to_jsonl (wall_seconds reads back as 0). Throws MalformedRecord.
  static RunLedger from_jsonl(std::string_view text);

 private:
  std::vector<StepRecord> steps_;
  std::vector<StageRecord> stages_;
};

// Applies exactly stage.steps updates to the trainable groups of `start`.
// Frozen groups are copied through untouched. Throws NonFiniteLoss with a
// diagnostic dump, or StreamExhausted.
Checkpoint run_stage(const Stage& stage, const Checkpoint& start, ExampleStream& stream, const Runtime& runtime,
                     RunLedger& ledger);

// Runs the stages in order, each from the previous checkpoint, drawing from
// MixStream(stage.mix, derive_seed(stage.seed, {0})). `on_stage_end`, if set,
// sees every intermediate checkpoint. Resuming after an interruption: pass the
// last completed stage's checkpoint as `init` and the next stage index as
// `first_stage`; the result is identical to an uninterrupted run.
Checkpoint run_plan(const StagePlan& plan, const Checkpoint& init, const Runtime& runtime, RunLedger& ledger,
                    const std::function<void(const Stage&, const Checkpoint&)>& on_stage_end = {},
                    std::size_t first_stage = 0);

// Canonical plans. Datasets are looked up by config tag (e.g. "SIFT_s").
struct PresetOptions {
  int stage1_steps = 1000;
  int stage2_steps = 1000;
  int batch_size = 8;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  datagen::MixStrategy strategy = datagen::MixStrategy::proportional;
};

using DatasetsByTag = std::map<std::string, std::shared_ptr<const std::vector<TrainingExample>>>;

// Preset names:
//   two_stage        SIFT_s on proj_semantic, then SIFT_sp on proj_paralinguistic
//   two_stage_mixed  as two_stage, stage 2 on SIFT_s + SIFT_sp
//   one_stage        SIFT_s + SIFT_sp jointly on both projectors
//   ssp_mitigation   SIFT_s, then SIFT_ssp + SIT_ssp on proj_paralinguistic
//   single:<TAG>     one stage on the TAG dataset; scope s trains the semantic
//                    projector, other scopes the paralinguistic one
// Throws InvalidSpec for unknown names and EmptyComponent for missing data.
StagePlan preset_plan(std::string_view name, const DatasetsByTag& datasets, const PresetOptions& options);
const std::vector<std::string>& preset_names();

// Fresh model: uniform semantic projector and zero-output paralinguistic
// projector, each seeded from derive_seed(seed, {group}).
Checkpoint init_checkpoint(const model::ProjectorConfig& semantic, const std::optional<model::ProjectorConfig>& para,
                           std::uint64_t seed);

}  // namespace sift::training
