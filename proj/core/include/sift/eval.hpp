#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sift/checkpoint.hpp"
#include "sift/datagen.hpp"
#include "sift/runtime.hpp"
#include "sift/training.hpp"

namespace sift::eval {

// 1 - cos(mean row of audio, mean row of oracle), in [0, 2]. Throws
// ZeroVector if either pooled vector is zero and InvalidSpec on empty input.
double alignment_distance(const Matrix& audio_embeds, const Matrix& oracle_embeds);

struct AlignmentItem {
  std::string record_id;
  std::string config_tag;
  double distance = 0.0;
  double target_ce = 0.0;
  std::size_t target_tokens = 0;
  std::size_t correct_tokens = 0;
  bool greedy_match = false;
};

struct AlignmentReport {
  std::vector<AlignmentItem> items;
  double mean_distance = 0.0;
  double mean_ce = 0.0;
  double match_rate = 0.0;
  double token_accuracy = 0.0;  // pooled over every masked position
};

// For every example: distance between its fused audio and the embedded oracle
// text of its scope, teacher-forced target CE and accuracy, and whether greedy
// decoding reproduces the target. `decode` only matters when with_generation.
AlignmentReport alignment_report(const Runtime& runtime, const Checkpoint& ckpt,
                                 const std::vector<TrainingExample>& examples, bool with_generation,
                                 const model::DecodeParams& decode = {});

struct ProbeResult {
  std::string attribute;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  double chance = 0.0;  // 1 / number of distinct labels
  std::size_t n_train = 0;
  std::size_t n_heldout = 0;
};

// Records whose fnv1a64(id) % 5 == 0 form the held-out fifth.
bool is_probe_heldout(const std::string& record_id);

// One-vs-rest ridge regression on rows of `features` (with a bias column),
// split by record id. Throws SingleClass when fewer than two labels appear
// among the training rows, InvalidSpec on size mismatch.
ProbeResult fit_probe(const Matrix& features, const std::vector<std::string>& labels,
                      const std::vector<std::string>& record_ids, const std::string& attribute, double ridge = 1e-3);

// Probe over mean-pooled fused audio embeddings of `records`.
ProbeResult probe_attribute(const Runtime& runtime, const Checkpoint& ckpt,
                            const std::vector<corpus::SpeechRecord>& records, const std::string& attribute,
                            double ridge = 1e-3);

struct GenerationItem {
  std::string record_id;
  std::optional<std::string> instruction;
  std::optional<std::string> system;
  std::optional<std::string> reference;
};

struct GenerationResult {
  GenerationItem item;
  std::string text;
  std::string finish_reason;
  std::optional<bool> exact;            // when a reference exists
  std::optional<double> token_accuracy;  // matching positions / max(len)
};

struct GenerationReport {
  std::vector<GenerationResult> results;
  std::size_t with_reference = 0;
  double exact_rate = 0.0;
  double mean_token_accuracy = 0.0;
};

// Greedy or sampled generation per item; items are independent.
GenerationReport eval_generation(const Runtime& runtime, const Checkpoint& ckpt,
                                 const std::vector<GenerationItem>& items, const model::DecodeParams& decode);

// Items whose reference is the programmatic transcript+transcript answer to a
// "repeat the transcript twice" instruction.
std::vector<GenerationItem> repeat_twice_items(const std::vector<corpus::SpeechRecord>& records,
                                               const std::string& instruction);

// First digit 1-5 in the text that is not part of a longer number.
std::optional<int> parse_judge_score(std::string_view text);

struct JudgeItem {
  std::string record_id;
  std::optional<int> score;
  bool flagged = false;
  std::string raw;
};

struct JudgeReport {
  std::vector<JudgeItem> items;
  std::size_t scored = 0;
  double mean_score = 0.0;  // over unflagged items
};

// Sends each (instruction, response) pair to the judge with the rubric as
// system prompt. Transport failures are retried per the policy; an item that
// still fails is flagged.
JudgeReport judge_responses(const std::vector<GenerationResult>& generations, datagen::LLMClient& judge,
                            const std::string& rubric, const datagen::DatagenOptions& options = {});

// Table and figure output.
struct ReportBundle {
  const training::RunLedger* ledger = nullptr;
  std::vector<std::pair<std::string, AlignmentReport>> alignment;  // label -> report
  std::vector<ProbeResult> probes;
  const GenerationReport* generation = nullptr;
  const JudgeReport* judge = nullptr;  // nullptr -> "skipped"
};

// Writes, into out_dir:
//   ledger.csv       step,stage,loss,masked_tokens,correct_tokens,lr,grad_norm_semantic,grad_norm_paralinguistic
//   alignment.csv    label,record_id,config_tag,distance,target_ce,target_tokens,correct_tokens,greedy_match
//   probes.csv       attribute,train_accuracy,heldout_accuracy,chance,n_train,n_heldout
//   generation.csv   record_id,instruction,reference,text,finish_reason,exact,token_accuracy
//   judge.csv        record_id,score,flagged   (header plus a "skipped" line when no judge ran)
//   loss_curve.svg, distance_hist.svg, probe_accuracy.svg
// Returns the written paths in that order. Output is a pure function of the
// inputs. Throws IoError.
std::vector<std::string> emit_report(const ReportBundle& bundle, const std::string& out_dir);

// Number of <circle> points in a loss curve written by emit_report.
std::size_t count_svg_points(std::string_view svg);

}  // namespace sift::eval
