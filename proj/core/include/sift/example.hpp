#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sift {

enum class Paradigm { TSIT, SIT, SIFT };
enum class Scope { s, sp, ssp };
enum class StageTag { stage1, stage2 };

std::string_view to_string(Paradigm p);
std::string_view to_string(Scope s);
std::string_view to_string(StageTag s);
StageTag stage_tag_from_string(std::string_view s);

// One of the seven valid paradigm x scope combinations, e.g. "SIFT_sp".
struct ConfigTag {
  Paradigm paradigm = Paradigm::SIFT;
  Scope scope = Scope::s;

  std::string str() const;
  // Semantic-only configurations feed stage 1; the rest feed stage 2.
  StageTag default_stage() const { return scope == Scope::s ? StageTag::stage1 : StageTag::stage2; }
  // Throws UnknownConfigTag.
  static ConfigTag parse(std::string_view tag);
  static const std::vector<ConfigTag>& all();
  friend bool operator==(const ConfigTag&, const ConfigTag&) = default;
};

// A self-generated (x, y) training pair in chat form. The audio slot stands in
// for the oracle text that produced `target`.
struct TrainingExample {
  std::string record_id;
  std::optional<std::string> system;
  std::string user_prefix;
  bool audio_slot = true;
  std::string user_suffix;
  std::string target;
  std::string config_tag;
  StageTag stage_tag = StageTag::stage1;

  // Checks the type invariants; throws InvalidSpec.
  void validate() const;
  friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

std::string to_json_line(const TrainingExample& e);
TrainingExample example_from_json_line(std::string_view line);
std::string serialize_dataset(const std::vector<TrainingExample>& examples);
std::vector<TrainingExample> parse_dataset(std::string_view text);
std::vector<TrainingExample> load_dataset(const std::string& path);

}  // namespace sift
