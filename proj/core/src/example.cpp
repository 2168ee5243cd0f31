#include "sift/example.hpp"

#include "json.hpp"
#include "sift/common.hpp"

namespace sift {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Paradigm p) {
  switch (p) {
    case Paradigm::TSIT: return "TSIT";
    case Paradigm::SIT: return "SIT";
    case Paradigm::SIFT: return "SIFT";
  }
  return "?";
}

std::string_view to_string(Scope s) {
  switch (s) {
    case Scope::s: return "s";
    case Scope::sp: return "sp";
    case Scope::ssp: return "ssp";
  }
  return "?";
}

std::string_view to_string(StageTag s) { return s == StageTag::stage1 ? "stage1" : "stage2"; }

StageTag stage_tag_from_string(std::string_view s) {
  if (s == "stage1") return StageTag::stage1;
  if (s == "stage2") return StageTag::stage2;
  throw InvalidSpec("unknown stage tag '" + std::string(s) + "'");
}

std::string ConfigTag::str() const {
  return std::string(to_string(paradigm)) + "_" + std::string(to_string(scope));
}

const std::vector<ConfigTag>& ConfigTag::all() {
  static const std::vector<ConfigTag> kAll = {
      {Paradigm::TSIT, Scope::s},  {Paradigm::SIT, Scope::s},   {Paradigm::SIFT, Scope::s},
      {Paradigm::SIT, Scope::sp},  {Paradigm::SIFT, Scope::sp}, {Paradigm::SIT, Scope::ssp},
      {Paradigm::SIFT, Scope::ssp},
  };
  return kAll;
}

ConfigTag ConfigTag::parse(std::string_view tag) {
  for (const auto& c : all())
    if (c.str() == tag) return c;
  throw UnknownConfigTag("'" + std::string(tag) + "' is not one of TSIT_s, SIT_s, SIFT_s, SIT_sp, SIFT_sp, SIT_ssp, SIFT_ssp");
}

void TrainingExample::validate() const {
  if (record_id.empty()) throw InvalidSpec("training example without record_id");
  if (target.empty()) throw InvalidSpec(record_id + ": empty target");
  const ConfigTag tag = ConfigTag::parse(config_tag);
  if (tag.paradigm == Paradigm::SIFT && !user_suffix.empty())
    throw InvalidSpec(record_id + ": SIFT example carries an instruction");
}

std::string to_json_line(const TrainingExample& e) {
  ordered_json j;
  j["record_id"] = e.record_id;
  j["system"] = e.system ? ordered_json(*e.system) : ordered_json(nullptr);
  j["user_prefix"] = e.user_prefix;
  j["audio_slot"] = e.audio_slot;
  j["user_suffix"] = e.user_suffix;
  j["target"] = e.target;
  j["config_tag"] = e.config_tag;
  j["stage_tag"] = std::string(to_string(e.stage_tag));
  return j.dump();
}

TrainingExample example_from_json_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& err) {
    throw MalformedRecord(err.what());
  }
  static const char* kKeys[] = {"record_id", "system",     "user_prefix", "audio_slot",
                                "user_suffix", "target", "config_tag",  "stage_tag"};
  if (!j.is_object() || j.size() != std::size(kKeys)) throw MalformedRecord("training example must have exactly 8 fields");
  for (const char* k : kKeys)
    if (!j.contains(k)) throw MalformedRecord(std::string("missing field '") + k + "'");
  try {
    TrainingExample e;
    e.record_id = j.at("record_id").get<std::string>();
    if (!j.at("system").is_null()) e.system = j.at("system").get<std::string>();
    e.user_prefix = j.at("user_prefix").get<std::string>();
    e.audio_slot = j.at("audio_slot").get<bool>();
    e.user_suffix = j.at("user_suffix").get<std::string>();
    e.target = j.at("target").get<std::string>();
    e.config_tag = j.at("config_tag").get<std::string>();
    e.stage_tag = stage_tag_from_string(j.at("stage_tag").get<std::string>());
    return e;
  } catch (const json::exception& err) {
    throw MalformedRecord(err.what());
  }
}

std::string serialize_dataset(const std::vector<TrainingExample>& examples) {
  std::string out;
  for (const auto& e : examples) {
    out += to_json_line(e);
    out += '\n';
  }
  return out;
}

std::vector<TrainingExample> parse_dataset(std::string_view text) {
  std::vector<TrainingExample> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json_line(line));
    } catch (const MalformedRecord& e) {
      throw MalformedRecord("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TrainingExample> load_dataset(const std::string& path) { return parse_dataset(read_file(path)); }

}  // namespace sift
