#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sift/common.hpp"

namespace sift::corpus {

enum class Branch { semantic, paralinguistic };

std::string_view to_string(Branch b);
Branch branch_from_string(std::string_view s);

// Attribute keys in the canonical rendering order.
inline constexpr std::array<std::string_view, 4> kAttributeKeys = {"age", "gender", "emotion",
                                                                   "language"};
bool is_attribute_key(std::string_view key);

struct SpeechRecord {
  std::string id;
  std::optional<std::string> feature_ref;
  std::string transcript;
  std::map<std::string, std::string> attributes;
  std::string source;
  double duration_s = 0.0;
  // True when the transcript was produced by a recognizer rather than a human.
  // Records with an empty transcript must leave this false and are skipped by datagen.
  bool transcript_generated = false;

  bool usable_for_datagen() const { return !transcript.empty(); }
};

struct FeatureMatrix {
  Matrix data;  // [T x d_enc]
  double frame_rate_hz = 25.0;
  Branch branch = Branch::semantic;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index width() const { return data.cols(); }
};

enum class CorpusSchema { jsonl_v1 };

// Parses a jsonl_v1 corpus. Throws MalformedRecord (with 1-based line number)
// or DuplicateId.
std::vector<SpeechRecord> load_corpus(const std::string& path,
                                      CorpusSchema schema = CorpusSchema::jsonl_v1);
std::vector<SpeechRecord> parse_corpus(std::string_view text,
                                       CorpusSchema schema = CorpusSchema::jsonl_v1);
std::string record_to_json_line(const SpeechRecord& r);
std::string serialize_corpus(const std::vector<SpeechRecord>& records);

struct SyntheticWorldSpec {
  std::uint64_t seed = 0;
  std::vector<std::string> vocab;
  int transcript_len_min = 3;
  int transcript_len_max = 8;
  // Keys must come from kAttributeKeys.
  std::map<std::string, std::vector<std::string>> attribute_vocab;
  int frames_per_symbol = 4;
  int d_enc = 32;
  double noise_sigma = 0.0;
  double frame_rate_hz = 25.0;
};

// Frozen generative model of the desk-scale world: fixed symbol embedding
// columns for the semantic branch and one offset vector per attribute value
// for the paralinguistic branch.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(SyntheticWorldSpec spec);

  const SyntheticWorldSpec& spec() const { return spec_; }
  // [d_enc x |vocab|]
  const Matrix& symbol_embeddings() const { return symbols_; }
  // Offset vector for one attribute value, length d_enc.
  Vector attribute_offset(const std::string& key, const std::string& value) const;

  SpeechRecord make_record(std::uint64_t index) const;

  // Rebuilds features for a record produced by make_record (or any record whose
  // transcript uses the world vocabulary). Requires the feature_ref
  // "synthetic:<index>".
  FeatureMatrix features(const SpeechRecord& record, Branch branch) const;

  int symbol_index(std::string_view word) const;
  // Hash over every frozen tensor of the world; used to assert encoder state
  // never changes.
  std::string state_hash() const;

 private:
  SyntheticWorldSpec spec_;
  Matrix symbols_;
  std::map<std::string, std::map<std::string, Vector>> offsets_;
  std::map<std::string, int, std::less<>> symbol_ids_;
};

// n records with indices [first_index, first_index + n).
std::vector<SpeechRecord> make_synthetic_corpus(const SyntheticWorldSpec& spec, std::int64_t n,
                                                std::uint64_t first_index = 0);

// A frozen encoder for one branch.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual FeatureMatrix encode(const SpeechRecord& record, Branch branch) const = 0;
  virtual int width() const = 0;
};

class SyntheticEncoder final : public Encoder {
 public:
  explicit SyntheticEncoder(std::shared_ptr<const SyntheticWorld> world) : world_(std::move(world)) {}
  FeatureMatrix encode(const SpeechRecord& record, Branch branch) const override;
  int width() const override { return world_->spec().d_enc; }

 private:
  std::shared_ptr<const SyntheticWorld> world_;
};

// Precomputed features keyed by record id; the on-disk form of an external
// encoder's output.
class FeatureStore final : public Encoder {
 public:
  FeatureStore() = default;
  static FeatureStore load(const std::string& path);

  void put(const std::string& id, FeatureMatrix features);
  std::string serialize() const;
  void save(const std::string& path) const;

  FeatureMatrix encode(const SpeechRecord& record, Branch branch) const override;
  int width() const override { return width_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::pair<std::string, int>, FeatureMatrix> entries_;
  int width_ = 0;
};

// Branch -> encoder registry; the uniform access point for features.
class EncoderSet {
 public:
  void add(Branch branch, std::shared_ptr<const Encoder> encoder);
  bool has(Branch branch) const;
  // Throws FeatureUnavailable if no encoder is registered for the branch or
  // the record cannot be resolved. Enforces T >= 1 and the declared width.
  FeatureMatrix encode(const SpeechRecord& record, Branch branch) const;
  int width(Branch branch) const;

 private:
  std::map<Branch, std::shared_ptr<const Encoder>> encoders_;
};

}  // namespace sift::corpus
