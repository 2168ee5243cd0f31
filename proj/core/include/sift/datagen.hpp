#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sift/common.hpp"
#include "sift/corpus.hpp"
#include "sift/example.hpp"
#include "sift/lm.hpp"
#include "sift/model.hpp"

namespace sift::datagen {

// Generic eliciting instruction for the SIT configurations.
inline constexpr std::string_view kDescribeInstruction = "Describe all the information you can hear.";

// Dialog persona used by the ssp configurations.
inline constexpr std::string_view kDialogSystemMessage =
    "You are a powerful virtual human who is capable of perceiving both text and speech inputs and "
    "generate precise natural responses. Speech inputs will be wrapped by <audio> and </audio> tags, "
    "containing both the text transcription and paralinguistic information. You must always pretend "
    "that you can indeed hear the input audios. NEVER mention that any metadata is provided through "
    "texts, and only use them in your response when necessary.";

struct GenerationConfig {
  Paradigm paradigm = Paradigm::SIFT;
  Scope scope = Scope::s;
  // SIT: eliciting instructions. TSIT: ASR prompts. SIFT: must be empty.
  std::vector<std::string> instruction_pool;
  std::optional<std::string> system_prompt;  // required iff scope == ssp
  model::DecodeParams decode;

  ConfigTag tag() const { return {paradigm, scope}; }
  // Enforces the paradigm/scope invariants; throws InvalidSpec. An empty
  // SIT/TSIT pool is reported later as EmptyInstructionPool.
  void validate() const;
};

enum class OracleScope { s, sp, ssp_body };

struct OracleText {
  std::string rendered;
  OracleScope scope = OracleScope::s;
};

// s: transcript verbatim. sp / ssp:
//   <audio><meta>k1: v1, k2: v2</meta><text>TRANSCRIPT</text></audio>
// with keys in the order age, gender, emotion, language (present keys only).
// Throws MissingTranscript / MissingAttributes.
OracleText render_oracle(const corpus::SpeechRecord& record, Scope scope);

// Every atom a synthetic world's oracle texts can contain (symbols, attribute
// keys and values, tag scaffolding) plus the atoms of `extra_texts`, such as
// system prompts and instruction pools.
std::vector<std::string> world_lexicon(const corpus::SyntheticWorldSpec& spec,
                                       const std::vector<std::string>& extra_texts);

struct ParsedOracle {
  std::string transcript;
  std::map<std::string, std::string> attributes;
};
// Inverse of render_oracle for the tagged form; throws MalformedRecord.
ParsedOracle parse_oracle(std::string_view rendered);

struct ChatRequest {
  std::string record_id;
  std::optional<std::string> system;
  std::string user;
  // The instruction appended to the oracle text, if any. Kept so the training
  // example can carry it after the audio slot.
  std::optional<std::string> instruction;
  model::DecodeParams decode;
};

// SIFT: user = oracle. SIT: user = oracle + " " + sampled instruction. ssp:
// system = the configured system prompt. TSIT requests are not built here.
ChatRequest build_request(const OracleText& oracle, const GenerationConfig& config, Rng& rng);

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct TargetResponse {
  std::string text;
  std::string finish_reason;
  Usage usage;
};

// Abstract chat-completion endpoint. Implementations throw TransportError for
// retryable failures and ProviderRefusal when the provider declines.
class LLMClient {
 public:
  virtual ~LLMClient() = default;
  virtual TargetResponse complete(const ChatRequest& request) = 0;
};

// Adapter around the built-in frozen toy LM; thread-safe.
class ToyLMClient final : public LLMClient {
 public:
  explicit ToyLMClient(std::shared_ptr<const model::FrozenLM> lm) : lm_(std::move(lm)) {}
  TargetResponse complete(const ChatRequest& request) override;

 private:
  std::shared_ptr<const model::FrozenLM> lm_;
};

struct HttpClientOptions {
  std::string base_url;           // e.g. http://127.0.0.1:8000/v1
  std::string model;
  std::string token_env;          // name of the env var holding the bearer token; may be empty
  std::chrono::milliseconds timeout{60000};
};

// Speaks the common chat-completions JSON shape over HTTP(S):
//   POST {base_url}/chat/completions
class HttpChatClient final : public LLMClient {
 public:
  // Throws ConfigError on a bad URL, an empty model name, or an unset token variable.
  explicit HttpChatClient(HttpClientOptions options);
  TargetResponse complete(const ChatRequest& request) override;

 private:
  HttpClientOptions options_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

// Calls the client once and checks the response: throws EmptyGeneration on an
// empty text and ProviderRefusal on a content-filter finish.
TargetResponse generate_target(const ChatRequest& request, LLMClient& llm);

// TSIT: the transcript is the target and an ASR prompt is the instruction. No
// LLM call is made.
TrainingExample synthesize_tsit(const corpus::SpeechRecord& record, const GenerationConfig& config, Rng& rng);

// Builds the (audio, y) example. `instruction` is the one that elicited y
// (SIT only).
TrainingExample assemble_example(const corpus::SpeechRecord& record, const GenerationConfig& config,
                                 const std::optional<std::string>& instruction, const std::string& target);

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{200};
  double multiplier = 2.0;
};

struct DatagenOptions {
  std::uint64_t seed = 0;
  int max_in_flight = 4;
  RetryPolicy retry;
};

struct QuarantinedRecord {
  std::string record_id;
  std::string error;    // error kind, e.g. "EmptyGeneration"
  std::string message;
};

struct DatagenResult {
  std::vector<TrainingExample> examples;       // input order
  std::vector<QuarantinedRecord> quarantined;  // input order
};

// Runs target generation for every record under a bounded number of
// in-flight requests. Failed records are quarantined, never fatal.
// Invariant: records.size() == examples.size() + quarantined.size().
DatagenResult run_datagen(const std::vector<corpus::SpeechRecord>& records, const GenerationConfig& config,
                          LLMClient* llm, const DatagenOptions& options);

std::string serialize_quarantine(const std::vector<QuarantinedRecord>& q);

enum class MixStrategy { proportional, rebalanced };

struct DatasetComponent {
  std::string name;
  std::shared_ptr<const std::vector<TrainingExample>> examples;
  double weight = 1.0;
};

struct DatasetMix {
  std::vector<DatasetComponent> components;
  MixStrategy strategy = MixStrategy::proportional;

  // Throws EmptyComponent / InvalidWeight.
  void validate() const;
};

struct MixDraw {
  std::size_t component = 0;
  std::size_t index = 0;
};

// Draws one (component, index) pair at a time under the mix's strategy.
class MixSampler {
 public:
  explicit MixSampler(const DatasetMix& datasets);
  MixDraw draw(Rng& rng) const;

 private:
  std::vector<double> cumulative_;
  std::vector<std::size_t> sizes_;
};

// `total` draws with replacement. proportional: P(component) ~ weight * size;
// rebalanced: P(component) ~ weight.
std::vector<MixDraw> mix(const DatasetMix& datasets, std::size_t total, Rng& rng);

}  // namespace sift::datagen
