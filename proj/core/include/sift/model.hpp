#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sift/common.hpp"
#include "sift/example.hpp"
#include "sift/lm.hpp"
#include "sift/projector.hpp"

namespace sift::model {

struct DecodeParams {
  double temperature = 0.0;  // 0 = greedy
  int max_new_tokens = 32;
  std::optional<std::uint64_t> seed;
};

struct Span {
  int begin = 0;
  int end = 0;  // exclusive
  int size() const { return end - begin; }
  bool contains(int i) const { return i >= begin && i < end; }
};

struct SegmentMap {
  std::optional<Span> system;
  Span prefix;
  Span audio;
  Span suffix;
  Span target;  // target tokens plus the end-of-turn terminator
};

// Prompt token layout around an optional audio slot:
//   [<|im_start|> <|system|> SYSTEM <|im_end|>]
//   <|im_start|> <|user|> PREFIX [AUDIO] SUFFIX <|im_end|> <|im_start|> <|assistant|>
// A text-only request is the same layout with the whole user text as PREFIX,
// so replacing the oracle tokens by an audio span keeps every other position.
struct PromptLayout {
  std::vector<int> ids;  // prompt ids; the audio span is NOT included
  int audio_at = -1;     // index in `ids` before which the audio span is inserted
  SegmentMap segments;   // positions in the final sequence, audio span of length 0
};

PromptLayout chat_prompt(const Tokenizer& tok, const std::optional<std::string>& system,
                         std::string_view user_prefix, bool audio_slot, std::string_view user_suffix);

// Prompt embeddings with the audio rows spliced in at layout.audio_at.
Matrix prompt_embeddings(const FrozenLM& lm, const PromptLayout& layout, const Matrix* audio_embeds);

struct AssembledInput {
  Matrix embeddings;            // [L x d_llm]
  std::vector<int> token_ids;   // -1 at audio positions
  std::vector<int> labels;      // next-token label per position, pad where unused
  std::vector<char> loss_mask;  // true exactly on positions predicting target tokens or the terminator
  SegmentMap segments;

  std::size_t length() const { return token_ids.size(); }
  std::size_t masked_count() const;
};

// Chat template around (system?, prefix ++ AUDIO ++ suffix, target). Throws
// TemplateError when the example has no audio slot or the target is empty.
AssembledInput assemble(const TrainingExample& example, const Matrix& audio_embeds, const FrozenLM& lm);

struct LossResult {
  double value = 0.0;         // mean CE over masked positions
  std::size_t tokens = 0;     // masked positions
  std::size_t correct = 0;    // masked positions whose argmax equals the label
  Matrix d_embeddings;        // d(value)/d(embeddings), only if requested
};

// Mean masked next-token cross-entropy. Throws NoTargetTokens.
LossResult loss(const AssembledInput& input, const FrozenLM& lm, bool with_gradient = false);

struct Generation {
  std::string text;
  std::vector<int> ids;
  std::string finish_reason;  // "stop" or "length"
};

// Decodes a continuation of `prompt` (embeddings). Greedy when temperature
// is 0; ties break toward the lowest token id.
Generation decode(const FrozenLM& lm, Matrix prompt, const DecodeParams& params);

// Generates from projected audio with an optional instruction appended after
// the audio and an optional system message.
Generation generate(const Matrix& audio_embeds, const std::optional<std::string>& instruction,
                    const std::optional<std::string>& system, const FrozenLM& lm, const DecodeParams& params);

}  // namespace sift::model
