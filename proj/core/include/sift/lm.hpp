#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sift/common.hpp"

namespace sift::model {

struct SpecialTokens {
  int pad = 0;
  int im_start = 1;
  int im_end = 2;
  int role_system = 3;
  int role_user = 4;
  int role_assistant = 5;
};

// Splits text into atoms: markup tags such as <audio> or </meta>, runs of
// word characters (ASCII alphanumerics, apostrophe, underscore and any
// non-ASCII byte), and single punctuation characters. Whitespace only
// separates atoms, so encode(a + " " + b) == encode(a) ++ encode(b).
std::vector<std::string> split_atoms(std::string_view text);

// Sorted distinct atoms of the given texts; a lexicon that covers them all.
std::vector<std::string> lexicon_from_texts(const std::vector<std::string>& texts);

// Word-level tokenizer over atoms with optional byte fallback for atoms that
// are not in the lexicon.
class Tokenizer {
 public:
  Tokenizer(const std::vector<std::string>& lexicon, bool byte_fallback);

  std::vector<int> encode(std::string_view text) const;
  // Atoms joined by single spaces; consecutive byte tokens are glued.
  std::string decode(std::span<const int> ids) const;

  int size() const { return static_cast<int>(pieces_.size()); }
  int id(std::string_view piece) const;  // -1 if absent
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  bool is_byte(int id) const { return byte_base_ >= 0 && id >= byte_base_; }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }
  const SpecialTokens& specials() const { return specials_; }

  static constexpr int kNumSpecials = 6;

 private:
  std::vector<std::string> pieces_;
  std::map<std::string, int, std::less<>> index_;
  SpecialTokens specials_;
  int byte_base_ = -1;
};

// Opaque saved activations from a forward pass.
class Activations {
 public:
  virtual ~Activations() = default;
};

// Immutable decoder LM operating on a continuous embedding space. It exposes
// gradients with respect to its *inputs* only; it has no parameter-gradient
// path at all.
class FrozenLM {
 public:
  virtual ~FrozenLM() = default;

  virtual const Tokenizer& tokenizer() const = 0;
  virtual int d_model() const = 0;
  // Longest sequence the model accepts.
  virtual int max_positions() const = 0;
  int vocab_size() const { return tokenizer().size(); }

  // [ids.size() x d_model]
  virtual Matrix embed(std::span<const int> ids) const = 0;

  // Final hidden states [L x d_model] for an input embedding sequence.
  virtual Matrix hidden(const Matrix& inputs, std::unique_ptr<Activations>* saved = nullptr) const = 0;
  // Logits for selected hidden rows: [rows.size() x vocab].
  virtual Matrix logits(const Matrix& hidden_states, std::span<const int> rows) const = 0;
  // Given d(loss)/d(hidden) [L x d_model], returns d(loss)/d(inputs) [L x d_model].
  virtual Matrix backward_hidden(const Activations& saved, const Matrix& d_hidden) const = 0;
  // Given d(loss)/d(logits) for the selected rows, returns d(loss)/d(hidden) [L x d_model].
  virtual Matrix backward_logits(std::size_t length, std::span<const int> rows,
                                 const Matrix& d_logits) const = 0;

  // Whether decoding may emit this token.
  virtual bool generable(int id) const = 0;
  // Content hash over every frozen parameter.
  virtual std::string param_hash() const = 0;

  // Convenience: full logits [L x vocab].
  Matrix forward(const Matrix& inputs) const;
};

enum class ToyLMKind {
  // Two designed layers that restate the user turn: a previous-token head
  // followed by an induction head that copies, token by token, whatever
  // followed the current token earlier in the context. Copying reaches the
  // user turn's end-of-turn marker, so responses terminate.
  induction,
  // Dense Gaussian weights; no behavior, used for gradient checks at tiny
  // sizes.
  random,
};

struct ToyLMConfig {
  std::uint64_t seed = 0;
  int d_model = 64;
  std::vector<std::string> lexicon;
  bool byte_fallback = true;
  ToyLMKind kind = ToyLMKind::induction;

  // induction
  int position_pairs = 7;       // sinusoid pairs; frequencies pi / 2^j
  double position_gain = 8.0;   // sharpness of the previous-token head
  double position_slope = 0.1;  // recency bias of the previous-token head (suppresses aliasing)
  double prev_scale = 0.25;     // gain of the previous-token copy
  double match_gain = 20.0;     // sharpness of the induction head
  double start_gain = 1.0;      // pull of role tokens toward the token after the user marker
  double recency_slope = 0.1;   // induction head ALiBi slope; later matches win ties
  double logit_scale = 12.0;

  // random
  int layers = 2;
  int heads = 2;
  int d_ff = 8;
  double init_scale = 0.5;
};

// A causal transformer over embeddings: per layer, multi-head attention with
// ALiBi slopes and a ReLU MLP (d_ff may be 0), both residual, no layer norm.
// Logits are a fixed linear read-out of the final hidden state.
class ToyLM final : public FrozenLM {
 public:
  explicit ToyLM(const ToyLMConfig& config);

  const Tokenizer& tokenizer() const override { return tokenizer_; }
  int d_model() const override { return d_; }
  int max_positions() const override { return kMaxPositions; }
  Matrix embed(std::span<const int> ids) const override;
  Matrix hidden(const Matrix& inputs, std::unique_ptr<Activations>* saved) const override;
  Matrix logits(const Matrix& hidden_states, std::span<const int> rows) const override;
  Matrix backward_hidden(const Activations& saved, const Matrix& d_hidden) const override;
  Matrix backward_logits(std::size_t length, std::span<const int> rows,
                         const Matrix& d_logits) const override;
  bool generable(int id) const override;
  std::string param_hash() const override;

  const ToyLMConfig& config() const { return config_; }
  static constexpr int kMaxPositions = 512;

 private:
  struct Head {
    Matrix wq, wk, wv, wo;  // [d x d]
    RowVector bq;
    double slope = 0.0;
  };
  struct Layer {
    std::vector<Head> heads;
    Matrix w1, w2;  // [d x d_ff], [d_ff x d]; empty when d_ff == 0
    RowVector b1, b2;
  };
  struct Saved;

  void build_induction(Rng& rng);
  void build_random(Rng& rng);

  ToyLMConfig config_;
  Tokenizer tokenizer_;
  int d_;
  Matrix embeddings_;  // [V x d]
  Matrix positions_;   // [kMaxPositions x d]
  std::vector<Layer> layers_;
  Matrix unembed_;     // [V x d]
  RowVector out_bias_; // [V]
};

}  // namespace sift::model
