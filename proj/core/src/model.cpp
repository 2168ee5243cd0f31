#include "sift/model.hpp"

#include <cmath>
#include <limits>

namespace sift::model {

PromptLayout chat_prompt(const Tokenizer& tok, const std::optional<std::string>& system,
                         std::string_view user_prefix, bool audio_slot, std::string_view user_suffix) {
  const auto& sp = tok.specials();
  PromptLayout out;
  auto& ids = out.ids;
  auto here = [&] { return static_cast<int>(ids.size()); };
  auto append = [&](std::string_view text) {
    const auto t = tok.encode(text);
    ids.insert(ids.end(), t.begin(), t.end());
  };

  if (system) {
    ids.push_back(sp.im_start);
    ids.push_back(sp.role_system);
    Span s{here(), 0};
    append(*system);
    s.end = here();
    out.segments.system = s;
    ids.push_back(sp.im_end);
  }
  ids.push_back(sp.im_start);
  ids.push_back(sp.role_user);
  out.segments.prefix.begin = here();
  append(user_prefix);
  out.segments.prefix.end = here();
  out.segments.audio = {here(), here()};
  if (audio_slot) out.audio_at = here();
  out.segments.suffix.begin = here();
  append(user_suffix);
  out.segments.suffix.end = here();
  ids.push_back(sp.im_end);
  ids.push_back(sp.im_start);
  ids.push_back(sp.role_assistant);
  out.segments.target = {here(), here()};
  return out;
}

Matrix prompt_embeddings(const FrozenLM& lm, const PromptLayout& layout, const Matrix* audio_embeds) {
  const Matrix text = lm.embed(layout.ids);
  if (layout.audio_at < 0 || audio_embeds == nullptr) return text;
  if (audio_embeds->cols() != lm.d_model())
    throw DimMismatch("audio embeddings width " + std::to_string(audio_embeds->cols()) + " != d_llm " +
                      std::to_string(lm.d_model()));
  const Eigen::Index n = audio_embeds->rows();
  const Eigen::Index at = layout.audio_at;
  Matrix out(text.rows() + n, text.cols());
  out.topRows(at) = text.topRows(at);
  out.middleRows(at, n) = *audio_embeds;
  out.bottomRows(text.rows() - at) = text.bottomRows(text.rows() - at);
  return out;
}

std::size_t AssembledInput::masked_count() const {
  std::size_t n = 0;
  for (char m : loss_mask) n += m ? 1 : 0;
  return n;
}

AssembledInput assemble(const TrainingExample& example, const Matrix& audio_embeds, const FrozenLM& lm) {
  if (!example.audio_slot) throw TemplateError(example.record_id + ": example has no audio slot");
  if (example.target.empty()) throw TemplateError(example.record_id + ": empty target");
  if (audio_embeds.rows() < 1) throw TemplateError(example.record_id + ": empty audio span");
  const Tokenizer& tok = lm.tokenizer();
  const PromptLayout layout = chat_prompt(tok, example.system, example.user_prefix, true, example.user_suffix);
  const int n_audio = static_cast<int>(audio_embeds.rows());

  AssembledInput in;
  in.segments = layout.segments;
  auto shift = [&](Span& s) {
    if (s.begin >= layout.audio_at) s.begin += n_audio;
    if (s.end > layout.audio_at) s.end += n_audio;
  };
  in.segments.audio = {layout.audio_at, layout.audio_at + n_audio};
  shift(in.segments.suffix);
  shift(in.segments.target);

  in.token_ids.assign(layout.ids.begin(), layout.ids.begin() + layout.audio_at);
  in.token_ids.insert(in.token_ids.end(), static_cast<std::size_t>(n_audio), -1);
  in.token_ids.insert(in.token_ids.end(), layout.ids.begin() + layout.audio_at, layout.ids.end());
  const auto target_ids = tok.encode(example.target);
  if (target_ids.empty()) throw TemplateError(example.record_id + ": target tokenizes to nothing");
  const int target_begin = static_cast<int>(in.token_ids.size());
  in.token_ids.insert(in.token_ids.end(), target_ids.begin(), target_ids.end());
  in.token_ids.push_back(tok.specials().im_end);
  in.segments.target = {target_begin, static_cast<int>(in.token_ids.size())};

  const std::size_t L = in.token_ids.size();
  in.embeddings.resize(static_cast<Eigen::Index>(L), lm.d_model());
  {
    std::vector<int> text_ids;
    for (int t : in.token_ids)
      if (t >= 0) text_ids.push_back(t);
    const Matrix text = lm.embed(text_ids);
    Eigen::Index k = 0;
    for (std::size_t i = 0; i < L; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      if (in.token_ids[i] >= 0) {
        in.embeddings.row(row) = text.row(k++);
      } else {
        in.embeddings.row(row) = audio_embeds.row(row - in.segments.audio.begin);
      }
    }
  }

  in.labels.assign(L, tok.specials().pad);
  in.loss_mask.assign(L, 0);
  for (std::size_t t = 0; t + 1 < L; ++t) {
    const int next = in.token_ids[t + 1];
    if (next >= 0) in.labels[t] = next;
    in.loss_mask[t] = in.segments.target.contains(static_cast<int>(t + 1)) ? 1 : 0;
  }
  return in;
}

namespace {

int masked_argmax(const FrozenLM& lm, const Eigen::Ref<const RowVector>& logits) {
  int best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (Eigen::Index v = 0; v < logits.size(); ++v) {
    if (!lm.generable(static_cast<int>(v))) continue;
    if (logits[v] > best_v) {
      best_v = logits[v];
      best = static_cast<int>(v);
    }
  }
  return best;
}

}  // namespace

LossResult loss(const AssembledInput& input, const FrozenLM& lm, bool with_gradient) {
  std::vector<int> rows;
  for (std::size_t t = 0; t < input.loss_mask.size(); ++t)
    if (input.loss_mask[t]) rows.push_back(static_cast<int>(t));
  if (rows.empty()) throw NoTargetTokens("assembled input has no masked positions");

  std::unique_ptr<Activations> saved;
  const Matrix h = lm.hidden(input.embeddings, with_gradient ? &saved : nullptr);
  const Matrix logits = lm.logits(h, rows);

  LossResult out;
  out.tokens = rows.size();
  Matrix d_logits;
  if (with_gradient) d_logits.resize(logits.rows(), logits.cols());
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int label = input.labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])];
    const double mx = logits.row(i).maxCoeff();
    const RowVector e = (logits.row(i).array() - mx).exp().matrix();
    const double z = e.sum();
    total += -(logits(i, label) - mx - std::log(z));
    if (masked_argmax(lm, logits.row(i)) == label) ++out.correct;
    if (with_gradient) {
      d_logits.row(i) = e / z * inv_n;
      d_logits(i, label) -= inv_n;
    }
  }
  out.value = total * inv_n;
  if (with_gradient) {
    const Matrix dh = lm.backward_logits(input.length(), rows, d_logits);
    out.d_embeddings = lm.backward_hidden(*saved, dh);
  }
  return out;
}

Generation decode(const FrozenLM& lm, Matrix prompt, const DecodeParams& params) {
  if (params.max_new_tokens < 1) throw DecodeBudgetExceeded("max_new_tokens must be >= 1");
  if (prompt.rows() + params.max_new_tokens > lm.max_positions())
    throw DecodeBudgetExceeded("prompt of " + std::to_string(prompt.rows()) + " tokens plus " +
                               std::to_string(params.max_new_tokens) + " new tokens exceeds the context");
  const int end = lm.tokenizer().specials().im_end;
  Rng rng(params.seed.value_or(0));
  Generation g;
  g.finish_reason = "length";
  for (int step = 0; step < params.max_new_tokens; ++step) {
    const Matrix h = lm.hidden(prompt, nullptr);
    const int last = static_cast<int>(prompt.rows()) - 1;
    const Matrix logits = lm.logits(h, std::span<const int>(&last, 1));
    int next = -1;
    if (params.temperature <= 0.0) {
      next = masked_argmax(lm, logits.row(0));
    } else {
      const double mx = logits.row(0).maxCoeff();
      std::vector<double> p(static_cast<std::size_t>(logits.cols()), 0.0);
      double z = 0.0;
      for (Eigen::Index v = 0; v < logits.cols(); ++v) {
        if (!lm.generable(static_cast<int>(v))) continue;
        p[static_cast<std::size_t>(v)] = std::exp((logits(0, v) - mx) / params.temperature);
        z += p[static_cast<std::size_t>(v)];
      }
      double u = rng.uniform() * z;
      for (std::size_t v = 0; v < p.size(); ++v) {
        if (p[v] == 0.0) continue;
        next = static_cast<int>(v);
        u -= p[v];
        if (u < 0.0) break;
      }
    }
    if (next < 0) throw DecodeBudgetExceeded("no generable token");
    if (next == end) {
      g.finish_reason = "stop";
      break;
    }
    g.ids.push_back(next);
    const Matrix e = lm.embed(std::span<const int>(&next, 1));
    prompt.conservativeResize(prompt.rows() + 1, Eigen::NoChange);
    prompt.row(prompt.rows() - 1) = e.row(0);
  }
  g.text = lm.tokenizer().decode(g.ids);
  return g;
}

Generation generate(const Matrix& audio_embeds, const std::optional<std::string>& instruction,
                    const std::optional<std::string>& system, const FrozenLM& lm, const DecodeParams& params) {
  const PromptLayout layout = chat_prompt(lm.tokenizer(), system, "", true, instruction.value_or(""));
  return decode(lm, prompt_embeddings(lm, layout, &audio_embeds), params);
}

}  // namespace sift::model
