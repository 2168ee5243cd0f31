#include "sift/eval.hpp"

#include <atomic>
#include <cmath>
#include <regex>
#include <thread>

#include <Eigen/Cholesky>

namespace sift::eval {

double alignment_distance(const Matrix& audio_embeds, const Matrix& oracle_embeds) {
  if (audio_embeds.rows() < 1 || oracle_embeds.rows() < 1) throw InvalidSpec("alignment_distance needs nonempty inputs");
  if (audio_embeds.cols() != oracle_embeds.cols()) throw DimMismatch("alignment_distance: widths differ");
  const RowVector a = audio_embeds.colwise().mean();
  const RowVector b = oracle_embeds.colwise().mean();
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ZeroVector("alignment_distance: pooled vector is zero");
  const double cos = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return 1.0 - cos;
}

namespace {

Matrix oracle_embeddings(const Runtime& runtime, const corpus::SpeechRecord& record, Scope scope) {
  const auto oracle = datagen::render_oracle(record, scope);
  return runtime.lm().embed(runtime.lm().tokenizer().encode(oracle.rendered));
}

template <typename F>
void parallel_for(std::size_t n, int max_workers, F&& f) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, max_workers)));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) f(i);
  };
  if (workers <= 1) {
    work();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
}

int eval_workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

}  // namespace

AlignmentReport alignment_report(const Runtime& runtime, const Checkpoint& ckpt,
                                 const std::vector<TrainingExample>& examples, bool with_generation,
                                 const model::DecodeParams& decode) {
  AlignmentReport rep;
  rep.items.resize(examples.size());
  parallel_for(examples.size(), eval_workers(), [&](std::size_t i) {
    const TrainingExample& e = examples[i];
    const corpus::SpeechRecord& rec = runtime.record(e.record_id);
    const Matrix audio = runtime.audio(ckpt, rec);
    AlignmentItem& it = rep.items[i];
    it.record_id = e.record_id;
    it.config_tag = e.config_tag;
    it.distance = alignment_distance(audio, oracle_embeddings(runtime, rec, ConfigTag::parse(e.config_tag).scope));
    const model::LossResult l = model::loss(model::assemble(e, audio, runtime.lm()), runtime.lm());
    it.target_ce = l.value;
    it.target_tokens = l.tokens;
    it.correct_tokens = l.correct;
    if (with_generation) {
      const auto layout = model::chat_prompt(runtime.lm().tokenizer(), e.system, e.user_prefix, true, e.user_suffix);
      const auto g = model::decode(runtime.lm(), model::prompt_embeddings(runtime.lm(), layout, &audio), decode);
      it.greedy_match = g.finish_reason == "stop" && g.text == e.target;
    }
  });
  std::size_t tokens = 0;
  std::size_t correct = 0;
  std::size_t matches = 0;
  for (const auto& it : rep.items) {
    rep.mean_distance += it.distance;
    rep.mean_ce += it.target_ce;
    matches += it.greedy_match ? 1 : 0;
    tokens += it.target_tokens;
    correct += it.correct_tokens;
  }
  if (!rep.items.empty()) {
    const double n = static_cast<double>(rep.items.size());
    rep.mean_distance /= n;
    rep.mean_ce /= n;
    rep.match_rate = static_cast<double>(matches) / n;
    rep.token_accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
  }
  return rep;
}

bool is_probe_heldout(const std::string& record_id) { return fnv1a64(record_id) % 5 == 0; }

ProbeResult fit_probe(const Matrix& features, const std::vector<std::string>& labels,
                      const std::vector<std::string>& record_ids, const std::string& attribute, double ridge) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (labels.size() != n || record_ids.size() != n) throw InvalidSpec("fit_probe: size mismatch");
  std::vector<std::string> classes;
  for (const auto& l : labels)
    if (std::find(classes.begin(), classes.end(), l) == classes.end()) classes.push_back(l);
  std::sort(classes.begin(), classes.end());

  std::vector<Eigen::Index> train, held;
  for (std::size_t i = 0; i < n; ++i) (is_probe_heldout(record_ids[i]) ? held : train).push_back(static_cast<Eigen::Index>(i));
  std::set<std::string> train_classes;
  for (auto i : train) train_classes.insert(labels[static_cast<std::size_t>(i)]);
  if (train_classes.size() < 2) throw SingleClass(attribute);

  const Eigen::Index d = features.cols();
  const Matrix xt = features(train, Eigen::all);
  const RowVector mean = xt.colwise().mean();
  RowVector scale = ((xt.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(train.size()))
                        .sqrt()
                        .matrix();
  for (Eigen::Index j = 0; j < d; ++j)
    if (scale[j] < 1e-12) scale[j] = 1.0;
  auto design = [&](const std::vector<Eigen::Index>& rows) {
    Matrix x(static_cast<Eigen::Index>(rows.size()), d + 1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      x.row(static_cast<Eigen::Index>(r)).head(d) =
          (features.row(rows[r]) - mean).cwiseQuotient(scale);
      x(static_cast<Eigen::Index>(r), d) = 1.0;
    }
    return x;
  };
  const Matrix x = design(train);
  const auto k = static_cast<Eigen::Index>(classes.size());
  Matrix y = Matrix::Zero(x.rows(), k);
  auto class_of = [&](std::size_t i) {
    return static_cast<Eigen::Index>(std::lower_bound(classes.begin(), classes.end(), labels[i]) - classes.begin());
  };
  for (std::size_t r = 0; r < train.size(); ++r) y(static_cast<Eigen::Index>(r), class_of(static_cast<std::size_t>(train[r]))) = 1.0;
  Matrix gram = x.transpose() * x;
  gram.diagonal().head(d).array() += ridge * static_cast<double>(train.size());
  const Matrix w = gram.ldlt().solve(x.transpose() * y);

  auto accuracy = [&](const std::vector<Eigen::Index>& rows, const Matrix& xs) {
    if (rows.empty()) return 0.0;
    const Matrix scores = xs * w;
    std::size_t hit = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Eigen::Index best = 0;
      scores.row(static_cast<Eigen::Index>(r)).maxCoeff(&best);
      hit += best == class_of(static_cast<std::size_t>(rows[r])) ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(rows.size());
  };
  ProbeResult out;
  out.attribute = attribute;
  out.train_accuracy = accuracy(train, x);
  out.heldout_accuracy = accuracy(held, design(held));
  out.chance = 1.0 / static_cast<double>(classes.size());
  out.n_train = train.size();
  out.n_heldout = held.size();
  return out;
}

ProbeResult probe_attribute(const Runtime& runtime, const Checkpoint& ckpt,
                            const std::vector<corpus::SpeechRecord>& records, const std::string& attribute,
                            double ridge) {
  std::vector<const corpus::SpeechRecord*> use;
  for (const auto& r : records) {
    if (!r.attributes.contains(attribute))
      throw MissingAttributes(r.id + " has no '" + attribute + "' attribute");
    use.push_back(&r);
  }
  const int width = runtime.lm().d_model();
  Matrix x(static_cast<Eigen::Index>(use.size()), width);
  parallel_for(use.size(), eval_workers(), [&](std::size_t i) {
    x.row(static_cast<Eigen::Index>(i)) = runtime.audio(ckpt, *use[i]).colwise().mean();
  });
  std::vector<std::string> labels, ids;
  for (const auto* r : use) {
    labels.push_back(r->attributes.at(attribute));
    ids.push_back(r->id);
  }
  return fit_probe(x, labels, ids, attribute, ridge);
}

GenerationReport eval_generation(const Runtime& runtime, const Checkpoint& ckpt,
                                 const std::vector<GenerationItem>& items, const model::DecodeParams& decode) {
  GenerationReport rep;
  rep.results.resize(items.size());
  const auto& tok = runtime.lm().tokenizer();
  parallel_for(items.size(), eval_workers(), [&](std::size_t i) {
    const GenerationItem& item = items[i];
    const Matrix audio = runtime.audio(ckpt, runtime.record(item.record_id));
    const auto g = model::generate(audio, item.instruction, item.system, runtime.lm(), decode);
    GenerationResult& r = rep.results[i];
    r.item = item;
    r.text = g.text;
    r.finish_reason = g.finish_reason;
    if (item.reference) {
      r.exact = g.text == *item.reference;
      const auto ref = tok.encode(*item.reference);
      const std::size_t denom = std::max(ref.size(), g.ids.size());
      std::size_t hit = 0;
      for (std::size_t k = 0; k < std::min(ref.size(), g.ids.size()); ++k) hit += ref[k] == g.ids[k] ? 1 : 0;
      r.token_accuracy = denom == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(denom);
    }
  });
  for (const auto& r : rep.results) {
    if (!r.exact) continue;
    ++rep.with_reference;
    rep.exact_rate += *r.exact ? 1.0 : 0.0;
    rep.mean_token_accuracy += *r.token_accuracy;
  }
  if (rep.with_reference > 0) {
    rep.exact_rate /= static_cast<double>(rep.with_reference);
    rep.mean_token_accuracy /= static_cast<double>(rep.with_reference);
  }
  return rep;
}

std::vector<GenerationItem> repeat_twice_items(const std::vector<corpus::SpeechRecord>& records,
                                               const std::string& instruction) {
  std::vector<GenerationItem> out;
  for (const auto& r : records) {
    if (r.transcript.empty()) continue;
    out.push_back({r.id, instruction, std::nullopt, r.transcript + " " + r.transcript});
  }
  return out;
}

std::optional<int> parse_judge_score(std::string_view text) {
  static const std::regex kScore("(^|[^0-9.])([1-5])(?![0-9]|\\.[0-9])");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(text.begin(), text.end(), m, kScore)) return std::nullopt;
  return m[2].str()[0] - '0';
}

JudgeReport judge_responses(const std::vector<GenerationResult>& generations, datagen::LLMClient& judge,
                            const std::string& rubric, const datagen::DatagenOptions& options) {
  JudgeReport rep;
  rep.items.resize(generations.size());
  parallel_for(generations.size(), options.max_in_flight, [&](std::size_t i) {
    const GenerationResult& g = generations[i];
    JudgeItem& it = rep.items[i];
    it.record_id = g.item.record_id;
    datagen::ChatRequest req;
    req.record_id = g.item.record_id;
    req.system = rubric;
    req.user = "Instruction: " + g.item.instruction.value_or("(none)") + "\nResponse: " + g.text;
    req.decode.max_new_tokens = 16;
    auto delay = options.retry.base_delay;
    for (int attempt = 1;; ++attempt) {
      try {
        it.raw = judge.complete(req).text;
        it.score = parse_judge_score(it.raw);
        break;
      } catch (const TransportError&) {
        if (attempt >= options.retry.max_attempts) break;
        std::this_thread::sleep_for(delay);
        delay = std::chrono::milliseconds(
            static_cast<std::int64_t>(static_cast<double>(delay.count()) * options.retry.multiplier));
      } catch (const Error&) {
        break;
      }
    }
    it.flagged = !it.score.has_value();
  });
  for (const auto& it : rep.items) {
    if (!it.score) continue;
    ++rep.scored;
    rep.mean_score += *it.score;
  }
  if (rep.scored > 0) rep.mean_score /= static_cast<double>(rep.scored);
  return rep;
}

}  // namespace sift::eval
