#include "sift/datagen.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "json.hpp"

namespace sift::datagen {

void GenerationConfig::validate() const {
  if (paradigm == Paradigm::TSIT && scope != Scope::s) throw InvalidSpec("TSIT is only defined for scope s");
  if (paradigm == Paradigm::SIFT && !instruction_pool.empty())
    throw InvalidSpec("SIFT uses the null instruction; instruction_pool must be empty");
  if (scope == Scope::ssp && (!system_prompt || system_prompt->empty()))
    throw InvalidSpec("scope ssp requires the dialog system prompt");
  if (scope != Scope::ssp && system_prompt) throw InvalidSpec("system prompt is only used with scope ssp");
  if (decode.temperature < 0.0) throw InvalidSpec("temperature must be >= 0");
  if (decode.max_new_tokens < 1) throw InvalidSpec("max_new_tokens must be >= 1");
}

OracleText render_oracle(const corpus::SpeechRecord& record, Scope scope) {
  if (record.transcript.empty()) throw MissingTranscript(record.id);
  if (scope == Scope::s) return {record.transcript, OracleScope::s};

  std::string meta;
  for (std::string_view key : corpus::kAttributeKeys) {
    auto it = record.attributes.find(std::string(key));
    if (it == record.attributes.end()) continue;
    if (!meta.empty()) meta += ", ";
    meta += it->first;
    meta += ": ";
    meta += it->second;
  }
  if (meta.empty()) throw MissingAttributes(record.id);
  OracleText out;
  out.rendered = "<audio><meta>" + meta + "</meta><text>" + record.transcript + "</text></audio>";
  out.scope = scope == Scope::sp ? OracleScope::sp : OracleScope::ssp_body;
  return out;
}

std::vector<std::string> world_lexicon(const corpus::SyntheticWorldSpec& spec,
                                       const std::vector<std::string>& extra_texts) {
  std::vector<std::string> texts = extra_texts;
  texts.push_back("<audio><meta>: , </meta><text></text></audio>");
  for (const auto& w : spec.vocab) texts.push_back(w);
  for (const auto& [key, values] : spec.attribute_vocab) {
    texts.push_back(key);
    for (const auto& v : values) texts.push_back(v);
  }
  return model::lexicon_from_texts(texts);
}

ParsedOracle parse_oracle(std::string_view s) {
  auto expect = [&](std::string_view lit) {
    if (!s.starts_with(lit)) throw MalformedRecord("oracle text: expected '" + std::string(lit) + "'");
    s.remove_prefix(lit.size());
  };
  expect("<audio><meta>");
  const std::size_t meta_end = s.find("</meta>");
  if (meta_end == std::string_view::npos) throw MalformedRecord("oracle text: missing </meta>");
  std::string_view meta = s.substr(0, meta_end);
  s.remove_prefix(meta_end);
  expect("</meta><text>");
  constexpr std::string_view kTail = "</text></audio>";
  if (!s.ends_with(kTail)) throw MalformedRecord("oracle text: missing </text></audio>");
  ParsedOracle out;
  out.transcript = std::string(s.substr(0, s.size() - kTail.size()));

  std::size_t last_rank = 0;
  bool first = true;
  while (!meta.empty()) {
    const std::size_t sep = meta.find(", ");
    std::string_view item = meta.substr(0, sep);
    meta = sep == std::string_view::npos ? std::string_view{} : meta.substr(sep + 2);
    const std::size_t colon = item.find(": ");
    if (colon == std::string_view::npos) throw MalformedRecord("oracle text: bad meta item");
    const std::string key(item.substr(0, colon));
    const std::string value(item.substr(colon + 2));
    const auto rank = static_cast<std::size_t>(
        std::find(corpus::kAttributeKeys.begin(), corpus::kAttributeKeys.end(), key) - corpus::kAttributeKeys.begin());
    if (rank == corpus::kAttributeKeys.size()) throw MalformedRecord("oracle text: unknown key '" + key + "'");
    if (!first && rank <= last_rank) throw MalformedRecord("oracle text: keys out of canonical order");
    if (value.empty()) throw MalformedRecord("oracle text: empty value for '" + key + "'");
    out.attributes[key] = value;
    last_rank = rank;
    first = false;
  }
  if (out.attributes.empty()) throw MalformedRecord("oracle text: empty meta");
  return out;
}

namespace {

const std::string& sample_instruction(const GenerationConfig& config, Rng& rng) {
  if (config.instruction_pool.empty())
    throw EmptyInstructionPool(std::string(to_string(config.paradigm)) + " requires a nonempty instruction pool");
  return config.instruction_pool[rng.index(config.instruction_pool.size())];
}

}  // namespace

ChatRequest build_request(const OracleText& oracle, const GenerationConfig& config, Rng& rng) {
  config.validate();
  if (config.paradigm == Paradigm::TSIT) throw InvalidSpec("TSIT examples are synthesized without an LLM request");
  ChatRequest req;
  req.decode = config.decode;
  req.user = oracle.rendered;
  if (config.paradigm == Paradigm::SIT) {
    const std::string& instruction = sample_instruction(config, rng);
    req.user += ' ';
    req.user += instruction;
    req.instruction = instruction;
  }
  if (config.scope == Scope::ssp) req.system = config.system_prompt;
  return req;
}

TargetResponse ToyLMClient::complete(const ChatRequest& request) {
  const model::PromptLayout layout = model::chat_prompt(lm_->tokenizer(), request.system, request.user, false, "");
  const model::Generation g = model::decode(*lm_, lm_->embed(layout.ids), request.decode);
  TargetResponse r;
  r.text = g.text;
  r.finish_reason = g.finish_reason;
  r.usage.prompt_tokens = static_cast<int>(layout.ids.size());
  r.usage.completion_tokens = static_cast<int>(g.ids.size());
  return r;
}

TargetResponse generate_target(const ChatRequest& request, LLMClient& llm) {
  TargetResponse r = llm.complete(request);
  if (r.finish_reason == "content_filter") throw ProviderRefusal(request.record_id);
  if (r.text.find_first_not_of(" \t\r\n") == std::string::npos) throw EmptyGeneration(request.record_id);
  return r;
}

TrainingExample synthesize_tsit(const corpus::SpeechRecord& record, const GenerationConfig& config, Rng& rng) {
  if (config.paradigm != Paradigm::TSIT) throw InvalidSpec("synthesize_tsit requires paradigm TSIT");
  config.validate();
  if (record.transcript.empty()) throw MissingTranscript(record.id);
  TrainingExample e;
  e.record_id = record.id;
  e.user_suffix = sample_instruction(config, rng);
  e.target = record.transcript;
  e.config_tag = config.tag().str();
  e.stage_tag = config.tag().default_stage();
  return e;
}

TrainingExample assemble_example(const corpus::SpeechRecord& record, const GenerationConfig& config,
                                 const std::optional<std::string>& instruction, const std::string& target) {
  if (target.empty()) throw EmptyGeneration(record.id);
  TrainingExample e;
  e.record_id = record.id;
  e.audio_slot = true;
  if (config.scope == Scope::ssp) e.system = config.system_prompt;
  if (config.paradigm != Paradigm::SIFT && instruction) e.user_suffix = *instruction;
  e.target = target;
  e.config_tag = config.tag().str();
  e.stage_tag = config.tag().default_stage();
  e.validate();
  return e;
}

namespace {

struct Outcome {
  std::optional<TrainingExample> example;
  std::optional<QuarantinedRecord> quarantined;
};

Outcome process_record(const corpus::SpeechRecord& record, const GenerationConfig& config, LLMClient* llm,
                       const DatagenOptions& options) {
  Outcome out;
  Rng rng(derive_seed(options.seed, {fnv1a64(record.id)}));
  try {
    if (config.paradigm == Paradigm::TSIT) {
      out.example = synthesize_tsit(record, config, rng);
      return out;
    }
    if (llm == nullptr) throw TransportError("no LLM client configured");
    ChatRequest req = build_request(render_oracle(record, config.scope), config, rng);
    req.record_id = record.id;
    if (req.decode.seed) req.decode.seed = derive_seed(*req.decode.seed, {fnv1a64(record.id)});
    auto delay = options.retry.base_delay;
    for (int attempt = 1;; ++attempt) {
      try {
        const TargetResponse r = generate_target(req, *llm);
        out.example = assemble_example(record, config, req.instruction, r.text);
        return out;
      } catch (const TransportError&) {
        if (attempt >= options.retry.max_attempts) throw;
        std::this_thread::sleep_for(delay);
        delay = std::chrono::milliseconds(
            static_cast<std::int64_t>(static_cast<double>(delay.count()) * options.retry.multiplier));
      }
    }
  } catch (const Error& e) {
    out.quarantined = QuarantinedRecord{record.id, e.kind(), e.what()};
  } catch (const std::exception& e) {
    out.quarantined = QuarantinedRecord{record.id, "TransportError", e.what()};
  }
  return out;
}

}  // namespace

DatagenResult run_datagen(const std::vector<corpus::SpeechRecord>& records, const GenerationConfig& config,
                          LLMClient* llm, const DatagenOptions& options) {
  config.validate();
  std::vector<Outcome> outcomes(records.size());
  const std::size_t workers =
      std::min<std::size_t>(records.size(), static_cast<std::size_t>(std::max(1, options.max_in_flight)));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++)
      outcomes[i] = process_record(records[i], config, llm, options);
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  DatagenResult result;
  for (auto& o : outcomes) {
    if (o.example) result.examples.push_back(std::move(*o.example));
    else result.quarantined.push_back(std::move(*o.quarantined));
  }
  return result;
}

std::string serialize_quarantine(const std::vector<QuarantinedRecord>& q) {
  std::string out;
  for (const auto& r : q) {
    nlohmann::ordered_json j;
    j["record_id"] = r.record_id;
    j["error"] = r.error;
    j["message"] = r.message;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void DatasetMix::validate() const {
  if (components.empty()) throw EmptyComponent("mix has no components");
  for (const auto& c : components) {
    if (!c.examples || c.examples->empty()) throw EmptyComponent("component '" + c.name + "' is empty");
    if (!std::isfinite(c.weight) || !(c.weight > 0.0))
      throw InvalidWeight("component '" + c.name + "' weight must be finite and positive");
  }
}

MixSampler::MixSampler(const DatasetMix& datasets) {
  datasets.validate();
  double acc = 0.0;
  for (const auto& c : datasets.components) {
    double w = c.weight;
    if (datasets.strategy == MixStrategy::proportional) w *= static_cast<double>(c.examples->size());
    acc += w;
    cumulative_.push_back(acc);
    sizes_.push_back(c.examples->size());
  }
}

MixDraw MixSampler::draw(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  std::size_t k = 0;
  while (k + 1 < cumulative_.size() && u >= cumulative_[k]) ++k;
  return {k, rng.index(sizes_[k])};
}

std::vector<MixDraw> mix(const DatasetMix& datasets, std::size_t total, Rng& rng) {
  if (total < 1) throw InvalidSpec("mix total must be >= 1");
  const MixSampler sampler(datasets);
  std::vector<MixDraw> out;
  out.reserve(total);
  for (std::size_t i = 0; i < total; ++i) out.push_back(sampler.draw(rng));
  return out;
}

}  // namespace sift::datagen
