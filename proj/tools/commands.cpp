#include "commands.hpp"

#include <filesystem>
#include <ostream>

#include "sift/checkpoint.hpp"
#include "sift/eval.hpp"
#include "sift/runtime.hpp"
#include "sift/training.hpp"

#include "json.hpp"

namespace sift::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string Layout::dataset(const std::string& tag, bool heldout) const {
  return root_ + "/datasets/" + tag + (heldout ? ".heldout.jsonl" : ".jsonl");
}

std::string Layout::quarantine(const std::string& tag, bool heldout) const {
  return root_ + "/datasets/" + tag + (heldout ? ".heldout.quarantine.jsonl" : ".quarantine.jsonl");
}

namespace {

std::ostream* g_log = nullptr;

template <class... Args>
void say(const Args&... args) {
  if (!g_log) return;
  ((*g_log) << ... << args);
  (*g_log) << '\n';
}

struct LogScope {
  explicit LogScope(const CommandOptions& o) { g_log = o.log; }
  ~LogScope() { g_log = nullptr; }
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

// Records and features, from the synthetic world's output or an external corpus.
struct CorpusFiles {
  std::string train, heldout, features;
};

CorpusFiles corpus_files(const RunConfig& c) {
  if (c.corpus) return {c.resolve(c.corpus->train), c.resolve(c.corpus->heldout), c.resolve(c.corpus->features)};
  const std::string w = Layout(c.output_dir).world_dir();
  return {w + "/corpus.jsonl", w + "/heldout.jsonl", w + "/features.bin"};
}

std::vector<std::string> config_texts(const RunConfig& c) {
  std::vector<std::string> texts = {c.datagen.system_prompt, c.eval.generation_instruction};
  texts.insert(texts.end(), c.datagen.sit_instructions.begin(), c.datagen.sit_instructions.end());
  texts.insert(texts.end(), c.datagen.tsit_prompts.begin(), c.datagen.tsit_prompts.end());
  return texts;
}

}  // namespace

Pipeline load_pipeline(const RunConfig& c) {
  Pipeline p;
  const CorpusFiles files = corpus_files(c);
  p.train = corpus::load_corpus(files.train);
  p.heldout = corpus::load_corpus(files.heldout);
  auto store = std::make_shared<corpus::FeatureStore>(corpus::FeatureStore::load(files.features));
  p.encoders = std::make_shared<corpus::EncoderSet>();
  p.encoders->add(corpus::Branch::semantic, store);
  if (c.model.paralinguistic) p.encoders->add(corpus::Branch::paralinguistic, store);

  model::ToyLMConfig lc = c.model.lm;
  std::vector<std::string> texts = config_texts(c);
  if (c.world) {
    lc.lexicon = datagen::world_lexicon(c.world->spec, texts);
  } else {
    for (const auto* set : {&p.train, &p.heldout})
      for (const auto& r : *set) {
        if (!r.usable_for_datagen()) continue;
        texts.push_back(r.transcript);
        texts.push_back(datagen::render_oracle(r, Scope::sp).rendered);
      }
    lc.lexicon = model::lexicon_from_texts(texts);
  }
  p.lm = std::make_shared<model::ToyLM>(lc);

  std::vector<corpus::SpeechRecord> all = p.train;
  all.insert(all.end(), p.heldout.begin(), p.heldout.end());
  p.runtime = std::make_unique<Runtime>(p.lm, p.encoders, std::move(all));
  return p;
}

namespace {

datagen::GenerationConfig generation_config(const RunConfig& c, const ConfigTag& tag) {
  datagen::GenerationConfig g;
  g.paradigm = tag.paradigm;
  g.scope = tag.scope;
  if (tag.paradigm == Paradigm::SIT) g.instruction_pool = c.datagen.sit_instructions;
  if (tag.paradigm == Paradigm::TSIT) g.instruction_pool = c.datagen.tsit_prompts;
  if (tag.scope == Scope::ssp) g.system_prompt = c.datagen.system_prompt;
  g.decode = c.datagen.decode;
  return g;
}

std::unique_ptr<datagen::LLMClient> make_client(const RunConfig& c, const std::string& name,
                                                std::shared_ptr<const model::FrozenLM> lm) {
  if (name == "toy") return std::make_unique<datagen::ToyLMClient>(std::move(lm));
  const LlmEndpoint& e = c.llm.at(name);
  return std::make_unique<datagen::HttpChatClient>(
      datagen::HttpClientOptions{e.base_url, e.model, e.token_env, std::chrono::milliseconds(e.timeout_ms)});
}

std::size_t tag_index(const ConfigTag& tag) {
  const auto& all = ConfigTag::all();
  return static_cast<std::size_t>(std::find(all.begin(), all.end(), tag) - all.begin());
}

training::DatasetsByTag load_datasets(const RunConfig& c, bool heldout, bool placeholders) {
  training::DatasetsByTag out;
  const Layout layout(c.output_dir);
  for (const auto& tag : ConfigTag::all()) {
    const std::string name = tag.str();
    if (placeholders) {
      TrainingExample e;
      e.config_tag = name;
      out[name] = std::make_shared<const std::vector<TrainingExample>>(1, e);
    } else if (fs::exists(layout.dataset(name, heldout))) {
      out[name] = std::make_shared<const std::vector<TrainingExample>>(load_dataset(layout.dataset(name, heldout)));
    }
  }
  return out;
}

training::StagePlan build_plan(const RunConfig& c, const std::string& name, const training::DatasetsByTag& data) {
  auto it = c.plans.find(name);
  if (it == c.plans.end()) throw ConfigError("no plan named '" + name + "' in the config");
  const PlanSection& p = it->second;
  if (p.preset) {
    training::StagePlan plan = training::preset_plan(*p.preset, data, p.options);
    plan.name = name;
    return plan;
  }
  training::StagePlan plan;
  plan.name = name;
  for (const auto& s : p.stages) {
    training::Stage st;
    st.name = s.name;
    st.mix.strategy = p.strategy;
    for (const auto& [tag, weight] : s.mix) {
      auto d = data.find(tag);
      if (d == data.end()) throw EmptyComponent("plan needs the " + tag + " dataset");
      st.mix.components.push_back({tag, d->second, weight});
    }
    st.trainable = s.trainable;
    st.steps = s.steps;
    st.batch_size = s.batch_size;
    st.optimizer = s.optimizer;
    st.seed = s.seed;
    plan.stages.push_back(std::move(st));
  }
  plan.validate();
  return plan;
}

std::string group_list(const std::set<ParamGroup>& groups) {
  std::string s;
  for (ParamGroup g : groups) s += (s.empty() ? "" : ",") + std::string(to_string(g));
  return s.empty() ? "-" : s;
}

model::ProjectorConfig projector_config(const RunConfig& c, const Pipeline& p, corpus::Branch branch) {
  return {p.encoders->width(branch), c.model.group, c.model.d_hidden, p.lm->d_model(), c.model.bias};
}

std::vector<TrainingExample> head(const std::vector<TrainingExample>& v, int n) {
  return {v.begin(), v.begin() + std::min<std::ptrdiff_t>(n, static_cast<std::ptrdiff_t>(v.size()))};
}

template <class T>
std::vector<T> head_records(const std::vector<T>& v, int n) {
  return {v.begin(), v.begin() + std::min<std::ptrdiff_t>(n, static_cast<std::ptrdiff_t>(v.size()))};
}

ordered_json alignment_json(const eval::AlignmentReport& r) {
  return {{"items", r.items.size()},
          {"mean_distance", r.mean_distance},
          {"mean_ce", r.mean_ce},
          {"token_accuracy", r.token_accuracy},
          {"match_rate", r.match_rate}};
}

ordered_json probe_json(const eval::ProbeResult& p) {
  return {{"attribute", p.attribute},
          {"train_accuracy", p.train_accuracy},
          {"heldout_accuracy", p.heldout_accuracy},
          {"chance", p.chance}};
}

// Alignment and probe results of one checkpoint.
struct Measurements {
  std::vector<std::pair<std::string, eval::AlignmentReport>> alignment;
  std::vector<eval::ProbeResult> probes;
};

Measurements measure(const RunConfig& c, const Pipeline& p, const Checkpoint& ckpt, const std::string& prefix) {
  Measurements m;
  const training::DatasetsByTag held = load_datasets(c, true, false);
  for (const auto& tag : c.eval.alignment_tags) {
    auto it = held.find(tag);
    if (it == held.end()) {
      say("  alignment ", prefix, tag, ": skipped (no held-out dataset)");
      continue;
    }
    auto r = eval::alignment_report(*p.runtime, ckpt, head(*it->second, c.eval.alignment_items),
                                    c.eval.alignment_generation, c.eval.decode);
    say("  alignment ", prefix, tag, ": distance ", r.mean_distance, ", token accuracy ", r.token_accuracy,
        ", exact ", r.match_rate);
    m.alignment.emplace_back(prefix + tag, std::move(r));
  }
  for (const auto& attr : c.eval.attributes) {
    std::vector<corpus::SpeechRecord> labelled;
    for (const auto& r : p.train)
      if (r.attributes.count(attr)) labelled.push_back(r);
    if (labelled.empty()) {
      say("  probe ", prefix, attr, ": skipped (no labelled records)");
      continue;
    }
    eval::ProbeResult r = eval::probe_attribute(*p.runtime, ckpt, labelled, attr, c.eval.ridge);
    r.attribute = prefix + attr;
    say("  probe ", r.attribute, ": held-out accuracy ", r.heldout_accuracy, " (chance ", r.chance, ")");
    m.probes.push_back(std::move(r));
  }
  return m;
}

// Generation on held-out records plus the optional judge; writes the bundle.
std::vector<std::string> finish_report(const RunConfig& c, const Pipeline& p, const Checkpoint& ckpt,
                                       Measurements m, const training::RunLedger* ledger, const std::string& dir,
                                       ordered_json summary) {
  const auto items = eval::repeat_twice_items(head_records(p.heldout, c.eval.generation_items),
                                              c.eval.generation_instruction);
  const eval::GenerationReport gen = eval::eval_generation(*p.runtime, ckpt, items, c.eval.decode);
  say("  generation: ", gen.results.size(), " items, exact ", gen.exact_rate, ", token accuracy ",
      gen.mean_token_accuracy);

  std::optional<eval::JudgeReport> judge;
  if (c.eval.judge) {
    auto client = make_client(c, c.eval.judge->llm, p.lm);
    datagen::DatagenOptions o;
    o.seed = c.seeds.datagen;
    o.max_in_flight = c.eval.judge->max_in_flight;
    o.retry = c.datagen.retry;
    judge = eval::judge_responses(gen.results, *client, c.eval.judge->rubric, o);
    say("  judge: ", judge->scored, " scored, mean ", judge->mean_score);
  } else {
    say("  judge: skipped (not configured)");
  }

  eval::ReportBundle bundle;
  bundle.ledger = ledger;
  bundle.alignment = m.alignment;
  bundle.probes = m.probes;
  bundle.generation = &gen;
  bundle.judge = judge ? &*judge : nullptr;
  std::vector<std::string> files = eval::emit_report(bundle, dir);

  ordered_json a = ordered_json::object();
  for (const auto& [label, r] : m.alignment) a[label] = alignment_json(r);
  ordered_json pr = ordered_json::array();
  for (const auto& r : m.probes) pr.push_back(probe_json(r));
  summary["alignment"] = a;
  summary["probes"] = pr;
  summary["generation"] = {{"items", gen.results.size()},
                           {"exact_rate", gen.exact_rate},
                           {"mean_token_accuracy", gen.mean_token_accuracy}};
  if (judge) summary["judge"] = {{"scored", judge->scored}, {"mean_score", judge->mean_score}};
  else summary["judge"] = "skipped";
  write_file(dir + "/summary.json", summary.dump(2) + "\n");
  files.push_back(dir + "/summary.json");
  return files;
}

}  // namespace

std::vector<std::string> cmd_world(const RunConfig& c, const CommandOptions& o) {
  LogScope log(o);
  if (!c.world) throw InvalidSpec("the config has no world section (it names an external corpus)");
  const WorldSection& w = *c.world;
  if (w.n_records <= 0) throw InvalidSpec("world.n_records must be positive");
  auto world = std::make_shared<corpus::SyntheticWorld>(w.spec);
  const std::string dir = Layout(c.output_dir).world_dir();
  say("world: ", w.n_records, " training records [0, ", w.n_records, "), ", w.n_heldout, " held-out records [",
      w.heldout_first_index, ", ", w.heldout_first_index + static_cast<std::uint64_t>(w.n_heldout), "), seed ",
      w.spec.seed, " -> ", dir);
  if (o.dry_run) return {};

  const auto train = corpus::make_synthetic_corpus(w.spec, w.n_records, 0);
  const auto held = corpus::make_synthetic_corpus(w.spec, w.n_heldout, w.heldout_first_index);
  corpus::FeatureStore store;
  for (const auto* set : {&train, &held})
    for (const auto& r : *set)
      for (corpus::Branch b : {corpus::Branch::semantic, corpus::Branch::paralinguistic})
        store.put(r.id, world->features(r, b));

  ensure_dir(dir);
  std::vector<std::string> files = {dir + "/corpus.jsonl", dir + "/heldout.jsonl", dir + "/features.bin",
                                    dir + "/world.json"};
  write_file(files[0], corpus::serialize_corpus(train));
  write_file(files[1], corpus::serialize_corpus(held));
  store.save(files[2]);
  const ordered_json manifest = {{"seed", w.spec.seed},
                                 {"n_records", w.n_records},
                                 {"n_heldout", w.n_heldout},
                                 {"heldout_first_index", w.heldout_first_index},
                                 {"state_hash", world->state_hash()}};
  write_file(files[3], manifest.dump(2) + "\n");
  say("world: wrote ", train.size(), " + ", held.size(), " records, state hash ", world->state_hash());
  return files;
}

std::vector<std::string> cmd_datagen(const RunConfig& c, const std::string& tag_name, const CommandOptions& o) {
  LogScope log(o);
  const ConfigTag tag = ConfigTag::parse(tag_name);
  const datagen::GenerationConfig gc = generation_config(c, tag);
  gc.validate();
  const Layout layout(c.output_dir);
  const std::string name = tag.str();
  say("datagen ", name, ": llm ", c.datagen.llm, ", max_in_flight ", c.datagen.max_in_flight, " -> ",
      layout.dataset(name, false), ", ", layout.dataset(name, true));
  if (o.dry_run) return {};

  Pipeline p = load_pipeline(c);
  auto client = make_client(c, c.datagen.llm, p.lm);
  ensure_dir(fs::path(layout.dataset(name, false)).parent_path().string());
  std::vector<std::string> files;
  for (bool heldout : {false, true}) {
    datagen::DatagenOptions opt;
    opt.seed = derive_seed(c.seeds.datagen, {tag_index(tag), heldout ? 1u : 0u});
    opt.max_in_flight = c.datagen.max_in_flight;
    opt.retry = c.datagen.retry;
    const auto& records = heldout ? p.heldout : p.train;
    const datagen::DatagenResult r = datagen::run_datagen(records, gc, client.get(), opt);
    write_file(layout.dataset(name, heldout), serialize_dataset(r.examples));
    write_file(layout.quarantine(name, heldout), datagen::serialize_quarantine(r.quarantined));
    files.push_back(layout.dataset(name, heldout));
    files.push_back(layout.quarantine(name, heldout));
    say("datagen ", name, heldout ? " held-out: " : " train: ", records.size(), " records, ", r.examples.size(),
        " examples, ", r.quarantined.size(), " quarantined");
  }
  return files;
}

std::vector<std::string> cmd_train(const RunConfig& c, const std::string& plan_name, const CommandOptions& o) {
  LogScope log(o);
  const std::string dir = Layout(c.output_dir).train_dir(plan_name);
  if (o.dry_run) {
    const training::StagePlan plan = build_plan(c, plan_name, load_datasets(c, false, true));
    say("train ", plan_name, " -> ", dir);
    for (const auto& s : plan.stages) {
      std::string mix;
      for (const auto& comp : s.mix.components) mix += (mix.empty() ? "" : "+") + comp.name;
      say("  ", s.name, ": ", s.steps, " steps x batch ", s.batch_size, " on ", mix, ", trainable ",
          group_list(s.trainable), ", ", to_string(s.optimizer.kind), " lr ", s.optimizer.lr);
    }
    return {};
  }

  Pipeline p = load_pipeline(c);
  const training::StagePlan plan = build_plan(c, plan_name, load_datasets(c, false, false));
  std::optional<model::ProjectorConfig> para;
  if (c.model.paralinguistic) para = projector_config(c, p, corpus::Branch::paralinguistic);
  const Checkpoint init =
      training::init_checkpoint(projector_config(c, p, corpus::Branch::semantic), para, c.seeds.init);
  const std::string lm_hash = p.lm->param_hash();

  ensure_dir(dir);
  std::vector<std::string> files = {dir + "/init.ckpt"};
  init.save(files[0]);
  training::RunLedger ledger;
  std::string freeze_report;
  bool freeze_ok = true;
  Checkpoint prev = init;
  auto on_end = [&](const training::Stage& s, const Checkpoint& out) {
    const std::string path = dir + "/" + s.name + ".ckpt";
    out.save(path);
    files.push_back(path);
    std::set<ParamGroup> frozen;
    for (ParamGroup g : kParamGroups)
      if (!s.trainable.count(g) && out.branch(g)) frozen.insert(g);
    const FreezeReport fr = verify_freeze(prev, out, frozen);
    std::string line = s.name + ": trainable " + group_list(s.trainable) + "; frozen";
    if (frozen.empty()) line += " -";
    for (const auto& [g, d] : fr.max_abs_diff)
      line += " " + std::string(to_string(g)) + " max|diff| " + std::to_string(d) + (d == 0.0 ? " ok" : " CHANGED");
    line += "; output " + out.hash();
    freeze_ok = freeze_ok && fr.passed();
    freeze_report += line + "\n";
    say("  ", line);
    prev = out;
  };
  say("train ", plan_name, ": ", plan.stages.size(), " stage(s), init ", init.hash());
  const Checkpoint final_ckpt = training::run_plan(plan, init, *p.runtime, ledger, on_end);

  const bool lm_ok = p.lm->param_hash() == lm_hash;
  freeze_report += std::string("frozen LM ") + (lm_ok ? "unchanged" : "CHANGED") + " " + lm_hash + "\n";
  say("  frozen LM ", lm_ok ? "unchanged" : "CHANGED");
  files.push_back(dir + "/final.ckpt");
  final_ckpt.save(files.back());
  files.push_back(dir + "/ledger.jsonl");
  write_file(files.back(), ledger.to_jsonl());
  files.push_back(dir + "/freeze.txt");
  write_file(files.back(), freeze_report);
  if (!freeze_ok || !lm_ok) throw IncompatibleCheckpoints("freeze verification failed; see " + files.back());
  say("train ", plan_name, ": final ", final_ckpt.hash());
  return files;
}

std::vector<std::string> cmd_eval(const RunConfig& c, const std::string& checkpoint, const std::string& label,
                                  const CommandOptions& o) {
  LogScope log(o);
  const std::string dir = Layout(c.output_dir).eval_dir(label);
  if (o.dry_run) {
    if (!fs::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint);
    say("eval ", checkpoint, " -> ", dir);
    return {};
  }
  const Checkpoint ckpt = Checkpoint::load(checkpoint);
  Pipeline p = load_pipeline(c);
  say("eval ", label, ": checkpoint ", ckpt.hash());
  Measurements m = measure(c, p, ckpt, "");
  ensure_dir(dir);
  const ordered_json summary = {{"checkpoint", ckpt.hash()}};
  return finish_report(c, p, ckpt, std::move(m), nullptr, dir, summary);
}

std::vector<std::string> cmd_report(const RunConfig& c, const std::string& plan_name, const CommandOptions& o) {
  LogScope log(o);
  const std::string train_dir = Layout(c.output_dir).train_dir(plan_name);
  const std::string dir = Layout(c.output_dir).report_dir(plan_name);
  const std::string ledger_path = train_dir + "/ledger.jsonl";
  if (o.dry_run) {
    if (!fs::exists(ledger_path)) throw IoError("no trained plan at " + train_dir);
    say("report ", plan_name, " -> ", dir);
    return {};
  }
  const training::RunLedger ledger = training::RunLedger::from_jsonl(read_file(ledger_path));
  Pipeline p = load_pipeline(c);
  std::vector<std::pair<std::string, std::string>> ckpts = {{"init", train_dir + "/init.ckpt"}};
  for (const auto& s : ledger.stages()) ckpts.emplace_back(s.stage, train_dir + "/" + s.stage + ".ckpt");

  Measurements all;
  ordered_json hashes = ordered_json::object();
  Checkpoint last;
  for (const auto& [stage, path] : ckpts) {
    last = Checkpoint::load(path);
    hashes[stage] = last.hash();
    say("report ", plan_name, ": ", stage, " ", last.hash());
    Measurements m = measure(c, p, last, stage + "/");
    for (auto& a : m.alignment) all.alignment.push_back(std::move(a));
    for (auto& r : m.probes) all.probes.push_back(std::move(r));
  }
  ensure_dir(dir);
  return finish_report(c, p, last, std::move(all), &ledger, dir, {{"plan", plan_name}, {"checkpoints", hashes}});
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UnknownConfigTag*>(&e) ||
      dynamic_cast<const InvalidSpec*>(&e))
    return 1;
  return 2;
}

}  // namespace sift::cli
