#include "sift/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace sift::training {

using nlohmann::ordered_json;

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
std::string_view to_string(Schedule s) { return s == Schedule::constant ? "constant" : "cosine"; }

OptimizerKind optimizer_kind_from_string(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw InvalidSpec("unknown optimizer '" + std::string(s) + "'");
}

Schedule schedule_from_string(std::string_view s) {
  if (s == "constant") return Schedule::constant;
  if (s == "cosine") return Schedule::cosine;
  throw InvalidSpec("unknown schedule '" + std::string(s) + "'");
}

double OptimizerConfig::lr_at(int step, int steps) const {
  if (schedule == Schedule::constant || steps <= 1) return lr;
  const double t = static_cast<double>(step) / static_cast<double>(steps);
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * t));
}

void Stage::validate() const {
  if (name.empty()) throw InvalidSpec("stage without a name");
  if (trainable.empty()) throw InvalidSpec("stage '" + name + "' has no trainable groups");
  if (steps < 0) throw InvalidSpec("stage '" + name + "': steps must be >= 0");
  if (batch_size < 1) throw InvalidSpec("stage '" + name + "': batch_size must be >= 1");
  if (!std::isfinite(optimizer.lr) || !(optimizer.lr > 0.0)) throw InvalidSpec("stage '" + name + "': lr must be positive");
  if (steps > 0) mix.validate();
}

void StagePlan::validate() const {
  if (stages.empty()) throw InvalidSpec("plan '" + name + "' has no stages");
  std::set<std::string> names;
  for (const auto& s : stages) {
    s.validate();
    if (!names.insert(s.name).second) throw InvalidSpec("duplicate stage name '" + s.name + "'");
  }
}

MixStream::MixStream(datagen::DatasetMix mix, std::uint64_t seed)
    : mix_(std::move(mix)), sampler_(mix_), rng_(seed) {}

const TrainingExample* MixStream::next() {
  const datagen::MixDraw d = sampler_.draw(rng_);
  return &(*mix_.components[d.component].examples)[d.index];
}

const TrainingExample* ListStream::next() {
  return pos_ < examples_.size() ? &examples_[pos_++] : nullptr;
}

void RunLedger::append(StepRecord r) {
  if (r.step != next_step())
    throw InvalidSpec("ledger step " + std::to_string(r.step) + " is not contiguous (expected " +
                      std::to_string(next_step()) + ")");
  steps_.push_back(std::move(r));
}

void RunLedger::close_stage(StageRecord r) { stages_.push_back(std::move(r)); }

std::string RunLedger::to_jsonl() const {
  std::string out;
  std::size_t next_stage = 0;
  auto emit_stage = [&](const StageRecord& s) {
    ordered_json j;
    j["event"] = "stage_end";
    j["stage"] = s.stage;
    j["first_step"] = s.first_step;
    j["steps"] = s.steps;
    j["input_hash"] = s.input_hash;
    j["output_hash"] = s.output_hash;
    ordered_json g = ordered_json::object();
    for (const auto& [k, v] : s.group_hashes) g[std::string(to_string(k))] = v;
    j["group_hashes"] = g;
    j["config_tags"] = s.config_tags;
    out += j.dump();
    out += '\n';
  };
  auto flush_stages = [&](std::int64_t upto) {
    while (next_stage < stages_.size() && stages_[next_stage].first_step + stages_[next_stage].steps <= upto)
      emit_stage(stages_[next_stage++]);
  };
  for (const auto& r : steps_) {
    flush_stages(r.step);
    ordered_json j;
    j["step"] = r.step;
    j["stage"] = r.stage;
    j["loss"] = r.loss;
    j["masked_tokens"] = r.masked_tokens;
    j["correct_tokens"] = r.correct_tokens;
    ordered_json g = ordered_json::object();
    for (const auto& [k, v] : r.grad_norms) g[std::string(to_string(k))] = v;
    j["grad_norms"] = g;
    j["lr"] = r.lr;
    out += j.dump();
    out += '\n';
  }
  while (next_stage < stages_.size()) emit_stage(stages_[next_stage++]);
  return out;
}

RunLedger RunLedger::from_jsonl(std::string_view text) {
  RunLedger ledger;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const ordered_json j = ordered_json::parse(line);
      if (j.contains("event")) {
        if (j.at("event") != "stage_end") throw MalformedRecord("unknown event");
        StageRecord s;
        s.stage = j.at("stage").get<std::string>();
        s.first_step = j.at("first_step").get<std::int64_t>();
        s.steps = j.at("steps").get<std::int64_t>();
        s.input_hash = j.at("input_hash").get<std::string>();
        s.output_hash = j.at("output_hash").get<std::string>();
        for (const auto& [k, v] : j.at("group_hashes").items()) s.group_hashes[param_group_from_string(k)] = v;
        s.config_tags = j.at("config_tags").get<std::vector<std::string>>();
        ledger.close_stage(std::move(s));
      } else {
        StepRecord r;
        r.step = j.at("step").get<std::int64_t>();
        r.stage = j.at("stage").get<std::string>();
        r.loss = j.at("loss").get<double>();
        r.masked_tokens = j.at("masked_tokens").get<std::size_t>();
        r.correct_tokens = j.at("correct_tokens").get<std::size_t>();
        for (const auto& [k, v] : j.at("grad_norms").items()) r.grad_norms[param_group_from_string(k)] = v;
        r.lr = j.at("lr").get<double>();
        ledger.append(std::move(r));
      }
    } catch (const ordered_json::exception& e) {
      throw MalformedRecord("ledger line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw MalformedRecord("ledger line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ledger;
}

namespace {

struct AdamState {
  model::ProjectorParams m, v;
};

template <typename T>
void adam_update(T& p, const T& g, T& m, T& v, double lr, double b1, double b2, double eps, double c1, double c2) {
  if (p.size() == 0) return;
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
  p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

std::string diagnostic(const Stage& stage, std::int64_t step, const std::vector<const TrainingExample*>& batch,
                       const Checkpoint& ckpt, double loss) {
  std::ostringstream os;
  os << "stage '" << stage.name << "' step " << step << ": loss " << loss << "; records";
  for (const auto* e : batch) os << ' ' << e->record_id;
  for (ParamGroup g : kParamGroups) {
    const auto& b = ckpt.branch(g);
    if (!b) continue;
    os << "; |" << to_string(g) << "|^2=" << b->params.squared_norm() << (b->params.all_finite() ? "" : " (non-finite)");
  }
  return os.str();
}

std::vector<std::string> stage_tags(const Stage& stage) {
  std::set<std::string> tags;
  for (const auto& c : stage.mix.components)
    if (c.examples)
      for (const auto& e : *c.examples) tags.insert(e.config_tag);
  return {tags.begin(), tags.end()};
}

}  // namespace

Checkpoint run_stage(const Stage& stage, const Checkpoint& start, ExampleStream& stream, const Runtime& runtime,
                     RunLedger& ledger) {
  stage.validate();
  for (ParamGroup g : stage.trainable)
    if (!start.branch(g)) throw InvalidSpec("stage '" + stage.name + "' trains " + std::string(to_string(g)) +
                                            ", which the model does not have");
  const auto t0 = std::chrono::steady_clock::now();
  Checkpoint ckpt = start;
  const std::int64_t first_step = ledger.next_step();

  std::map<ParamGroup, AdamState> adam;
  for (ParamGroup g : stage.trainable) {
    const auto& cfg = start.branch(g)->config;
    adam[g] = {model::ProjectorParams::zeros(cfg), model::ProjectorParams::zeros(cfg)};
  }

  std::vector<const TrainingExample*> batch;
  for (int s = 0; s < stage.steps; ++s) {
    const std::int64_t step = first_step + s;
    batch.clear();
    for (int b = 0; b < stage.batch_size; ++b) {
      const TrainingExample* e = stream.next();
      if (e == nullptr)
        throw StreamExhausted("stage '" + stage.name + "' ran out of examples at step " + std::to_string(step));
      batch.push_back(e);
    }

    std::map<ParamGroup, model::ProjectorParams> grad;
    for (ParamGroup g : stage.trainable) grad[g] = model::ProjectorParams::zeros(ckpt.branch(g)->config);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    StepRecord rec;
    rec.step = step;
    rec.stage = stage.name;
    for (const TrainingExample* e : batch) {
      const Runtime::ExampleLoss r = runtime.example_loss(ckpt, *e, stage.trainable);
      if (!std::isfinite(r.loss.value)) throw NonFiniteLoss(diagnostic(stage, step, batch, ckpt, r.loss.value));
      rec.loss += r.loss.value * inv_b;
      rec.masked_tokens += r.loss.tokens;
      rec.correct_tokens += r.loss.correct;
      for (auto& [g, gp] : grad) gp.axpy(inv_b, r.grads.at(g));
    }
    for (auto& [g, gp] : grad) {
      if (!gp.all_finite()) throw NonFiniteLoss(diagnostic(stage, step, batch, ckpt, rec.loss) + "; non-finite gradient");
      rec.grad_norms[g] = std::sqrt(gp.squared_norm());
    }

    rec.lr = stage.optimizer.lr_at(s, stage.steps);
    const auto& opt = stage.optimizer;
    for (auto& [g, gp] : grad) {
      auto& p = ckpt.branch(g)->params;
      if (opt.kind == OptimizerKind::sgd) {
        p.axpy(-rec.lr, gp);
        continue;
      }
      auto& st = adam[g];
      const double c1 = 1.0 - std::pow(opt.beta1, s + 1);
      const double c2 = 1.0 - std::pow(opt.beta2, s + 1);
      adam_update(p.w1, gp.w1, st.m.w1, st.v.w1, rec.lr, opt.beta1, opt.beta2, opt.eps, c1, c2);
      adam_update(p.b1, gp.b1, st.m.b1, st.v.b1, rec.lr, opt.beta1, opt.beta2, opt.eps, c1, c2);
      adam_update(p.w2, gp.w2, st.m.w2, st.v.w2, rec.lr, opt.beta1, opt.beta2, opt.eps, c1, c2);
      adam_update(p.b2, gp.b2, st.m.b2, st.v.b2, rec.lr, opt.beta1, opt.beta2, opt.eps, c1, c2);
    }
    ledger.append(std::move(rec));
  }

  if (stage.steps > 0) {
    ckpt.stage = stage.name;
    ckpt.rng_state = derive_seed(stage.seed, {static_cast<std::uint64_t>(stage.steps)});
  }
  StageRecord sr;
  sr.stage = stage.name;
  sr.first_step = first_step;
  sr.steps = stage.steps;
  sr.input_hash = start.hash();
  sr.output_hash = ckpt.hash();
  for (ParamGroup g : kParamGroups) sr.group_hashes[g] = ckpt.group_hash(g);
  sr.config_tags = stage_tags(stage);
  sr.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ledger.close_stage(std::move(sr));
  return ckpt;
}

Checkpoint run_plan(const StagePlan& plan, const Checkpoint& init, const Runtime& runtime, RunLedger& ledger,
                    const std::function<void(const Stage&, const Checkpoint&)>& on_stage_end,
                    std::size_t first_stage) {
  plan.validate();
  if (first_stage > plan.stages.size())
    throw InvalidSpec("plan '" + plan.name + "' has no stage " + std::to_string(first_stage));
  Checkpoint ckpt = init;
  for (std::size_t i = first_stage; i < plan.stages.size(); ++i) {
    const Stage& stage = plan.stages[i];
    if (stage.steps == 0) {
      ListStream empty({});
      ckpt = run_stage(stage, ckpt, empty, runtime, ledger);
    } else {
      MixStream stream(stage.mix, derive_seed(stage.seed, {0}));
      ckpt = run_stage(stage, ckpt, stream, runtime, ledger);
    }
    if (on_stage_end) on_stage_end(stage, ckpt);
  }
  return ckpt;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> kNames = {"two_stage", "two_stage_mixed", "one_stage", "ssp_mitigation"};
  return kNames;
}

namespace {

datagen::DatasetComponent component(const DatasetsByTag& datasets, const std::string& tag) {
  auto it = datasets.find(tag);
  if (it == datasets.end() || !it->second || it->second->empty())
    throw EmptyComponent("plan needs the " + tag + " dataset");
  return {tag, it->second, 1.0};
}

Stage make_stage(std::string name, std::vector<datagen::DatasetComponent> comps, std::set<ParamGroup> trainable,
                 int steps, const PresetOptions& o, std::uint64_t index) {
  Stage s;
  s.name = std::move(name);
  s.mix.components = std::move(comps);
  s.mix.strategy = o.strategy;
  s.trainable = std::move(trainable);
  s.steps = steps;
  s.batch_size = o.batch_size;
  s.optimizer = o.optimizer;
  s.seed = derive_seed(o.seed, {index});
  return s;
}

}  // namespace

StagePlan preset_plan(std::string_view name, const DatasetsByTag& d, const PresetOptions& o) {
  const std::set<ParamGroup> sem = {ParamGroup::proj_semantic};
  const std::set<ParamGroup> para = {ParamGroup::proj_paralinguistic};
  const std::set<ParamGroup> both = {ParamGroup::proj_semantic, ParamGroup::proj_paralinguistic};
  StagePlan plan;
  plan.name = std::string(name);
  if (name == "two_stage") {
    plan.stages.push_back(make_stage("stage1", {component(d, "SIFT_s")}, sem, o.stage1_steps, o, 1));
    plan.stages.push_back(make_stage("stage2", {component(d, "SIFT_sp")}, para, o.stage2_steps, o, 2));
  } else if (name == "two_stage_mixed") {
    plan.stages.push_back(make_stage("stage1", {component(d, "SIFT_s")}, sem, o.stage1_steps, o, 1));
    plan.stages.push_back(
        make_stage("stage2", {component(d, "SIFT_s"), component(d, "SIFT_sp")}, para, o.stage2_steps, o, 2));
  } else if (name == "one_stage") {
    plan.stages.push_back(make_stage("joint", {component(d, "SIFT_s"), component(d, "SIFT_sp")}, both,
                                     o.stage1_steps + o.stage2_steps, o, 1));
  } else if (name == "ssp_mitigation") {
    plan.stages.push_back(make_stage("stage1", {component(d, "SIFT_s")}, sem, o.stage1_steps, o, 1));
    plan.stages.push_back(
        make_stage("stage2", {component(d, "SIFT_ssp"), component(d, "SIT_ssp")}, para, o.stage2_steps, o, 2));
  } else if (name.starts_with("single:")) {
    const std::string tag(name.substr(7));
    // The tag's own stage decides the trainable branch, as in the two-stage presets.
    const bool first = ConfigTag::parse(tag).default_stage() == StageTag::stage1;
    plan.stages.push_back(make_stage("joint", {component(d, tag)}, first ? sem : para, o.stage1_steps, o, 1));
  } else {
    throw InvalidSpec("unknown plan preset '" + std::string(name) + "'");
  }
  return plan;
}

Checkpoint init_checkpoint(const model::ProjectorConfig& semantic, const std::optional<model::ProjectorConfig>& para,
                           std::uint64_t seed) {
  Checkpoint c;
  c.stage = "init";
  c.rng_state = seed;
  c.semantic = BranchState{semantic, model::init_projector(semantic, model::ProjectorInit::uniform_fan_in,
                                                           derive_seed(seed, {0}))};
  if (para)
    c.paralinguistic =
        BranchState{*para, model::init_projector(*para, model::ProjectorInit::zero_output, derive_seed(seed, {1}))};
  return c;
}

}  // namespace sift::training
