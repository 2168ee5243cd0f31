#include "run_config.hpp"

#include <filesystem>
#include <limits>

#include "json.hpp"

namespace sift::cli {

namespace {

using nlohmann::json;

// A JSON object whose keys must all be consumed; done() reports leftovers.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& at(const std::string& key) const {
    auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError(where(key) + ": required key is missing");
    used_.insert(key);
    return *it;
  }

  Node obj(const std::string& key) const { return Node(at(key), where(key)); }

  std::uint64_t u64(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where(key) + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  std::uint64_t u64(const std::string& key, std::uint64_t def) const { return has(key) ? u64(key) : def; }

  std::int64_t i64(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
    if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX))
      throw ConfigError(where(key) + ": integer out of range");
    return v.get<std::int64_t>();
  }
  std::int64_t i64(const std::string& key, std::int64_t def) const { return has(key) ? i64(key) : def; }

  int i32(const std::string& key) const {
    const std::int64_t v = i64(key);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
      throw ConfigError(where(key) + ": integer out of range");
    return static_cast<int>(v);
  }
  int i32(const std::string& key, int def) const { return has(key) ? i32(key) : def; }

  double num(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
    return v.get<double>();
  }
  double num(const std::string& key, double def) const { return has(key) ? num(key) : def; }

  bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const json& v = at(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string str(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::string str(const std::string& key, const std::string& def) const { return has(key) ? str(key) : def; }

  std::vector<std::string> strings(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_array()) throw ConfigError(where(key) + ": expected an array of strings");
    std::vector<std::string> out;
    for (const auto& s : v) {
      if (!s.is_string()) throw ConfigError(where(key) + ": expected an array of strings");
      out.push_back(s.get<std::string>());
    }
    return out;
  }
  std::vector<std::string> strings(const std::string& key, std::vector<std::string> def) const {
    return has(key) ? strings(key) : std::move(def);
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown key");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(path_ + ": " + msg); }
  std::string where(const std::string& key) const { return path_ + "." + key; }
  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  mutable std::set<std::string> used_;
};

void require(bool ok, const std::string& where, const std::string& msg) {
  if (!ok) throw ConfigError(where + ": " + msg);
}

model::DecodeParams parse_decode(const Node& n, model::DecodeParams def) {
  model::DecodeParams d = def;
  d.temperature = n.num("temperature", d.temperature);
  d.max_new_tokens = n.i32("max_new_tokens", d.max_new_tokens);
  if (n.has("seed")) d.seed = n.u64("seed");
  n.done();
  require(d.temperature >= 0.0, n.path(), "temperature must be >= 0");
  require(d.max_new_tokens > 0, n.path(), "max_new_tokens must be positive");
  require(d.temperature == 0.0 || d.seed.has_value(), n.path(), "sampled decoding needs an explicit seed");
  return d;
}

training::OptimizerConfig parse_optimizer(const Node& n) {
  training::OptimizerConfig o;
  try {
    if (n.has("kind")) o.kind = training::optimizer_kind_from_string(n.str("kind"));
    if (n.has("schedule")) o.schedule = training::schedule_from_string(n.str("schedule"));
  } catch (const InvalidSpec& e) {
    n.fail(e.what());
  }
  o.lr = n.num("lr", o.lr);
  o.beta1 = n.num("beta1", o.beta1);
  o.beta2 = n.num("beta2", o.beta2);
  o.eps = n.num("eps", o.eps);
  n.done();
  require(o.lr > 0.0, n.path(), "lr must be positive");
  return o;
}

datagen::MixStrategy parse_strategy(const Node& n) {
  const std::string s = n.str("mix_strategy", "proportional");
  if (s == "proportional") return datagen::MixStrategy::proportional;
  if (s == "rebalanced") return datagen::MixStrategy::rebalanced;
  throw ConfigError(n.where("mix_strategy") + ": expected proportional or rebalanced");
}

std::string parse_tag(const std::string& tag, const std::string& where) {
  try {
    return ConfigTag::parse(tag).str();
  } catch (const UnknownConfigTag& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

WorldSection parse_world(const Node& n) {
  WorldSection w;
  w.n_records = n.i64("n_records");
  w.n_heldout = n.i64("n_heldout", 0);
  w.heldout_first_index = n.u64("heldout_first_index", w.heldout_first_index);
  auto& s = w.spec;
  s.vocab = n.strings("vocab");
  const json& len = n.at("transcript_len");
  require(len.is_array() && len.size() == 2 && len[0].is_number_integer() && len[1].is_number_integer(),
          n.where("transcript_len"), "expected [min, max]");
  s.transcript_len_min = len[0].get<int>();
  s.transcript_len_max = len[1].get<int>();
  const Node attrs = n.obj("attributes");
  for (auto it = attrs.raw().begin(); it != attrs.raw().end(); ++it)
    s.attribute_vocab[it.key()] = attrs.strings(it.key());
  attrs.done();
  s.frames_per_symbol = n.i32("frames_per_symbol", s.frames_per_symbol);
  s.d_enc = n.i32("d_enc", s.d_enc);
  s.noise_sigma = n.num("noise_sigma", s.noise_sigma);
  s.frame_rate_hz = n.num("frame_rate_hz", s.frame_rate_hz);
  n.done();
  require(w.n_heldout >= 0, n.where("n_heldout"), "must be >= 0");
  require(w.heldout_first_index >= static_cast<std::uint64_t>(std::max<std::int64_t>(w.n_records, 0)),
          n.where("heldout_first_index"), "held-out indices overlap the training range");
  return w;
}

ModelSection parse_model(const Node& n) {
  ModelSection m;
  if (n.has("lm")) {
    const Node l = n.obj("lm");
    auto& c = m.lm;
    const std::string kind = l.str("kind", "induction");
    if (kind == "induction") c.kind = model::ToyLMKind::induction;
    else if (kind == "random") c.kind = model::ToyLMKind::random;
    else l.fail("kind must be induction or random");
    c.d_model = l.i32("d_model", c.d_model);
    c.byte_fallback = l.flag("byte_fallback", c.byte_fallback);
    c.position_pairs = l.i32("position_pairs", c.position_pairs);
    c.position_gain = l.num("position_gain", c.position_gain);
    c.position_slope = l.num("position_slope", c.position_slope);
    c.prev_scale = l.num("prev_scale", c.prev_scale);
    c.match_gain = l.num("match_gain", c.match_gain);
    c.start_gain = l.num("start_gain", c.start_gain);
    c.recency_slope = l.num("recency_slope", c.recency_slope);
    c.logit_scale = l.num("logit_scale", c.logit_scale);
    c.layers = l.i32("layers", c.layers);
    c.heads = l.i32("heads", c.heads);
    c.d_ff = l.i32("d_ff", c.d_ff);
    c.init_scale = l.num("init_scale", c.init_scale);
    l.done();
  }
  if (n.has("projector")) {
    const Node p = n.obj("projector");
    m.group = p.i32("group", m.group);
    m.d_hidden = p.i32("d_hidden", m.d_hidden);
    m.bias = p.flag("bias", m.bias);
    p.done();
  }
  m.paralinguistic = n.flag("paralinguistic_branch", m.paralinguistic);
  n.done();
  return m;
}

LlmEndpoint parse_endpoint(const Node& n) {
  for (const char* secret : {"token", "api_key", "key", "password", "authorization"})
    if (n.has(secret))
      throw ConfigError(n.where(secret) + ": secrets are read from the environment; name the variable in token_env");
  LlmEndpoint e;
  e.base_url = n.str("base_url");
  e.model = n.str("model");
  e.token_env = n.str("token_env", "");
  e.timeout_ms = n.i32("timeout_ms", e.timeout_ms);
  n.done();
  require(e.timeout_ms > 0, n.where("timeout_ms"), "must be positive");
  return e;
}

DatagenSection parse_datagen(const Node& n) {
  DatagenSection d;
  d.llm = n.str("llm", d.llm);
  d.max_in_flight = n.i32("max_in_flight", d.max_in_flight);
  if (n.has("retry")) {
    const Node r = n.obj("retry");
    d.retry.max_attempts = r.i32("max_attempts", d.retry.max_attempts);
    d.retry.base_delay = std::chrono::milliseconds(r.i64("base_delay_ms", d.retry.base_delay.count()));
    d.retry.multiplier = r.num("multiplier", d.retry.multiplier);
    r.done();
    require(d.retry.max_attempts >= 1, r.where("max_attempts"), "must be >= 1");
  }
  if (n.has("decode")) d.decode = parse_decode(n.obj("decode"), d.decode);
  d.system_prompt = n.str("system_prompt", d.system_prompt);
  d.sit_instructions = n.strings("sit_instructions", d.sit_instructions);
  d.tsit_prompts = n.strings("tsit_prompts", {});
  n.done();
  require(d.max_in_flight >= 1, n.where("max_in_flight"), "must be >= 1");
  return d;
}

StageSection parse_stage(const Node& n) {
  StageSection s;
  s.name = n.str("name");
  const json& mix = n.at("mix");
  require(mix.is_array() && !mix.empty(), n.where("mix"), "expected a non-empty array");
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const Node c(mix[i], n.where("mix") + "[" + std::to_string(i) + "]");
    const std::string tag = parse_tag(c.str("tag"), c.where("tag"));
    s.mix.emplace_back(tag, c.num("weight", 1.0));
    c.done();
  }
  for (const auto& g : n.strings("trainable")) {
    try {
      s.trainable.insert(param_group_from_string(g));
    } catch (const InvalidSpec& e) {
      throw ConfigError(n.where("trainable") + ": " + e.what());
    }
  }
  s.steps = n.i32("steps");
  s.batch_size = n.i32("batch_size", s.batch_size);
  if (n.has("optimizer")) s.optimizer = parse_optimizer(n.obj("optimizer"));
  s.seed = n.u64("seed");
  n.done();
  require(s.steps >= 0, n.where("steps"), "must be >= 0");
  require(s.batch_size >= 1, n.where("batch_size"), "must be >= 1");
  return s;
}

PlanSection parse_plan(const Node& n) {
  PlanSection p;
  p.strategy = parse_strategy(n);
  if (n.has("preset")) {
    p.preset = n.str("preset");
    const auto& names = training::preset_names();
    if (p.preset->starts_with("single:")) {
      parse_tag(p.preset->substr(7), n.where("preset"));
    } else if (std::find(names.begin(), names.end(), *p.preset) == names.end()) {
      throw ConfigError(n.where("preset") + ": unknown preset '" + *p.preset + "'");
    }
    p.options.stage1_steps = n.i32("stage1_steps", p.options.stage1_steps);
    p.options.stage2_steps = n.i32("stage2_steps", p.options.stage2_steps);
    p.options.batch_size = n.i32("batch_size", p.options.batch_size);
    if (n.has("optimizer")) p.options.optimizer = parse_optimizer(n.obj("optimizer"));
    p.options.strategy = p.strategy;
    require(p.options.stage1_steps >= 0 && p.options.stage2_steps >= 0, n.path(), "steps must be >= 0");
    require(p.options.batch_size >= 1, n.where("batch_size"), "must be >= 1");
    if (n.has("stages")) n.fail("give either preset or stages, not both");
  } else {
    const json& stages = n.at("stages");
    require(stages.is_array() && !stages.empty(), n.where("stages"), "expected a non-empty array");
    for (std::size_t i = 0; i < stages.size(); ++i)
      p.stages.push_back(parse_stage(Node(stages[i], n.where("stages") + "[" + std::to_string(i) + "]")));
  }
  n.done();
  return p;
}

EvalSection parse_eval(const Node& n) {
  EvalSection e;
  e.attributes = n.strings("attributes", e.attributes);
  for (const auto& a : e.attributes)
    require(corpus::is_attribute_key(a), n.where("attributes"), "unknown attribute '" + a + "'");
  e.ridge = n.num("ridge", e.ridge);
  e.alignment_tags = n.strings("alignment_tags", e.alignment_tags);
  for (auto& t : e.alignment_tags) t = parse_tag(t, n.where("alignment_tags"));
  e.alignment_items = n.i32("alignment_items", e.alignment_items);
  e.alignment_generation = n.flag("alignment_generation", e.alignment_generation);
  e.generation_instruction = n.str("generation_instruction", e.generation_instruction);
  e.generation_items = n.i32("generation_items", e.generation_items);
  if (n.has("decode")) e.decode = parse_decode(n.obj("decode"), e.decode);
  if (n.has("judge") && !n.at("judge").is_null()) {
    const Node j = n.obj("judge");
    JudgeSection js;
    js.llm = j.str("llm");
    js.rubric = j.str("rubric");
    js.max_in_flight = j.i32("max_in_flight", js.max_in_flight);
    j.done();
    e.judge = js;
  }
  n.done();
  require(e.ridge > 0.0, n.where("ridge"), "must be positive");
  require(e.alignment_items >= 0 && e.generation_items >= 0, n.path(), "item counts must be >= 0");
  return e;
}

}  // namespace

std::string RunConfig::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

RunConfig parse_run_config(std::string_view text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const Node root(doc, "$");
  RunConfig c;
  c.base_dir = base_dir;

  const Node seeds = root.obj("seeds");
  c.seeds.world = seeds.u64("world");
  c.seeds.lm = seeds.u64("lm");
  c.seeds.datagen = seeds.u64("datagen");
  c.seeds.init = seeds.u64("init");
  c.seeds.train = seeds.u64("train");
  seeds.done();

  c.output_dir = root.str("output_dir");
  if (root.has("world")) c.world = parse_world(root.obj("world"));
  if (root.has("corpus")) {
    const Node n = root.obj("corpus");
    c.corpus = CorpusSection{n.str("train"), n.str("heldout"), n.str("features")};
    n.done();
  }
  if (c.world.has_value() == c.corpus.has_value()) root.fail("exactly one of world and corpus is required");
  if (c.world) c.world->spec.seed = c.seeds.world;
  c.model.lm.seed = c.seeds.lm;
  if (root.has("model")) {
    const std::uint64_t lm_seed = c.model.lm.seed;
    c.model = parse_model(root.obj("model"));
    c.model.lm.seed = lm_seed;
  }
  if (root.has("llm")) {
    const Node n = root.obj("llm");
    for (auto it = n.raw().begin(); it != n.raw().end(); ++it) {
      require(it.key() != "toy", n.path(), "the name 'toy' is reserved for the built-in LM");
      c.llm[it.key()] = parse_endpoint(n.obj(it.key()));
    }
    n.done();
  }
  if (root.has("datagen")) c.datagen = parse_datagen(root.obj("datagen"));
  require(c.datagen.llm == "toy" || c.llm.count(c.datagen.llm), "$.datagen.llm",
          "no llm endpoint named '" + c.datagen.llm + "'");
  if (root.has("plans")) {
    const Node n = root.obj("plans");
    for (auto it = n.raw().begin(); it != n.raw().end(); ++it) {
      c.plans[it.key()] = parse_plan(n.obj(it.key()));
      c.plans[it.key()].options.seed = c.seeds.train;
    }
    n.done();
  }
  if (root.has("eval")) c.eval = parse_eval(root.obj("eval"));
  if (c.eval.judge)
    require(c.llm.count(c.eval.judge->llm), "$.eval.judge.llm", "no llm endpoint named '" + c.eval.judge->llm + "'");
  root.done();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  const std::string dir = std::filesystem::path(path).parent_path().string();
  return parse_run_config(text, dir.empty() ? "." : dir);
}

void override_seeds(RunConfig& c, std::uint64_t seed) {
  c.seeds = {derive_seed(seed, {0}), derive_seed(seed, {1}), derive_seed(seed, {2}), derive_seed(seed, {3}),
             derive_seed(seed, {4})};
  if (c.world) c.world->spec.seed = c.seeds.world;
  c.model.lm.seed = c.seeds.lm;
  std::uint64_t k = 0;
  for (auto& [name, plan] : c.plans) {
    plan.options.seed = c.seeds.train;
    for (auto& s : plan.stages) s.seed = derive_seed(seed, {5, k++});
  }
}

}  // namespace sift::cli
