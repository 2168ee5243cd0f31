// Acceptance run: one PASS/FAIL line per criterion C1-C10.
//
//   sift_acceptance [--config PATH] [--work DIR] [C1 C2 ...]
//
// With no criteria listed, all ten run. Criteria that need trained models
// share one pipeline run of the default config.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include "commands.hpp"
#include "sift/datagen.hpp"
#include "sift/eval.hpp"
#include "sift/model.hpp"
#include "sift/projector.hpp"
#include "sift/training.hpp"

using namespace sift;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// Work shared by the criteria that need a trained pipeline.
struct Shared {
  std::string config_path;
  std::string work;
  std::optional<cli::RunConfig> run_a;
  std::optional<cli::Pipeline> pipeline;

  cli::RunConfig config(const std::string& out) const {
    cli::RunConfig c = cli::load_run_config(config_path);
    c.output_dir = out;
    return c;
  }

  // world -> datagen (toy LM) -> two_stage -> eval, into `out`.
  void full_run(const cli::RunConfig& c) const {
    const cli::CommandOptions quiet;
    cli::cmd_world(c, quiet);
    for (const char* tag : {"SIFT_s", "SIFT_sp"}) cli::cmd_datagen(c, tag, quiet);
    cli::cmd_train(c, "two_stage", quiet);
    cli::cmd_eval(c, cli::Layout(c.output_dir).train_dir("two_stage") + "/final.ckpt", "final", quiet);
  }

  const cli::RunConfig& a() {
    if (!run_a) {
      run_a = config(work + "/run_a");
      std::cerr << "[acceptance] pipeline run A\n";
      full_run(*run_a);
    }
    return *run_a;
  }

  const cli::Pipeline& p() {
    if (!pipeline) pipeline = cli::load_pipeline(a());
    return *pipeline;
  }
};

// ---------------------------------------------------------------------------

Outcome c1() {
  const model::ProjectorConfig c{768, 4, 3584, 3584, true};
  const std::int64_t formula = (4LL * 768) * 3584 + 3584 + 3584LL * 3584 + 3584;
  const std::int64_t got = model::count_params(c);
  const double rel = std::abs(static_cast<double>(got) - 23.8e6) / 23.8e6;
  return {got == formula && formula == 23862272 && rel < 0.003,
          "count_params = " + std::to_string(got) + " (formula " + std::to_string(formula) + "), " + fmt(rel * 100, 3) +
              "% from 23.8M"};
}

Outcome c2() {
  const model::ProjectorConfig c{8, 4, 5, 6, true};
  const auto params = model::init_projector(c, model::ProjectorInit::uniform_fan_in, 1);
  int bad = 0;
  for (int t = 1; t <= 64; ++t) {
    const Eigen::Index expect = (t + 3) / 4;
    const Matrix out = model::project(c, params, Matrix::Ones(t, 8), nullptr);
    if (model::projected_length(t, 4) != expect || out.rows() != expect) ++bad;
    if (t % 4 == 0 && static_cast<double>(expect) * 25.0 / t != 6.25) ++bad;
  }
  return {bad == 0, "T=1..64 at 25 Hz, group 4: " + std::to_string(bad) + " mismatches; 6.25 tokens/s for T%4==0"};
}

Outcome c3() {
  corpus::SyntheticWorldSpec ws;
  ws.seed = 3;
  ws.vocab = {"ba", "de", "fi", "go"};
  ws.transcript_len_min = 2;
  ws.transcript_len_max = 3;
  ws.attribute_vocab = {{"emotion", {"happy", "sad"}}};
  ws.frames_per_symbol = 2;
  ws.d_enc = 8;
  auto world = std::make_shared<corpus::SyntheticWorld>(ws);
  auto records = corpus::make_synthetic_corpus(ws, 3);

  model::ToyLMConfig lc;
  lc.kind = model::ToyLMKind::random;
  lc.seed = 5;
  lc.d_model = 4;
  lc.byte_fallback = false;
  lc.lexicon = {"ba", "de", "fi", "go", "."};
  auto lm = std::make_shared<model::ToyLM>(lc);
  auto enc = std::make_shared<corpus::EncoderSet>();
  enc->add(corpus::Branch::semantic, std::make_shared<corpus::SyntheticEncoder>(world));
  enc->add(corpus::Branch::paralinguistic, std::make_shared<corpus::SyntheticEncoder>(world));
  Runtime rt(lm, enc, records);

  const model::ProjectorConfig pc{8, 2, 3, 4, true};
  Checkpoint ckpt = training::init_checkpoint(pc, pc, 7);
  ckpt.paralinguistic->params = model::init_projector(pc, model::ProjectorInit::uniform_fan_in, 8);

  const std::set<ParamGroup> both(kParamGroups.begin(), kParamGroups.end());
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t entries = 0;
  for (const auto& r : records) {
    TrainingExample e;
    e.record_id = r.id;
    e.target = r.transcript + " .";
    e.config_tag = "SIFT_s";
    const auto analytic = rt.example_loss(ckpt, e, both);
    for (ParamGroup g : kParamGroups) {
      model::ProjectorParams& p = ckpt.branch(g)->params;
      const model::ProjectorParams& grad = analytic.grads.at(g);
      const std::pair<double*, const double*> blocks[] = {
          {p.w1.data(), grad.w1.data()}, {p.b1.data(), grad.b1.data()},
          {p.w2.data(), grad.w2.data()}, {p.b2.data(), grad.b2.data()}};
      const Eigen::Index sizes[] = {p.w1.size(), p.b1.size(), p.w2.size(), p.b2.size()};
      for (int b = 0; b < 4; ++b) {
        for (Eigen::Index i = 0; i < sizes[b]; ++i) {
          double& v = blocks[b].first[i];
          const double keep = v;
          v = keep + h;
          const double up = rt.example_loss(ckpt, e, {}).loss.value;
          v = keep - h;
          const double down = rt.example_loss(ckpt, e, {}).loss.value;
          v = keep;
          const double fd = (up - down) / (2 * h);
          const double a = blocks[b].second[i];
          worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
          ++entries;
        }
      }
    }
  }
  return {worst < 1e-4, "random LM d=4 vocab " + std::to_string(lm->vocab_size()) + ", " + std::to_string(entries) +
                            " projector entries, max relative error " + fmt(worst, 3)};
}

Outcome c4(Shared& s) {
  const cli::RunConfig& c = s.a();
  const cli::Pipeline& p = s.p();
  // Encoders that regenerate features from the frozen world, so its state can be hashed.
  auto world = std::make_shared<corpus::SyntheticWorld>(c.world->spec);
  auto enc = std::make_shared<corpus::EncoderSet>();
  enc->add(corpus::Branch::semantic, std::make_shared<corpus::SyntheticEncoder>(world));
  enc->add(corpus::Branch::paralinguistic, std::make_shared<corpus::SyntheticEncoder>(world));
  Runtime rt(p.lm, enc, p.train);

  const cli::Layout layout(c.output_dir);
  auto data = [&](const std::string& tag) {
    return std::make_shared<const std::vector<TrainingExample>>(load_dataset(layout.dataset(tag, false)));
  };
  const int d_enc = c.world->spec.d_enc;
  const model::ProjectorConfig pc{d_enc, c.model.group, c.model.d_hidden, p.lm->d_model(), c.model.bias};
  const Checkpoint init = training::init_checkpoint(pc, pc, c.seeds.init);
  const std::string lm0 = p.lm->param_hash(), world0 = world->state_hash();

  training::Stage s1;
  s1.name = "stage1";
  s1.mix.components = {{"SIFT_s", data("SIFT_s"), 1.0}};
  s1.trainable = {ParamGroup::proj_semantic};
  s1.steps = 200;
  s1.batch_size = 8;
  s1.seed = 41;
  training::Stage s2 = s1;
  s2.name = "stage2";
  s2.mix.components = {{"SIFT_sp", data("SIFT_sp"), 1.0}};
  s2.trainable = {ParamGroup::proj_paralinguistic};
  s2.seed = 42;
  training::RunLedger ledger;
  training::MixStream st1(s1.mix, 1), st2(s2.mix, 2);
  const Checkpoint after1 = training::run_stage(s1, init, st1, rt, ledger);
  const Checkpoint after2 = training::run_stage(s2, after1, st2, rt, ledger);

  const double d1 = verify_freeze(init, after1, {ParamGroup::proj_paralinguistic}).max_abs_diff.at(
      ParamGroup::proj_paralinguistic);
  const double d2 =
      verify_freeze(after1, after2, {ParamGroup::proj_semantic}).max_abs_diff.at(ParamGroup::proj_semantic);
  const bool lm_same = p.lm->param_hash() == lm0;
  const bool world_same = world->state_hash() == world0;
  const bool para_hash = after1.group_hash(ParamGroup::proj_paralinguistic) ==
                         init.group_hash(ParamGroup::proj_paralinguistic);
  const bool sem_hash =
      after2.group_hash(ParamGroup::proj_semantic) == after1.group_hash(ParamGroup::proj_semantic);
  const bool trained = after1.group_hash(ParamGroup::proj_semantic) != init.group_hash(ParamGroup::proj_semantic) &&
                       after2.group_hash(ParamGroup::proj_paralinguistic) !=
                           after1.group_hash(ParamGroup::proj_paralinguistic);
  return {d1 == 0.0 && d2 == 0.0 && lm_same && world_same && para_hash && sem_hash && trained,
          std::string("200-step stage 1: LM ") + (lm_same ? "unchanged" : "CHANGED") + ", encoder world " +
              (world_same ? "unchanged" : "CHANGED") + ", paralinguistic max|diff| " + fmt(d1) +
              (para_hash ? " (hash equal)" : " (hash differs)") + "; stage 2: semantic max|diff| " + fmt(d2) +
              (sem_hash ? " (hash equal)" : " (hash differs)")};
}

Outcome c5(Shared& s) {
  const cli::RunConfig& c = s.a();
  const cli::Pipeline& p = s.p();
  const auto& lm = *p.lm;
  const cli::Layout layout(c.output_dir);
  // Examples of several layouts: bare, with instruction suffix, with system prompt.
  std::vector<TrainingExample> pool = load_dataset(layout.dataset("SIFT_s", false));
  for (TrainingExample e : load_dataset(layout.dataset("SIFT_sp", false))) {
    if (pool.size() % 3 == 0) e.user_suffix = std::string(datagen::kDescribeInstruction);
    if (pool.size() % 3 == 1) e.system = std::string(datagen::kDialogSystemMessage);
    pool.push_back(std::move(e));
  }
  const model::ProjectorConfig pc{p.encoders->width(corpus::Branch::semantic), c.model.group, c.model.d_hidden,
                                  lm.d_model(), c.model.bias};
  const Checkpoint ckpt = training::init_checkpoint(pc, pc, 3);
  Rng rng(2024);
  int unmasked_changed = 0, masked_unchanged = 0, masked_total = 0, unmasked_total = 0;
  for (int n = 0; n < 100; ++n) {
    const TrainingExample& e = pool[rng.index(pool.size())];
    const Matrix audio = p.runtime->audio(ckpt, p.runtime->record(e.record_id));
    model::AssembledInput in = model::assemble(e, audio, lm);
    const double base = model::loss(in, lm).value;
    for (std::size_t i = 0; i < in.length(); ++i) {
      const int keep = in.labels[i];
      int other = static_cast<int>(rng.index(static_cast<std::size_t>(lm.vocab_size())));
      if (other == keep) other = (keep + 1) % lm.vocab_size();
      in.labels[i] = other;
      const double v = model::loss(in, lm).value;
      in.labels[i] = keep;
      if (in.loss_mask[i]) {
        ++masked_total;
        if (v == base) ++masked_unchanged;
      } else {
        ++unmasked_total;
        if (v != base) ++unmasked_changed;
      }
    }
    // All unmasked labels at once.
    for (std::size_t i = 0; i < in.length(); ++i)
      if (!in.loss_mask[i]) in.labels[i] = static_cast<int>(rng.index(static_cast<std::size_t>(lm.vocab_size())));
    if (model::loss(in, lm).value != base) ++unmasked_changed;
  }
  return {unmasked_changed == 0 && masked_unchanged == 0 && masked_total > 0,
          "100 examples: " + std::to_string(unmasked_total) + " unmasked perturbations, " +
              std::to_string(unmasked_changed) + " changed the loss; " + std::to_string(masked_total) +
              " masked perturbations, " + std::to_string(masked_unchanged) + " left it unchanged"};
}

Outcome c6(Shared& s) {
  const cli::RunConfig& c = s.a();
  const cli::Pipeline& p = s.p();
  const cli::Layout layout(c.output_dir);
  const auto held = load_dataset(layout.dataset("SIFT_s", true));
  const std::string dir = layout.train_dir("two_stage");
  const Checkpoint init = Checkpoint::load(dir + "/init.ckpt");
  const Checkpoint stage1 = Checkpoint::load(dir + "/stage1.ckpt");
  const int steps = c.plans.at("two_stage").options.stage1_steps;
  const auto r0 = eval::alignment_report(*p.runtime, init, held, false);
  const auto r1 = eval::alignment_report(*p.runtime, stage1, held, false);
  const double drop = (r0.mean_distance - r1.mean_distance) / r0.mean_distance;
  return {steps <= 5000 && r1.token_accuracy >= 0.90 && drop >= 0.5,
          std::to_string(steps) + " stage-1 steps, " + std::to_string(held.size()) +
              " held-out examples: masked-token accuracy " + fmt(r0.token_accuracy) + " -> " +
              fmt(r1.token_accuracy) + " (>= 0.90), distance " + fmt(r0.mean_distance) + " -> " +
              fmt(r1.mean_distance) + " (drop " + fmt(drop * 100, 3) + "%, >= 50%)"};
}

Outcome c7(Shared& s) {
  const cli::RunConfig& c = s.a();
  const cli::Pipeline& p = s.p();
  const cli::CommandOptions quiet;
  cli::cmd_datagen(c, "TSIT_s", quiet);
  std::map<std::string, eval::ProbeResult> probes;
  for (const char* plan : {"TSIT_s", "SIFT_sp"}) {
    std::cerr << "[acceptance] training " << plan << "\n";
    cli::cmd_train(c, plan, quiet);
    const Checkpoint ckpt = Checkpoint::load(cli::Layout(c.output_dir).train_dir(plan) + "/final.ckpt");
    probes[plan] = eval::probe_attribute(*p.runtime, ckpt, p.train, "emotion", c.eval.ridge);
  }
  const auto& t = probes.at("TSIT_s");
  const auto& f = probes.at("SIFT_sp");
  return {std::abs(t.heldout_accuracy - t.chance) <= 0.10 && f.heldout_accuracy >= 0.90,
          "emotion probe held-out accuracy: TSIT_s " + fmt(t.heldout_accuracy) + " (chance " + fmt(t.chance) +
              ", within 0.10), SIFT_sp " + fmt(f.heldout_accuracy) + " (>= 0.90)"};
}

Outcome c8() {
  const std::string transcript1 = "what shall we do if they suddenly walk in on us.";
  const std::string transcript2 =
      "我们那边有非常出名的旅游城市厦门，然后也有武夷山，但是我还没有去过武夷山。";
  const std::string body1 =
      "<audio><meta>gender: male, emotion: happy</meta><text>what shall we do if they suddenly walk in on us."
      "</text></audio>";
  const std::string body2 =
      "<audio><meta>age: young adult, gender: female</meta><text>我们那边有非常出名的旅游城市厦门，然后也有武夷山，"
      "但是我还没有去过武夷山。</text></audio>";
  corpus::SpeechRecord r1, r2;
  r1.id = "iemocap";
  r1.transcript = transcript1;
  r1.attributes = {{"gender", "male"}, {"emotion", "happy"}};
  r2.id = "csdialogue";
  r2.transcript = transcript2;
  r2.attributes = {{"age", "young adult"}, {"gender", "female"}};

  int ok = 0, total = 0;
  auto expect = [&](const std::string& got, const std::string& want) {
    ++total;
    ok += got == want;
  };
  Rng rng(1);
  datagen::GenerationConfig sit;
  sit.paradigm = Paradigm::SIT;
  sit.scope = Scope::sp;
  sit.instruction_pool = {std::string(datagen::kDescribeInstruction)};
  datagen::GenerationConfig sift;
  sift.scope = Scope::sp;
  // SIT_sp inputs: body + the generic instruction.
  expect(datagen::build_request(datagen::render_oracle(r1, Scope::sp), sit, rng).user,
         body1 + " Describe all the information you can hear.");
  sit.instruction_pool = {"描述你听到的所有信息。"};
  expect(datagen::build_request(datagen::render_oracle(r2, Scope::sp), sit, rng).user,
         body2 + " 描述你听到的所有信息。");
  // SIFT_sp inputs: the bodies alone.
  expect(datagen::build_request(datagen::render_oracle(r1, Scope::sp), sift, rng).user, body1);
  expect(datagen::build_request(datagen::render_oracle(r2, Scope::sp), sift, rng).user, body2);
  expect(std::string(datagen::kDescribeInstruction), "Describe all the information you can hear.");
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " strings byte-identical"};
}

Outcome c9(Shared& s) {
  const cli::RunConfig& a = s.a();
  const cli::RunConfig b = s.config(s.work + "/run_b");
  std::cerr << "[acceptance] pipeline run B\n";
  s.full_run(b);
  const cli::Layout la(a.output_dir), lb(b.output_dir);
  std::vector<std::string> files;
  for (const char* f : {"world/corpus.jsonl", "world/heldout.jsonl", "world/features.bin"}) files.push_back(f);
  for (const char* tag : {"SIFT_s", "SIFT_sp"})
    for (bool held : {false, true}) {
      files.push_back(fs::relative(la.dataset(tag, held), a.output_dir).string());
      files.push_back(fs::relative(la.quarantine(tag, held), a.output_dir).string());
    }
  files.push_back("train/two_stage/ledger.jsonl");
  for (const char* f : {"ledger.csv", "alignment.csv", "probes.csv", "generation.csv", "judge.csv"})
    files.push_back(std::string("eval/final/") + f);
  int differ = 0;
  for (const auto& f : files)
    if (read_file(a.output_dir + "/" + f) != read_file(b.output_dir + "/" + f)) {
      std::cerr << "[acceptance] differs: " << f << "\n";
      ++differ;
    }
  int hashes = 0, hash_differ = 0;
  for (const char* ck : {"init", "stage1", "stage2", "final"}) {
    ++hashes;
    const std::string rel = std::string("/train/two_stage/") + ck + ".ckpt";
    if (Checkpoint::load(a.output_dir + rel).hash() != Checkpoint::load(b.output_dir + rel).hash()) ++hash_differ;
  }
  return {differ == 0 && hash_differ == 0,
          std::to_string(files.size()) + " dataset/ledger/report files, " + std::to_string(differ) + " differ; " +
              std::to_string(hashes) + " checkpoint hashes, " + std::to_string(hash_differ) + " differ"};
}

Outcome c10(Shared& s) {
  const cli::Pipeline& p = s.p();
  const auto& lm = *p.lm;
  datagen::ToyLMClient client(p.lm);
  std::vector<datagen::GenerationConfig> configs;
  for (const char* t : {"SIFT_s", "SIFT_sp", "SIT_sp", "SIFT_ssp", "SIT_ssp", "SIT_s"}) {
    const ConfigTag tag = ConfigTag::parse(t);
    datagen::GenerationConfig g;
    g.paradigm = tag.paradigm;
    g.scope = tag.scope;
    if (tag.paradigm == Paradigm::SIT) g.instruction_pool = s.a().datagen.sit_instructions;
    if (tag.scope == Scope::ssp) g.system_prompt = s.a().datagen.system_prompt;
    g.decode = s.a().datagen.decode;
    configs.push_back(g);
  }
  Rng rng(77);
  int same = 0;
  for (int n = 0; n < 100; ++n) {
    const auto& r = p.train[rng.index(p.train.size())];
    const auto& g = configs[static_cast<std::size_t>(n) % configs.size()];
    const auto oracle = datagen::render_oracle(r, g.scope);
    const auto req = datagen::build_request(oracle, g, rng);
    const Matrix audio = lm.embed(lm.tokenizer().encode(oracle.rendered));
    const model::Generation out = model::generate(audio, req.instruction, req.system, lm, req.decode);
    same += out.text == datagen::generate_target(req, client).text;
  }
  return {same == 100, std::to_string(same) + "/100 records: generation from oracle embeddings equals the "
                                              "text-only target"};
}

}  // namespace

int main(int argc, char** argv) {
  Shared shared;
  shared.config_path = std::string(SIFT_SOURCE_DIR) + "/configs/default.json";
  shared.work = (fs::temp_directory_path() / ("sift-acceptance-" + std::to_string(::getpid()))).string();
  bool keep = false;
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) shared.config_path = argv[++i];
    else if (a == "--work" && i + 1 < argc) shared.work = argv[++i], keep = true;
    else only.insert(a);
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"C1", c1},
      {"C2", c2},
      {"C3", c3},
      {"C4", [&] { return c4(shared); }},
      {"C5", [&] { return c5(shared); }},
      {"C6", [&] { return c6(shared); }},
      {"C7", [&] { return c7(shared); }},
      {"C8", c8},
      {"C9", [&] { return c9(shared); }},
      {"C10", [&] { return c10(shared); }},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << name << (name.size() == 2 ? "  " : " ") << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  ["
              << fmt(secs, 3) << " s]" << std::endl;
  }
  if (!keep) {
    std::error_code ec;
    fs::remove_all(shared.work, ec);
  }
  return failed == 0 ? 0 : 1;
}
