#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "sift/eval.hpp"
#include "support.hpp"

using namespace sift;
using namespace sift::eval;

namespace {

class FixedJudge final : public datagen::LLMClient {
 public:
  explicit FixedJudge(std::string reply) : reply_(std::move(reply)) {}
  datagen::TargetResponse complete(const datagen::ChatRequest& r) override {
    if (r.user.find("explode") != std::string::npos) throw TransportError("down");
    return {reply_, "stop", {}};
  }

 private:
  std::string reply_;
};

}  // namespace

TEST_CASE("alignment_distance against a scalar-loop oracle") {
  Matrix a(2, 3), b(3, 3);
  a << 1, 2, 3, -1, 0.5, 2;
  b << 0.3, -2, 1, 4, 4, 4, -1, 0, 0.25;
  double pa[3] = {0, 0, 0}, pb[3] = {0, 0, 0};
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 2; ++i) pa[j] += a(i, j) / 2;
    for (int i = 0; i < 3; ++i) pb[j] += b(i, j) / 3;
  }
  double dot = 0, na = 0, nb = 0;
  for (int j = 0; j < 3; ++j) {
    dot += pa[j] * pb[j];
    na += pa[j] * pa[j];
    nb += pb[j] * pb[j];
  }
  CHECK(std::abs(alignment_distance(a, b) - (1.0 - dot / std::sqrt(na * nb))) < 1e-9);
  CHECK(alignment_distance(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(alignment_distance(a, -a) == doctest::Approx(2.0));
  CHECK(alignment_distance(a, 3.0 * a) < 1e-12);
  CHECK_THROWS_AS(alignment_distance(Matrix::Zero(2, 3), b), ZeroVector);
  CHECK_THROWS_AS(alignment_distance(a, Matrix::Zero(0, 3)), InvalidSpec);
  CHECK_THROWS_AS(alignment_distance(a, Matrix::Ones(2, 4)), DimMismatch);

  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    Matrix x(3, 4), y(2, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
    const double d = alignment_distance(x, y);
    CHECK(d >= 0.0);
    CHECK(d <= 2.0);
  }
}

TEST_CASE("probe on one-hot features is perfect; constant labels are rejected") {
  const std::vector<std::string> classes = {"a", "b", "c"};
  Matrix x = Matrix::Zero(300, 3);
  std::vector<std::string> labels, ids;
  for (int i = 0; i < 300; ++i) {
    x(i, i % 3) = 1.0;
    labels.push_back(classes[static_cast<std::size_t>(i % 3)]);
    ids.push_back("id" + std::to_string(i));
  }
  const ProbeResult r = fit_probe(x, labels, ids, "emotion");
  CHECK(r.heldout_accuracy == 1.0);
  CHECK(r.train_accuracy == 1.0);
  CHECK(r.chance == doctest::Approx(1.0 / 3));
  CHECK(r.n_train + r.n_heldout == 300);
  // About a fifth held out, decided by id hash.
  CHECK(r.n_heldout > 30);
  CHECK(r.n_heldout < 90);
  const ProbeResult again = fit_probe(x, labels, ids, "emotion");
  CHECK(again.heldout_accuracy == r.heldout_accuracy);

  std::vector<std::string> same(300, "a");
  CHECK_THROWS_AS(fit_probe(x, same, ids, "emotion"), SingleClass);
}

TEST_CASE("probe on noise is near chance") {
  Rng rng(4);
  Matrix x(2000, 8);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<std::string> labels, ids;
  for (int i = 0; i < 2000; ++i) {
    labels.push_back(std::to_string(rng.index(4)));
    ids.push_back("n" + std::to_string(i));
  }
  const ProbeResult r = fit_probe(x, labels, ids, "emotion");
  CHECK(std::abs(r.heldout_accuracy - 0.25) < 0.08);
}

TEST_CASE("projector-level probes on the synthetic world") {
  auto desk = testing::make_desk(300);
  const model::ProjectorConfig pc{32, 4, 32, 64, true};
  // Paralinguistic branch at zero-output init: fused = semantic only, so
  // emotion is not linearly present beyond chance.
  const Checkpoint init = training::init_checkpoint(pc, pc, 1);
  const ProbeResult blind = probe_attribute(*desk.runtime, init, desk.records, "emotion");
  CHECK(blind.heldout_accuracy < 0.45);
  // A random (nonzero) paralinguistic projector exposes the attribute offsets.
  Checkpoint open = init;
  open.paralinguistic->params =
      model::init_projector(pc, model::ProjectorInit::uniform_fan_in, 2);
  const ProbeResult seen = probe_attribute(*desk.runtime, open, desk.records, "emotion");
  CHECK(seen.heldout_accuracy > 0.9);

  auto recs = desk.records;
  recs[0].attributes.erase("emotion");
  CHECK_THROWS_AS(probe_attribute(*desk.runtime, init, recs, "emotion"), MissingAttributes);
}

TEST_CASE("alignment report aggregates its items") {
  auto desk = testing::make_desk(12);
  datagen::ToyLMClient client(desk.lm);
  datagen::GenerationConfig c;
  const auto data = datagen::run_datagen(desk.records, c, &client, {}).examples;
  const model::ProjectorConfig pc{32, 4, 16, 64, true};
  const Checkpoint ckpt = training::init_checkpoint(pc, pc, 3);
  const AlignmentReport r = alignment_report(*desk.runtime, ckpt, data, true, {0.0, 12, std::nullopt});
  REQUIRE(r.items.size() == data.size());
  double d = 0, ce = 0;
  std::size_t tok = 0, hit = 0;
  for (const auto& it : r.items) {
    d += it.distance;
    ce += it.target_ce;
    tok += it.target_tokens;
    hit += it.correct_tokens;
    CHECK(it.distance >= 0.0);
    CHECK(it.distance <= 2.0);
  }
  CHECK(r.mean_distance == doctest::Approx(d / 12));
  CHECK(r.mean_ce == doctest::Approx(ce / 12));
  CHECK(r.token_accuracy == doctest::Approx(static_cast<double>(hit) / tok));
  CHECK(r.match_rate >= 0.0);
  CHECK(r.match_rate <= 1.0);
  const AlignmentReport again = alignment_report(*desk.runtime, ckpt, data, true, {0.0, 12, std::nullopt});
  CHECK(again.mean_distance == r.mean_distance);
  CHECK(alignment_report(*desk.runtime, ckpt, {}, false).items.empty());
}

TEST_CASE("generation metrics") {
  auto desk = testing::make_desk(6, {"repeat the transcript twice"});
  const model::ProjectorConfig pc{32, 4, 16, 64, true};
  const Checkpoint ckpt = training::init_checkpoint(pc, pc, 3);
  const auto items = repeat_twice_items(desk.records, "repeat the transcript twice");
  REQUIRE(items.size() == 6);
  CHECK(*items[0].reference == desk.records[0].transcript + " " + desk.records[0].transcript);
  const GenerationReport r = eval_generation(*desk.runtime, ckpt, items, {0.0, 20, std::nullopt});
  CHECK(r.with_reference == 6);
  for (const auto& g : r.results) {
    REQUIRE(g.token_accuracy.has_value());
    CHECK(*g.token_accuracy >= 0.0);
    CHECK(*g.token_accuracy <= 1.0);
    CHECK(*g.exact == (g.text == *g.item.reference));
  }
  CHECK(eval_generation(*desk.runtime, ckpt, {}, {}).results.empty());
}

TEST_CASE("judge score parsing and aggregation") {
  CHECK(parse_judge_score("5") == 5);
  CHECK(parse_judge_score("Score: 3/5") == 3);
  CHECK(parse_judge_score("I'd give it a 4.") == 4);
  CHECK(!parse_judge_score("excellent answer"));
  CHECK(!parse_judge_score("10"));
  CHECK(!parse_judge_score("2.5"));

  std::vector<GenerationResult> gens(4);
  for (int i = 0; i < 4; ++i) gens[static_cast<std::size_t>(i)].item.record_id = "g" + std::to_string(i);
  gens[3].text = "explode";
  FixedJudge four("4");
  datagen::DatagenOptions opt;
  opt.retry.base_delay = std::chrono::milliseconds(1);
  const JudgeReport r = judge_responses(gens, four, "rate 1-5", opt);
  CHECK(r.scored == 3);
  CHECK(r.mean_score == 4.0);
  CHECK(r.items[3].flagged);

  FixedJudge prose("very nice");
  const JudgeReport p = judge_responses(gens, prose, "rate 1-5", opt);
  CHECK(p.scored == 0);
  for (const auto& it : p.items) CHECK(it.flagged);
}

TEST_CASE("emit_report writes headers, points and stable bytes") {
  testing::TempDir dir("report");
  ReportBundle empty;
  const auto files = emit_report(empty, dir.file("a"));
  CHECK(files.size() == 8);
  CHECK(read_file(dir.file("a/probes.csv")) == "attribute,train_accuracy,heldout_accuracy,chance,n_train,n_heldout\n");
  CHECK(read_file(dir.file("a/judge.csv")) == "record_id,score,flagged\nskipped,,\n");
  CHECK(count_svg_points(read_file(dir.file("a/loss_curve.svg"))) == 0);

  training::RunLedger ledger;
  for (int i = 0; i < 37; ++i) {
    training::StepRecord s;
    s.step = i;
    s.stage = "stage1";
    s.loss = 1.0 / (i + 1);
    s.grad_norms[ParamGroup::proj_semantic] = 0.5;
    ledger.append(s);
  }
  ReportBundle b;
  b.ledger = &ledger;
  b.probes.push_back({"emotion", 1.0, 0.5, 0.25, 80, 20});
  GenerationReport gen;
  GenerationResult g;
  g.item.record_id = "r";
  g.text = "a, \"quoted\"";
  g.finish_reason = "stop";
  gen.results.push_back(g);
  b.generation = &gen;
  emit_report(b, dir.file("b"));
  emit_report(b, dir.file("c"));
  CHECK(count_svg_points(read_file(dir.file("b/loss_curve.svg"))) == 37);
  const std::string csv = read_file(dir.file("b/ledger.csv"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 38);
  CHECK(read_file(dir.file("b/generation.csv")).find("\"a, \"\"quoted\"\"\"") != std::string::npos);
  for (const char* f : {"ledger.csv", "alignment.csv", "probes.csv", "generation.csv", "judge.csv", "loss_curve.svg",
                        "distance_hist.svg", "probe_accuracy.svg"})
    CHECK(read_file(dir.file(std::string("b/") + f)) == read_file(dir.file(std::string("c/") + f)));

  write_file(dir.file("blocker"), "x");
  CHECK_THROWS_AS(emit_report(b, dir.file("blocker/sub")), IoError);
}
