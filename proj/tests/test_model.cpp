#include <cmath>

#include "doctest.h"
#include "sift/datagen.hpp"
#include "sift/model.hpp"
#include "support.hpp"

using namespace sift;
using namespace sift::model;

namespace {

std::shared_ptr<ToyLM> tiny_random_lm(int d = 6) {
  ToyLMConfig c;
  c.seed = 3;
  c.kind = ToyLMKind::random;
  c.d_model = d;
  c.lexicon = {"a", "b", "c", "d", "e"};
  c.byte_fallback = false;
  c.layers = 2;
  c.heads = 2;
  c.d_ff = 5;
  return std::make_shared<ToyLM>(c);
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

TrainingExample example(std::string target, std::string suffix = "", std::optional<std::string> system = {}) {
  TrainingExample e;
  e.record_id = "r";
  e.system = std::move(system);
  e.user_suffix = std::move(suffix);
  e.target = std::move(target);
  e.config_tag = e.user_suffix.empty() ? "SIFT_s" : "SIT_s";
  return e;
}

// Mean masked cross-entropy computed from full logits, without the loss() code path.
double reference_loss(const AssembledInput& in, const FrozenLM& lm) {
  const Matrix logits = lm.forward(in.embeddings);
  double total = 0.0;
  int n = 0;
  for (std::size_t t = 0; t < in.length(); ++t) {
    if (!in.loss_mask[t]) continue;
    const auto row = static_cast<Eigen::Index>(t);
    double z = 0.0;
    for (Eigen::Index v = 0; v < logits.cols(); ++v) z += std::exp(logits(row, v));
    total += std::log(z) - logits(row, in.labels[t]);
    ++n;
  }
  return total / n;
}

}  // namespace

TEST_CASE("split_atoms separates tags, words and punctuation") {
  const auto atoms = split_atoms("<audio><meta>gender: male, age: young adult</meta><text>hi there.</text></audio>");
  const std::vector<std::string> expected = {"<audio>", "<meta>", "gender", ":",  "male",   ",",       "age",
                                             ":",       "young",  "adult",  "</meta>", "<text>", "hi", "there",
                                             ".",       "</text>", "</audio>"};
  CHECK(atoms == expected);
  CHECK(split_atoms("a<b") == std::vector<std::string>{"a", "<", "b"});
  CHECK(split_atoms("  ").empty());
}

TEST_CASE("tokenizer round trip and byte fallback") {
  const Tokenizer tok(lexicon_from_texts({"ba de fi", "<text></text>"}), true);
  CHECK(tok.id("<|im_end|>") == tok.specials().im_end);
  CHECK(tok.is_special(tok.specials().im_start));
  const auto ids = tok.encode("ba  fi de");
  CHECK(ids.size() == 3);
  CHECK(tok.decode(ids) == "ba fi de");
  const auto unk = tok.encode("zz");
  CHECK(unk.size() == 2);
  CHECK(tok.is_byte(unk[0]));
  CHECK(tok.decode(unk) == "zz");
  CHECK_THROWS_AS(tok.decode(std::vector<int>{tok.size()}), TemplateError);

  const Tokenizer strict(lexicon_from_texts({"ba"}), false);
  CHECK_THROWS_AS(strict.encode("zz"), TemplateError);
}

TEST_CASE("lexicon_from_texts is sorted and distinct") {
  const auto lex = lexicon_from_texts({"b a", "a c"});
  CHECK(lex == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("chat_prompt layout") {
  const Tokenizer tok(lexicon_from_texts({"sys words", "pre", "post it"}), false);
  const auto& sp = tok.specials();
  const PromptLayout l = chat_prompt(tok, std::string("sys words"), "pre", true, "post it");
  const std::vector<int> expected = {sp.im_start, sp.role_system,    tok.id("sys"),  tok.id("words"), sp.im_end,
                                     sp.im_start, sp.role_user,      tok.id("pre"),  tok.id("post"),  tok.id("it"),
                                     sp.im_end,   sp.im_start,       sp.role_assistant};
  CHECK(l.ids == expected);
  CHECK(l.audio_at == 8);
  REQUIRE(l.segments.system.has_value());
  CHECK(l.segments.system->begin == 2);
  CHECK(l.segments.system->end == 4);
  CHECK(l.segments.prefix.begin == 7);
  CHECK(l.segments.suffix.begin == 8);
  CHECK(l.segments.suffix.end == 10);

  const PromptLayout bare = chat_prompt(tok, std::nullopt, "", false, "");
  CHECK(bare.ids == std::vector<int>{sp.im_start, sp.role_user, sp.im_end, sp.im_start, sp.role_assistant});
  CHECK(bare.audio_at == -1);
}

TEST_CASE("assemble places audio, target and terminator") {
  auto lm = tiny_random_lm();
  const auto& tok = lm->tokenizer();
  Rng rng(1);
  const Matrix audio = random_matrix(3, lm->d_model(), rng);
  const AssembledInput in = assemble(example("a b", "c"), audio, *lm);
  // im_start user AUDIO(3) c im_end im_start assistant a b im_end
  REQUIRE(in.length() == 12);
  CHECK(in.segments.audio.begin == 2);
  CHECK(in.segments.audio.end == 5);
  CHECK(in.token_ids[5] == tok.id("c"));
  CHECK(in.segments.target.begin == 9);
  CHECK(in.segments.target.end == 12);
  CHECK(in.token_ids.back() == tok.specials().im_end);
  for (int i = 2; i < 5; ++i) {
    CHECK(in.token_ids[static_cast<std::size_t>(i)] == -1);
    CHECK(in.embeddings.row(i) == audio.row(i - 2));
  }
  // Positions 8, 9, 10 predict a, b, im_end.
  std::vector<char> mask(12, 0);
  mask[8] = mask[9] = mask[10] = 1;
  CHECK(in.loss_mask == mask);
  CHECK(in.labels[8] == tok.id("a"));
  CHECK(in.labels[9] == tok.id("b"));
  CHECK(in.labels[10] == tok.specials().im_end);
  CHECK(in.masked_count() == 3);
  CHECK(in.embeddings.row(6) == lm->embed(std::vector<int>{tok.specials().im_end}).row(0));

  CHECK_THROWS_AS(assemble(example(""), audio, *lm), TemplateError);
  CHECK_THROWS_AS(assemble(example("a"), Matrix(0, lm->d_model()), *lm), TemplateError);
  auto no_slot = example("a");
  no_slot.audio_slot = false;
  CHECK_THROWS_AS(assemble(no_slot, audio, *lm), TemplateError);
  const Matrix narrow = Matrix::Zero(2, 3);
  CHECK_THROWS_AS(prompt_embeddings(*lm, chat_prompt(tok, std::nullopt, "", true, ""), &narrow), DimMismatch);
}

TEST_CASE("loss equals the reference masked cross-entropy") {
  auto lm = tiny_random_lm();
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix audio = random_matrix(2 + trial, lm->d_model(), rng);
    const AssembledInput in = assemble(example("a b c d", trial % 2 ? "e" : "", std::string("a")), audio, *lm);
    const LossResult r = loss(in, *lm, false);
    CHECK(r.tokens == 5);
    CHECK(r.value == doctest::Approx(reference_loss(in, *lm)).epsilon(1e-12));
  }
}

TEST_CASE("loss gradient matches finite differences on the embeddings") {
  auto lm = tiny_random_lm();
  Rng rng(4);
  const Matrix audio = random_matrix(3, lm->d_model(), rng);
  AssembledInput in = assemble(example("b a c", "d"), audio, *lm);
  const LossResult r = loss(in, *lm, true);
  REQUIRE(r.d_embeddings.rows() == static_cast<Eigen::Index>(in.length()));
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < in.embeddings.size(); ++i) {
    const double v = in.embeddings.data()[i];
    in.embeddings.data()[i] = v + h;
    const double up = loss(in, *lm).value;
    in.embeddings.data()[i] = v - h;
    const double down = loss(in, *lm).value;
    in.embeddings.data()[i] = v;
    const double fd = (up - down) / (2 * h);
    const double a = r.d_embeddings.data()[i];
    worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("induction LM gradient matches finite differences") {
  auto desk = testing::make_desk(3);
  const auto& lm = *desk.lm;
  Rng rng(8);
  const Matrix audio = random_matrix(2, lm.d_model(), rng, 0.3);
  TrainingExample e = example("ba de");
  AssembledInput in = assemble(e, audio, lm);
  const LossResult r = loss(in, lm, true);
  // Most entries here are ~1e-8 against a loss of ~10, so a smaller step is
  // dominated by rounding in the loss difference.
  const double h = 1e-4;
  double worst = 0.0;
  for (Eigen::Index row = in.segments.audio.begin; row < in.segments.audio.end; ++row) {
    for (Eigen::Index c = 0; c < lm.d_model(); ++c) {
      const double v = in.embeddings(row, c);
      in.embeddings(row, c) = v + h;
      const double up = loss(in, lm).value;
      in.embeddings(row, c) = v - h;
      const double down = loss(in, lm).value;
      in.embeddings(row, c) = v;
      const double fd = (up - down) / (2 * h);
      const double a = r.d_embeddings(row, c);
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("labels outside the mask do not affect the loss") {
  auto lm = tiny_random_lm();
  Rng rng(5);
  const Matrix audio = random_matrix(2, lm->d_model(), rng);
  AssembledInput in = assemble(example("a b c"), audio, *lm);
  const double base = loss(in, *lm).value;
  for (std::size_t t = 0; t < in.length(); ++t) {
    AssembledInput p = in;
    p.labels[t] = (p.labels[t] + 1) % lm->vocab_size();
    const double v = loss(p, *lm).value;
    if (in.loss_mask[t]) CHECK(v != base);
    else CHECK(v == base);
  }
  AssembledInput none = in;
  std::fill(none.loss_mask.begin(), none.loss_mask.end(), 0);
  CHECK_THROWS_AS(loss(none, *lm), NoTargetTokens);
}

TEST_CASE("decode budget and determinism") {
  auto desk = testing::make_desk(5);
  const auto& lm = *desk.lm;
  const auto layout = chat_prompt(lm.tokenizer(), std::nullopt, "ba de fi", false, "");
  const Matrix prompt = lm.embed(layout.ids);
  const Generation g = decode(lm, prompt, {0.0, 16, std::nullopt});
  CHECK(g.text == "ba de fi");
  CHECK(g.finish_reason == "stop");
  CHECK(decode(lm, prompt, {0.0, 16, std::nullopt}).ids == g.ids);

  const Generation cut = decode(lm, prompt, {0.0, 2, std::nullopt});
  CHECK(cut.ids.size() == 2);
  CHECK(cut.finish_reason == "length");

  const Generation s1 = decode(lm, prompt, {1.5, 12, 42});
  const Generation s2 = decode(lm, prompt, {1.5, 12, 42});
  CHECK(s1.ids == s2.ids);
  for (int id : s1.ids) CHECK(lm.generable(id));

  CHECK_THROWS_AS(decode(lm, prompt, {0.0, 0, std::nullopt}), DecodeBudgetExceeded);
  CHECK_THROWS_AS(decode(lm, prompt, {0.0, lm.max_positions(), std::nullopt}), DecodeBudgetExceeded);
}

TEST_CASE("generate from oracle embeddings matches the text-only request") {
  auto desk = testing::make_desk(20);
  datagen::ToyLMClient client(desk.lm);
  datagen::GenerationConfig sit;
  sit.paradigm = Paradigm::SIT;
  sit.scope = Scope::sp;
  sit.instruction_pool = {std::string(datagen::kDescribeInstruction)};
  Rng rng(1);
  for (const auto& r : desk.records) {
    const auto oracle = datagen::render_oracle(r, Scope::sp);
    const auto req = datagen::build_request(oracle, sit, rng);
    const Matrix audio = desk.lm->embed(desk.lm->tokenizer().encode(oracle.rendered));
    const Generation g = generate(audio, req.instruction, req.system, *desk.lm, req.decode);
    CHECK(g.text == client.complete(req).text);
  }
}

TEST_CASE("toy LM basics") {
  auto desk = testing::make_desk(1);
  const auto& lm = *desk.lm;
  CHECK(lm.d_model() == 64);
  CHECK(!lm.generable(lm.tokenizer().specials().pad));
  CHECK(lm.generable(lm.tokenizer().specials().im_end));
  CHECK(lm.param_hash() == testing::make_desk(1).lm->param_hash());
  CHECK(lm.param_hash().size() == 64);

  // The frozen LM copies a user transcript when asked nothing else.
  const auto layout = chat_prompt(lm.tokenizer(), std::nullopt, desk.records[0].transcript, false, "");
  CHECK(decode(lm, lm.embed(layout.ids), {}).text == desk.records[0].transcript);
}
