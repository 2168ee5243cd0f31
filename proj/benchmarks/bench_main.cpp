#include <benchmark/benchmark.h>

#include <memory>

#include "sift/corpus.hpp"
#include "sift/datagen.hpp"
#include "sift/lm.hpp"
#include "sift/model.hpp"
#include "sift/projector.hpp"
#include "sift/runtime.hpp"
#include "sift/training.hpp"

using namespace sift;

namespace {

// 10 s of 25 Hz frames.
constexpr int kFrames = 250;

model::ProjectorConfig projector_config(int d_enc, int d_hidden, int d_llm) {
  return {d_enc, 4, d_hidden, d_llm, true};
}

Matrix random_features(int frames, int width, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(frames, width);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Arg pairs: (d_enc, d_hidden = d_llm).
void ProjectorSizes(benchmark::internal::Benchmark* b) {
  b->Args({32, 128})->Args({256, 512})->Args({768, 1024});
}

void BM_Project(benchmark::State& state) {
  const auto c = projector_config(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                                  static_cast<int>(state.range(1)));
  const auto p = model::init_projector(c, model::ProjectorInit::uniform_fan_in, 1);
  const Matrix x = random_features(kFrames, c.d_enc, 2);
  for (auto _ : state) benchmark::DoNotOptimize(model::project(c, p, x));
  state.SetItemsProcessed(state.iterations() * kFrames);
}
BENCHMARK(BM_Project)->Apply(ProjectorSizes)->Unit(benchmark::kMicrosecond);

void BM_ProjectBackward(benchmark::State& state) {
  const auto c = projector_config(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                                  static_cast<int>(state.range(1)));
  const auto p = model::init_projector(c, model::ProjectorInit::uniform_fan_in, 1);
  const Matrix x = random_features(kFrames, c.d_enc, 2);
  model::ProjectorActivations saved;
  const Matrix y = model::project(c, p, x, &saved);
  const Matrix d_out = random_features(static_cast<int>(y.rows()), static_cast<int>(y.cols()), 3);
  for (auto _ : state) benchmark::DoNotOptimize(model::project_backward(c, p, saved, d_out));
  state.SetItemsProcessed(state.iterations() * kFrames);
}
BENCHMARK(BM_ProjectBackward)->Apply(ProjectorSizes)->Unit(benchmark::kMicrosecond);

// The default synthetic world with the induction LM over its lexicon.
struct ToyWorld {
  std::shared_ptr<const model::ToyLM> lm;
  std::unique_ptr<Runtime> runtime;
  Checkpoint ckpt;
  std::vector<TrainingExample> examples;

  ToyWorld() {
    corpus::SyntheticWorldSpec spec;
    spec.seed = 7;
    spec.vocab = {"ba", "de", "fi", "go", "hu", "ka", "le", "mo", "ni", "po", "ru", "sa", "ti", "vo", "wu", "ze"};
    spec.attribute_vocab = {{"gender", {"male", "female"}},
                            {"age", {"child", "young adult", "adult", "senior"}},
                            {"emotion", {"neutral", "happy", "sad", "angry"}}};
    auto world = std::make_shared<corpus::SyntheticWorld>(spec);
    auto records = corpus::make_synthetic_corpus(spec, 64);
    model::ToyLMConfig lc;
    lc.seed = 11;
    lc.lexicon = datagen::world_lexicon(spec, {std::string(datagen::kDescribeInstruction)});
    lm = std::make_shared<model::ToyLM>(lc);
    auto encoders = std::make_shared<corpus::EncoderSet>();
    encoders->add(corpus::Branch::semantic, std::make_shared<corpus::SyntheticEncoder>(world));
    encoders->add(corpus::Branch::paralinguistic, std::make_shared<corpus::SyntheticEncoder>(world));
    for (const auto& r : records) {
      TrainingExample e;
      e.record_id = r.id;
      e.target = r.transcript;
      e.config_tag = "SIFT_s";
      examples.push_back(std::move(e));
    }
    runtime = std::make_unique<Runtime>(lm, encoders, std::move(records));
    const auto pc = projector_config(spec.d_enc, 128, lm->d_model());
    ckpt = training::init_checkpoint(pc, pc, 5);
  }
};

ToyWorld& toy() {
  static ToyWorld w;
  return w;
}

void BM_ExampleLossAndGradient(benchmark::State& state) {
  auto& w = toy();
  const std::set<ParamGroup> groups = {ParamGroup::proj_semantic, ParamGroup::proj_paralinguistic};
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(w.runtime->example_loss(w.ckpt, w.examples[i % w.examples.size()], groups));
    ++i;
  }
}
BENCHMARK(BM_ExampleLossAndGradient)->Unit(benchmark::kMicrosecond);

void BM_GreedyDecode(benchmark::State& state) {
  auto& w = toy();
  const Matrix audio = w.runtime->audio(w.ckpt, w.runtime->records().front());
  model::DecodeParams params;
  params.max_new_tokens = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(model::generate(audio, std::nullopt, std::nullopt, *w.lm, params));
}
BENCHMARK(BM_GreedyDecode)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
