#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sift/corpus.hpp"
#include "sift/datagen.hpp"
#include "sift/lm.hpp"
#include "sift/runtime.hpp"

namespace sift::testing {

inline corpus::SyntheticWorldSpec small_world_spec(std::uint64_t seed = 7) {
  corpus::SyntheticWorldSpec s;
  s.seed = seed;
  s.vocab = {"ba", "de", "fi", "go", "hu", "ka", "le", "mo", "ni", "po", "ru", "sa", "ti", "vo", "wu", "ze"};
  s.attribute_vocab = {{"gender", {"male", "female"}},
                       {"age", {"child", "young adult", "adult", "senior"}},
                       {"emotion", {"neutral", "happy", "sad", "angry"}}};
  s.noise_sigma = 0.05;
  return s;
}

// A synthetic world, a toy LM whose lexicon covers it, and a runtime over the
// given records.
struct Desk {
  corpus::SyntheticWorldSpec spec;
  std::shared_ptr<corpus::SyntheticWorld> world;
  std::shared_ptr<model::ToyLM> lm;
  std::shared_ptr<corpus::EncoderSet> encoders;
  std::vector<corpus::SpeechRecord> records;
  std::unique_ptr<Runtime> runtime;
};

inline Desk make_desk(std::int64_t n_records, const std::vector<std::string>& extra_texts = {},
                      corpus::SyntheticWorldSpec spec = small_world_spec()) {
  Desk d;
  d.spec = spec;
  d.world = std::make_shared<corpus::SyntheticWorld>(spec);
  d.records = corpus::make_synthetic_corpus(spec, n_records);
  std::vector<std::string> texts = extra_texts;
  texts.emplace_back(datagen::kDialogSystemMessage);
  texts.emplace_back(datagen::kDescribeInstruction);
  model::ToyLMConfig lc;
  lc.seed = 11;
  lc.lexicon = datagen::world_lexicon(spec, texts);
  d.lm = std::make_shared<model::ToyLM>(lc);
  d.encoders = std::make_shared<corpus::EncoderSet>();
  d.encoders->add(corpus::Branch::semantic, std::make_shared<corpus::SyntheticEncoder>(d.world));
  d.encoders->add(corpus::Branch::paralinguistic, std::make_shared<corpus::SyntheticEncoder>(d.world));
  d.runtime = std::make_unique<Runtime>(d.lm, d.encoders, d.records);
  return d;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("sift-test-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace sift::testing
