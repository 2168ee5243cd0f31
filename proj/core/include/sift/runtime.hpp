#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sift/checkpoint.hpp"
#include "sift/corpus.hpp"
#include "sift/example.hpp"
#include "sift/lm.hpp"
#include "sift/model.hpp"

namespace sift {

// Encoders -> projectors -> fusion -> frozen LM for one fixed corpus. Every
// component but the checkpoint is immutable, so a Runtime can be shared by
// concurrent readers.
class Runtime {
 public:
  Runtime(std::shared_ptr<const model::FrozenLM> lm, std::shared_ptr<const corpus::EncoderSet> encoders,
          std::vector<corpus::SpeechRecord> records);

  const model::FrozenLM& lm() const { return *lm_; }
  const corpus::EncoderSet& encoders() const { return *encoders_; }
  const std::vector<corpus::SpeechRecord>& records() const { return records_; }
  // Throws FeatureUnavailable for unknown ids.
  const corpus::SpeechRecord& record(const std::string& id) const;

  // Fused projected audio [T' x d_llm] for every branch present in the
  // checkpoint. The semantic branch is required.
  Matrix audio(const Checkpoint& ckpt, const corpus::SpeechRecord& record) const;

  struct ExampleLoss {
    model::LossResult loss;
    std::map<ParamGroup, model::ProjectorParams> grads;  // only the requested groups
  };
  ExampleLoss example_loss(const Checkpoint& ckpt, const TrainingExample& example,
                           const std::set<ParamGroup>& grad_groups) const;

 private:
  std::shared_ptr<const model::FrozenLM> lm_;
  std::shared_ptr<const corpus::EncoderSet> encoders_;
  std::vector<corpus::SpeechRecord> records_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

}  // namespace sift
