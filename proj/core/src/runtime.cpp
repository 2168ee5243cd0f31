#include "sift/runtime.hpp"

namespace sift {

namespace {

corpus::Branch branch_of(ParamGroup g) {
  return g == ParamGroup::proj_semantic ? corpus::Branch::semantic : corpus::Branch::paralinguistic;
}

}  // namespace

Runtime::Runtime(std::shared_ptr<const model::FrozenLM> lm, std::shared_ptr<const corpus::EncoderSet> encoders,
                 std::vector<corpus::SpeechRecord> records)
    : lm_(std::move(lm)), encoders_(std::move(encoders)), records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i)
    if (!by_id_.emplace(records_[i].id, i).second) throw DuplicateId(records_[i].id);
}

const corpus::SpeechRecord& Runtime::record(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw FeatureUnavailable("no record '" + id + "' in the corpus");
  return records_[it->second];
}

Matrix Runtime::audio(const Checkpoint& ckpt, const corpus::SpeechRecord& record) const {
  if (!ckpt.semantic) throw InvalidSpec("checkpoint has no semantic projector");
  const auto& s = *ckpt.semantic;
  const Matrix sem = model::project(s.config, s.params, encoders_->encode(record, corpus::Branch::semantic).data);
  if (!ckpt.paralinguistic) return sem;
  const auto& p = *ckpt.paralinguistic;
  return model::fuse_branches(
      sem, model::project(p.config, p.params, encoders_->encode(record, corpus::Branch::paralinguistic).data));
}

Runtime::ExampleLoss Runtime::example_loss(const Checkpoint& ckpt, const TrainingExample& example,
                                           const std::set<ParamGroup>& grad_groups) const {
  const corpus::SpeechRecord& rec = record(example.record_id);
  std::map<ParamGroup, model::ProjectorActivations> saved;
  std::optional<Matrix> fused;
  for (ParamGroup g : kParamGroups) {
    const auto& b = ckpt.branch(g);
    if (!b) {
      if (g == ParamGroup::proj_semantic) throw InvalidSpec("checkpoint has no semantic projector");
      if (grad_groups.contains(g)) throw InvalidSpec(std::string(to_string(g)) + " is not in the checkpoint");
      continue;
    }
    model::ProjectorActivations* act = grad_groups.contains(g) ? &saved[g] : nullptr;
    const Matrix out = model::project(b->config, b->params, encoders_->encode(rec, branch_of(g)).data, act);
    fused = fused ? model::fuse_branches(*fused, out) : out;
  }

  ExampleLoss r;
  const model::AssembledInput in = model::assemble(example, *fused, *lm_);
  r.loss = model::loss(in, *lm_, !grad_groups.empty());
  if (grad_groups.empty()) return r;
  // Fusion is a sum, so both branches see the same output gradient.
  const Matrix d_audio = r.loss.d_embeddings.middleRows(in.segments.audio.begin, in.segments.audio.size());
  for (ParamGroup g : grad_groups) {
    const auto& b = *ckpt.branch(g);
    r.grads.emplace(g, model::project_backward(b.config, b.params, saved.at(g), d_audio));
  }
  r.loss.d_embeddings.resize(0, 0);
  return r;
}

}  // namespace sift
