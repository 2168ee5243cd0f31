#pragma once

#include <cstdint>
#include <optional>

#include "sift/common.hpp"

namespace sift::model {

// Grouped-frame two-layer MLP geometry. The 25 Hz encoder stream is grouped
// `group` frames at a time, so the output runs at frame_rate / group.
struct ProjectorConfig {
  int d_enc = 768;
  int group = 4;
  int d_hidden = 3584;
  int d_llm = 3584;
  bool bias = true;

  void validate() const;
  int input_width() const { return group * d_enc; }
  friend bool operator==(const ProjectorConfig&, const ProjectorConfig&) = default;
};

// (group*d_enc)*d_hidden + d_hidden + d_hidden*d_llm + d_llm, minus the two
// bias terms when bias == false.
std::int64_t count_params(const ProjectorConfig& config);

// The only trainable state. When config.bias is false the bias vectors are
// empty.
struct ProjectorParams {
  Matrix w1;  // [group*d_enc x d_hidden]
  Vector b1;  // [d_hidden]
  Matrix w2;  // [d_hidden x d_llm]
  Vector b2;  // [d_llm]

  static ProjectorParams zeros(const ProjectorConfig& config);
  bool matches(const ProjectorConfig& config) const;
  bool all_finite() const;
  double squared_norm() const;
  // this += scale * other
  void axpy(double scale, const ProjectorParams& other);
};

enum class ProjectorInit {
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  uniform_fan_in,
  // As uniform_fan_in for the first layer, but W2 and b2 are zero so the
  // branch starts as an exact no-op.
  zero_output,
};

ProjectorParams init_projector(const ProjectorConfig& config, ProjectorInit init, std::uint64_t seed);

// Output length for T input frames: ceil(T / group).
Eigen::Index projected_length(Eigen::Index frames, int group);

struct ProjectorActivations {
  Matrix grouped;  // [T' x group*d_enc], zero padded
  Matrix pre;      // [T' x d_hidden]
};

// features: [T x d_enc] -> [ceil(T/group) x d_llm]. The final group is zero
// padded when T is not a multiple of group. Throws DimMismatch.
Matrix project(const ProjectorConfig& config, const ProjectorParams& params, const Matrix& features,
               ProjectorActivations* saved = nullptr);

// Gradient of a scalar loss w.r.t. params given d(loss)/d(output).
ProjectorParams project_backward(const ProjectorConfig& config, const ProjectorParams& params,
                                 const ProjectorActivations& saved, const Matrix& d_out);

// Single branch passes through; two branches are summed element-wise. Throws
// LengthMismatch when both are present with different shapes.
Matrix fuse_branches(const Matrix& semantic, const std::optional<Matrix>& paralinguistic);

}  // namespace sift::model
