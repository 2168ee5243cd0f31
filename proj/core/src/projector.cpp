#include "sift/projector.hpp"

#include <cmath>

namespace sift::model {

void ProjectorConfig::validate() const {
  if (d_enc < 1 || group < 1 || d_hidden < 1 || d_llm < 1)
    throw InvalidSpec("projector dimensions must all be >= 1");
}

std::int64_t count_params(const ProjectorConfig& c) {
  c.validate();
  const std::int64_t in = static_cast<std::int64_t>(c.group) * c.d_enc;
  std::int64_t n = in * c.d_hidden + static_cast<std::int64_t>(c.d_hidden) * c.d_llm;
  if (c.bias) n += c.d_hidden + c.d_llm;
  return n;
}

ProjectorParams ProjectorParams::zeros(const ProjectorConfig& c) {
  ProjectorParams p;
  p.w1 = Matrix::Zero(c.input_width(), c.d_hidden);
  p.w2 = Matrix::Zero(c.d_hidden, c.d_llm);
  if (c.bias) {
    p.b1 = Vector::Zero(c.d_hidden);
    p.b2 = Vector::Zero(c.d_llm);
  }
  return p;
}

bool ProjectorParams::matches(const ProjectorConfig& c) const {
  const Eigen::Index bh = c.bias ? c.d_hidden : 0;
  const Eigen::Index bl = c.bias ? c.d_llm : 0;
  return w1.rows() == c.input_width() && w1.cols() == c.d_hidden && w2.rows() == c.d_hidden &&
         w2.cols() == c.d_llm && b1.size() == bh && b2.size() == bl;
}

bool ProjectorParams::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

double ProjectorParams::squared_norm() const {
  return w1.squaredNorm() + b1.squaredNorm() + w2.squaredNorm() + b2.squaredNorm();
}

void ProjectorParams::axpy(double scale, const ProjectorParams& o) {
  w1 += scale * o.w1;
  b1 += scale * o.b1;
  w2 += scale * o.w2;
  b2 += scale * o.b2;
}

ProjectorParams init_projector(const ProjectorConfig& c, ProjectorInit init, std::uint64_t seed) {
  c.validate();
  ProjectorParams p = ProjectorParams::zeros(c);
  Rng rng(derive_seed(seed, {0x70726f6aULL}));
  const double a1 = 1.0 / std::sqrt(static_cast<double>(c.input_width()));
  for (Eigen::Index r = 0; r < p.w1.rows(); ++r)
    for (Eigen::Index k = 0; k < p.w1.cols(); ++k) p.w1(r, k) = rng.uniform(-a1, a1);
  if (init == ProjectorInit::uniform_fan_in) {
    const double a2 = 1.0 / std::sqrt(static_cast<double>(c.d_hidden));
    for (Eigen::Index r = 0; r < p.w2.rows(); ++r)
      for (Eigen::Index k = 0; k < p.w2.cols(); ++k) p.w2(r, k) = rng.uniform(-a2, a2);
  }
  return p;
}

Eigen::Index projected_length(Eigen::Index frames, int group) {
  return (frames + group - 1) / group;
}

Matrix project(const ProjectorConfig& c, const ProjectorParams& p, const Matrix& features,
               ProjectorActivations* saved) {
  if (features.cols() != c.d_enc)
    throw DimMismatch("features have width " + std::to_string(features.cols()) + ", projector expects " +
                      std::to_string(c.d_enc));
  if (!p.matches(c)) throw DimMismatch("projector params do not match config");
  const Eigen::Index T = features.rows();
  const Eigen::Index Tp = projected_length(T, c.group);
  // Row-major storage makes grouping a reshape: rows 4t..4t+3 laid end to end.
  Matrix grouped = Matrix::Zero(Tp, c.input_width());
  for (Eigen::Index t = 0; t < T; ++t)
    grouped.block(t / c.group, (t % c.group) * c.d_enc, 1, c.d_enc) = features.row(t);

  Matrix pre = grouped * p.w1;
  if (c.bias) pre.rowwise() += p.b1.transpose();
  Matrix out = pre.cwiseMax(0.0) * p.w2;
  if (c.bias) out.rowwise() += p.b2.transpose();
  if (saved) {
    saved->grouped = std::move(grouped);
    saved->pre = std::move(pre);
  }
  return out;
}

ProjectorParams project_backward(const ProjectorConfig& c, const ProjectorParams& p,
                                 const ProjectorActivations& saved, const Matrix& d_out) {
  ProjectorParams g;
  const Matrix h = saved.pre.cwiseMax(0.0);
  g.w2 = h.transpose() * d_out;
  const Matrix d_pre = (d_out * p.w2.transpose()).cwiseProduct((saved.pre.array() > 0.0).cast<double>().matrix());
  g.w1 = saved.grouped.transpose() * d_pre;
  if (c.bias) {
    g.b2 = d_out.colwise().sum().transpose();
    g.b1 = d_pre.colwise().sum().transpose();
  }
  return g;
}

Matrix fuse_branches(const Matrix& semantic, const std::optional<Matrix>& paralinguistic) {
  if (!paralinguistic) return semantic;
  if (paralinguistic->rows() != semantic.rows() || paralinguistic->cols() != semantic.cols())
    throw LengthMismatch("semantic " + std::to_string(semantic.rows()) + "x" + std::to_string(semantic.cols()) +
                         " vs paralinguistic " + std::to_string(paralinguistic->rows()) + "x" +
                         std::to_string(paralinguistic->cols()));
  return semantic + *paralinguistic;
}

}  // namespace sift::model
