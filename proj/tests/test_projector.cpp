#include <cmath>

#include "doctest.h"
#include "sift/projector.hpp"

using namespace sift;
using namespace sift::model;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("count_params matches the two-layer MLP formula") {
  // in*hidden + hidden + hidden*out + out, written out for the full-size config.
  CHECK(count_params({768, 4, 3584, 3584, true}) == 3072LL * 3584 + 3584 + 3584LL * 3584 + 3584);
  CHECK(count_params({768, 4, 3584, 3584, true}) == 23862272);
  CHECK(count_params({768, 4, 3584, 3584, false}) == 23862272 - 2 * 3584);
  CHECK(count_params({2, 3, 5, 7, true}) == 6 * 5 + 5 + 5 * 7 + 7);
  CHECK_THROWS_AS(count_params({0, 4, 8, 8, true}), InvalidSpec);
}

TEST_CASE("projected_length is ceil(T / group)") {
  for (Eigen::Index t = 1; t <= 64; ++t) {
    CHECK(projected_length(t, 4) == static_cast<Eigen::Index>(std::ceil(t / 4.0)));
  }
  // 25 Hz grouped by 4 gives 6.25 tokens per second.
  CHECK(projected_length(100, 4) / 4.0 == 6.25);
}

TEST_CASE("project groups frames and zero-pads the tail") {
  const ProjectorConfig c{2, 3, 4, 5, true};
  const ProjectorParams p = init_projector(c, ProjectorInit::uniform_fan_in, 1);
  Rng rng(3);
  const Matrix x = random_matrix(7, 2, rng);
  ProjectorActivations saved;
  const Matrix y = project(c, p, x, &saved);
  REQUIRE(y.rows() == 3);
  REQUIRE(y.cols() == 5);
  // Last group holds frame 6 followed by zeros.
  CHECK(saved.grouped(2, 0) == x(6, 0));
  CHECK(saved.grouped(2, 1) == x(6, 1));
  CHECK(saved.grouped.row(2).tail(4).isZero(0.0));
  // Row 1 is frames 3, 4, 5 concatenated.
  for (int k = 0; k < 3; ++k) CHECK(saved.grouped.block(1, 2 * k, 1, 2) == x.row(3 + k));

  // Independent evaluation of one output row.
  RowVector g(6);
  g << x.row(3), x.row(4), x.row(5);
  const RowVector h = (g * p.w1 + p.b1.transpose()).cwiseMax(0.0);
  const RowVector expected = h * p.w2 + p.b2.transpose();
  CHECK((y.row(1) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("project validates shapes") {
  const ProjectorConfig c{2, 4, 4, 5, true};
  const ProjectorParams p = init_projector(c, ProjectorInit::uniform_fan_in, 1);
  CHECK_THROWS_AS(project(c, p, Matrix::Zero(4, 3), nullptr), DimMismatch);
  const ProjectorConfig other{2, 4, 4, 6, true};
  CHECK_THROWS_AS(project(other, p, Matrix::Zero(4, 2), nullptr), DimMismatch);
}

TEST_CASE("init modes") {
  const ProjectorConfig c{3, 4, 6, 5, true};
  const auto u = init_projector(c, ProjectorInit::uniform_fan_in, 9);
  const auto z = init_projector(c, ProjectorInit::zero_output, 9);
  const double a1 = 1.0 / std::sqrt(12.0);
  const double a2 = 1.0 / std::sqrt(6.0);
  CHECK(u.w1.cwiseAbs().maxCoeff() <= a1);
  CHECK(u.w2.cwiseAbs().maxCoeff() <= a2);
  CHECK(u.w2.cwiseAbs().maxCoeff() > 0.0);
  CHECK(z.w2.isZero(0.0));
  CHECK(z.b2.isZero(0.0));
  CHECK(z.w1.cwiseAbs().maxCoeff() > 0.0);
  // zero_output projects everything to exactly zero.
  Rng rng(1);
  CHECK(project(c, z, random_matrix(8, 3, rng), nullptr).isZero(0.0));
  // Same seed, same parameters.
  const auto u2 = init_projector(c, ProjectorInit::uniform_fan_in, 9);
  CHECK(u.w1 == u2.w1);
  CHECK(u.w2 == u2.w2);
  CHECK(u.matches(c));
  CHECK(!u.matches({3, 4, 6, 6, true}));
}

TEST_CASE("project_backward matches central finite differences") {
  const ProjectorConfig c{3, 4, 5, 6, true};
  ProjectorParams p = init_projector(c, ProjectorInit::uniform_fan_in, 4);
  Rng rng(5);
  for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1[i] = 0.1 * rng.normal();
  const Matrix x = random_matrix(10, 3, rng);
  const Matrix weights = random_matrix(projected_length(10, 4), 6, rng);

  // Scalar objective: <project(x), weights>.
  auto objective = [&](const ProjectorParams& q) { return project(c, q, x, nullptr).cwiseProduct(weights).sum(); };
  ProjectorActivations saved;
  project(c, p, x, &saved);
  const ProjectorParams g = project_backward(c, p, saved, weights);

  const double h = 1e-6;
  double worst = 0.0;
  auto check_all = [&](auto member, auto grad_member) {
    auto& param = p.*member;
    const auto& grad = g.*grad_member;
    for (Eigen::Index i = 0; i < param.size(); ++i) {
      const double saved_value = param.data()[i];
      param.data()[i] = saved_value + h;
      const double up = objective(p);
      param.data()[i] = saved_value - h;
      const double down = objective(p);
      param.data()[i] = saved_value;
      worst = std::max(worst, relative_error(grad.data()[i], (up - down) / (2 * h)));
    }
  };
  check_all(&ProjectorParams::w1, &ProjectorParams::w1);
  check_all(&ProjectorParams::b1, &ProjectorParams::b1);
  check_all(&ProjectorParams::w2, &ProjectorParams::w2);
  check_all(&ProjectorParams::b2, &ProjectorParams::b2);
  CHECK(worst < 1e-6);
}

TEST_CASE("fuse_branches sums or passes through") {
  Matrix a = Matrix::Constant(2, 3, 1.0);
  Matrix b = Matrix::Constant(2, 3, 2.0);
  CHECK(fuse_branches(a, b) == Matrix::Constant(2, 3, 3.0));
  CHECK(fuse_branches(a, std::nullopt) == a);
  CHECK_THROWS_AS(fuse_branches(a, Matrix::Zero(3, 3)), LengthMismatch);
}

TEST_CASE("params arithmetic helpers") {
  const ProjectorConfig c{1, 2, 2, 2, true};
  ProjectorParams a = ProjectorParams::zeros(c);
  ProjectorParams b = ProjectorParams::zeros(c);
  b.w1.setConstant(1.0);
  b.b2.setConstant(2.0);
  a.axpy(0.5, b);
  CHECK(a.w1(0, 0) == 0.5);
  CHECK(a.b2[1] == 1.0);
  CHECK(a.squared_norm() == doctest::Approx(4 * 0.25 + 2 * 1.0));
  CHECK(a.all_finite());
  a.w2(0, 0) = std::nan("");
  CHECK(!a.all_finite());
}
