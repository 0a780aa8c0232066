#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace rcml;

namespace {

SimConfig base_config() {
  SimConfig c;
  c.n_individuals = 30;
  c.n_obs_min = 5;
  c.n_obs_max = 15;
  c.p = 3;
  c.q = 2;
  c.alpha = Vector(3);
  c.alpha << 1.0, 0.5, -2.0;
  c.d = Matrix(2, 2);
  c.d << 0.6, 0.2, 0.2, 0.3;
  c.sigma2 = Vector::Constant(1, 0.8);
  c.seed = 99;
  return c;
}

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected rcml::Error";
  return ErrorCode::parse_error;
}

}  // namespace

TEST(Simulate, SameSeedSameData) {
  const auto a = generate(base_config());
  const auto b = generate(base_config());
  ASSERT_EQ(a.data.size(), b.data.size());
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    EXPECT_EQ(a.data.individuals[k].id, b.data.individuals[k].id);
    EXPECT_EQ(a.data.individuals[k].x, b.data.individuals[k].x);
    EXPECT_EQ(a.data.individuals[k].y, b.data.individuals[k].y);
  }
  auto other = base_config();
  other.seed = 100;
  const Vector y0 = a.data.individuals[0].y;
  const Vector y1 = generate(other).data.individuals[0].y;
  EXPECT_FALSE(y0.size() == y1.size() && y0 == y1);
}

TEST(Simulate, ShapesAndDesign) {
  const auto sim = generate(base_config());
  EXPECT_EQ(sim.data.size(), 30u);
  for (const auto& ind : sim.data.individuals) {
    EXPECT_GE(ind.n_obs(), 5);
    EXPECT_LE(ind.n_obs(), 15);
    EXPECT_TRUE((ind.x.col(0).array() == 1.0).all());
    EXPECT_EQ(ind.z, ind.x.leftCols(2));
  }
  EXPECT_TRUE(validate_dataset(sim.data).valid);
  EXPECT_EQ(sim.truth.sigma2.size(), 30);
  EXPECT_EQ(sim.beta.size(), 30u);
}

TEST(Simulate, ZEqualsXAndUserDesigns) {
  auto c = base_config();
  c.design = Design::z_equals_x;
  c.q = 3;
  c.d = Matrix::Identity(3, 3);
  const auto sim = generate(c);
  for (const auto& ind : sim.data.individuals) EXPECT_EQ(ind.z, ind.x);

  auto u = base_config();
  u.design = Design::user_supplied;
  Matrix x(4, 3);
  x << 1, 0, 0, 1, 1, 0, 1, 0, 1, 1, 1, 1;
  u.user_x = {x};
  u.user_z = {x.leftCols(2)};
  const auto us = generate(u);
  for (const auto& ind : us.data.individuals) EXPECT_EQ(ind.x, x);
}

TEST(Simulate, WithinVarianceConcentrates) {
  // sigma_hat^2 (n - p) / sigma^2 ~ chi^2_{n-p}: sd of sigma_hat^2 is sigma^2 sqrt(2 / (n - p)).
  auto c = base_config();
  c.n_individuals = 5;
  c.n_obs_min = c.n_obs_max = 400;
  const auto sim = generate(c);
  const double bound = 4.0 * 0.8 * std::sqrt(2.0 / (400.0 - 3.0));
  for (const auto& ind : sim.data.individuals) {
    EXPECT_NEAR(*compute_stats(ind).sigma2_hat, 0.8, bound);
  }
}

TEST(Simulate, EmpiricalCovarianceOfResponses) {
  // With a fixed design, Cov(y_k) = sigma^2 I + Z D Z^t; check every entry
  // within 3 standard errors over 5000 replicates.
  SimConfig c;
  c.n_individuals = 1;
  c.p = 2;
  c.q = 2;
  c.alpha = Vector::Zero(2);
  c.d = Matrix(2, 2);
  c.d << 0.6, 0.2, 0.2, 0.3;
  c.sigma2 = Vector::Constant(1, 0.5);
  c.design = Design::user_supplied;
  Matrix x(3, 2);
  x << 1.0, 0.0, 1.0, 1.0, 1.0, 2.0;
  c.user_x = {x};
  c.user_z = {x};
  const Matrix truth = 0.5 * Matrix::Identity(3, 3) + x * c.d * x.transpose();

  const int reps = 5000;
  Matrix sum = Matrix::Zero(3, 3);
  Matrix sum_sq = Matrix::Zero(3, 3);
  for (int r = 0; r < reps; ++r) {
    c.seed = 1000 + static_cast<std::uint64_t>(r);
    const Vector y = generate(c).data.individuals[0].y;
    const Matrix outer = y * y.transpose();
    sum += outer;
    sum_sq += outer.cwiseProduct(outer);
  }
  const Matrix mean = sum / reps;
  const Matrix var = sum_sq / reps - mean.cwiseProduct(mean);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double se = std::sqrt(var(i, j) / reps);
      EXPECT_NEAR(mean(i, j), truth(i, j), 3.0 * se) << i << "," << j;
    }
  }
}

TEST(Simulate, InvalidConfigs) {
  auto c = base_config();
  c.alpha = Vector::Zero(2);
  EXPECT_EQ(code_of([&] { generate(c); }), ErrorCode::invalid_config);
  c = base_config();
  c.d(0, 0) = -1.0;
  EXPECT_EQ(code_of([&] { generate(c); }), ErrorCode::invalid_config);
  c = base_config();
  c.d(0, 1) = 0.5;
  EXPECT_EQ(code_of([&] { generate(c); }), ErrorCode::invalid_config);
  c = base_config();
  c.sigma2 = Vector::Constant(1, 0.0);
  EXPECT_EQ(code_of([&] { generate(c); }), ErrorCode::invalid_config);
  c = base_config();
  c.q = 4;
  c.d = Matrix::Identity(4, 4);
  EXPECT_EQ(code_of([&] { generate(c); }), ErrorCode::invalid_config);
  c = base_config();
  c.n_obs_min = 10;
  c.n_obs_max = 5;
  EXPECT_EQ(code_of([&] { generate(c); }), ErrorCode::invalid_config);
  c = base_config();
  c.design = Design::z_equals_x;
  EXPECT_EQ(code_of([&] { generate(c); }), ErrorCode::invalid_config);
}

TEST(Simulate, UndersizedDesignFailsValidation) {
  // a single one-row block cannot identify three fixed effects
  auto c = base_config();
  c.n_individuals = 1;
  c.n_obs_min = c.n_obs_max = 1;
  EXPECT_EQ(code_of([&] { generate(c); }), ErrorCode::invalid_config);
}
