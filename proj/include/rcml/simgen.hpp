#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rcml/error.hpp"
#include "rcml/linalg.hpp"
#include "rcml/model.hpp"

namespace rcml {

enum class Design {
  gaussian_z_subset,  // X = [1, N(0,1)...], Z = first q columns of X
  z_equals_x,
  user_supplied,
};

inline constexpr std::string_view to_string(Design d) noexcept {
  switch (d) {
    case Design::gaussian_z_subset: return "random-gaussian-x-with-z-subset";
    case Design::z_equals_x: return "z-equals-x";
    case Design::user_supplied: return "user-supplied";
  }
  return "unknown";
}

struct SimConfig {
  int n_individuals = 10;
  int n_obs_min = 10;
  int n_obs_max = 10;
  int p = 2;
  int q = 1;
  Vector alpha;
  Matrix d;
  Vector sigma2;  // one shared value or one per individual
  Design design = Design::gaussian_z_subset;
  bool intercept = true;  // first column of X is all ones for the gaussian designs
  // user-supplied design: one (x, z) pair shared by all individuals, or one per individual
  std::vector<Matrix> user_x;
  std::vector<Matrix> user_z;
  std::uint64_t seed = 1;
};

struct Truth {
  Vector alpha;
  Matrix d;
  Vector sigma2;  // per individual
};

struct Simulation {
  Dataset data;
  Truth truth;
  std::vector<Vector> beta;  // realized random effects
};

inline void check_config(const SimConfig& c) {
  auto bad = [](const std::string& msg) { throw Error(ErrorCode::invalid_config, msg); };
  if (c.n_individuals < 1) bad("n_individuals must be at least 1");
  if (c.p < 1 || c.q < 1) bad("p and q must be at least 1");
  if (c.alpha.size() != c.p) bad("alpha must have p entries");
  if (c.d.rows() != c.q || c.d.cols() != c.q) bad("d must be q x q");
  if (max_abs(c.d - c.d.transpose()) > 1e-12 * std::max(1.0, max_abs(c.d))) bad("d must be symmetric");
  if (Eigen::SelfAdjointEigenSolver<Matrix>(c.d).eigenvalues().minCoeff() < -1e-12 * std::max(1.0, max_abs(c.d))) {
    bad("d must be positive semidefinite");
  }
  if (c.sigma2.size() != 1 && c.sigma2.size() != c.n_individuals) bad("sigma2 needs one value or one per individual");
  for (Eigen::Index i = 0; i < c.sigma2.size(); ++i) {
    if (!(c.sigma2(i) > 0.0)) bad("sigma2 must be positive");
  }
  if (c.design == Design::user_supplied) {
    const auto n = c.user_x.size();
    if (n == 0 || c.user_z.size() != n || (n != 1 && n != static_cast<std::size_t>(c.n_individuals))) {
      bad("user-supplied design needs matching x/z lists of length 1 or n_individuals");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (c.user_x[i].cols() != c.p || c.user_z[i].cols() != c.q || c.user_x[i].rows() != c.user_z[i].rows() ||
          c.user_x[i].rows() < 1) {
        bad("user-supplied x/z blocks have the wrong shape");
      }
    }
    return;
  }
  if (c.n_obs_min < 1 || c.n_obs_max < c.n_obs_min) bad("need 1 <= n_obs_min <= n_obs_max");
  if (c.design == Design::z_equals_x && c.p != c.q) bad("z-equals-x design needs p == q");
  if (c.design == Design::gaussian_z_subset && c.q > c.p) bad("z-subset design needs q <= p");
}

/// Symmetric square root of a PSD matrix with negative eigenvalues clipped.
inline Matrix psd_sqrt(const Matrix& d) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (d + d.transpose()));
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

/// Draws a dataset from y_k = X_k alpha + Z_k beta_k + e_k with
/// beta_k ~ N(0, D) and e_k ~ N(0, sigma_k^2 I). Uses std::mt19937_64, so
/// the output is reproducible for a given seed and standard library.
inline Simulation generate(const SimConfig& c) {
  check_config(c);
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> n_draw(c.n_obs_min, std::max(c.n_obs_min, c.n_obs_max));
  const Matrix root = psd_sqrt(c.d);

  Simulation sim;
  sim.truth.alpha = c.alpha;
  sim.truth.d = c.d;
  sim.truth.sigma2 = c.sigma2.size() == 1 ? Vector::Constant(c.n_individuals, c.sigma2(0)) : c.sigma2;
  sim.data.individuals.reserve(static_cast<std::size_t>(c.n_individuals));

  for (int k = 0; k < c.n_individuals; ++k) {
    Individual ind;
    ind.id = "ind" + std::to_string(k + 1);
    if (c.design == Design::user_supplied) {
      const std::size_t src = c.user_x.size() == 1 ? 0 : static_cast<std::size_t>(k);
      ind.x = c.user_x[src];
      ind.z = c.user_z[src];
    } else {
      const int n = n_draw(rng);
      ind.x.resize(n, c.p);
      for (int j = 0; j < c.p; ++j) {
        for (int i = 0; i < n; ++i) ind.x(i, j) = (j == 0 && c.intercept) ? 1.0 : normal(rng);
      }
      ind.z = c.design == Design::z_equals_x ? ind.x : Matrix(ind.x.leftCols(c.q));
    }
    Vector z_draw(c.q);
    for (int j = 0; j < c.q; ++j) z_draw(j) = normal(rng);
    Vector beta = root * z_draw;
    const auto n = ind.x.rows();
    const double sd = std::sqrt(sim.truth.sigma2(k));
    Vector noise(n);
    for (Eigen::Index i = 0; i < n; ++i) noise(i) = sd * normal(rng);
    ind.y = ind.x * c.alpha + ind.z * beta + noise;
    sim.beta.push_back(std::move(beta));
    sim.data.individuals.push_back(std::move(ind));
  }

  const auto report = validate_dataset(sim.data);
  if (!report.valid) {
    throw Error(ErrorCode::invalid_config, "simulated dataset fails validation (containment or pooled rank)");
  }
  return sim;
}

}  // namespace rcml
