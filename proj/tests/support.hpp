#pragma once

// Random validated instances and dense O(n^3) reference computations used as
// oracles by the unit and acceptance tests. Nothing here goes through the
// sufficient-statistic code paths.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "rcml/rcml.hpp"

namespace rcml::testing {

enum class InstanceDesign { z_equals_x, column_subset, mixed_columns };

struct InstanceOptions {
  int max_individuals = 5;
  int max_obs = 12;
  int max_p = 3;
  bool allow_rank_deficient = true;
};

struct Instance {
  Dataset data;
  Matrix d;
  Vector sigma2;
  InstanceDesign design = InstanceDesign::column_subset;
  bool rank_deficient = false;  // some X_k^t X_k is singular
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  Matrix normal_matrix(Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal();
    return m;
  }
  Vector normal_vector(Eigen::Index n) { return normal_matrix(n, 1).col(0); }

  /// Random PSD matrix, occasionally rank deficient.
  Matrix psd(int q, bool allow_singular = true) {
    const int rank = allow_singular && integer(0, 3) == 0 ? integer(1, q) : q;
    const Matrix g = normal_matrix(q, rank);
    return uniform(0.2, 1.5) * g * g.transpose();
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline Instance random_instance(Rng& rng, const InstanceOptions& opt = {}) {
  for (;;) {
    Instance inst;
    const int p = rng.integer(1, opt.max_p);
    const int design_pick = rng.integer(0, 2);
    inst.design = design_pick == 0 ? InstanceDesign::z_equals_x
                                   : (design_pick == 1 ? InstanceDesign::column_subset : InstanceDesign::mixed_columns);
    const int q = inst.design == InstanceDesign::z_equals_x ? p : rng.integer(1, p);
    const int n_ind = rng.integer(1, opt.max_individuals);
    const Vector alpha = rng.normal_vector(p);
    inst.d = rng.psd(q);
    inst.sigma2.resize(n_ind);
    for (int k = 0; k < n_ind; ++k) {
      const int n = rng.integer(q + 1, std::max(q + 1, opt.max_obs));
      Individual ind;
      ind.id = "k" + std::to_string(k);
      ind.x = rng.normal_matrix(n, p);
      if (p >= 2 && opt.allow_rank_deficient && rng.integer(0, 3) == 0) {
        ind.x.col(p - 1) = ind.x.col(0);  // duplicated column
        inst.rank_deficient = true;
      }
      if (n < p) inst.rank_deficient = true;
      switch (inst.design) {
        case InstanceDesign::z_equals_x: ind.z = ind.x; break;
        case InstanceDesign::column_subset: ind.z = ind.x.leftCols(q); break;
        case InstanceDesign::mixed_columns: ind.z = ind.x * rng.normal_matrix(p, q); break;
      }
      inst.sigma2(k) = rng.uniform(0.5, 2.0);
      const Matrix root = psd_sqrt(inst.d);
      ind.y = ind.x * alpha + ind.z * (root * rng.normal_vector(q)) + std::sqrt(inst.sigma2(k)) * rng.normal_vector(n);
      inst.data.individuals.push_back(std::move(ind));
    }
    if (validate_dataset(inst.data).valid) return inst;
  }
}

/// Sigma_k = sigma^2 I + Z D Z^t.
inline Matrix dense_sigma(const Individual& ind, const Matrix& d, double sigma2) {
  const auto n = ind.n_obs();
  return sigma2 * Matrix::Identity(n, n) + ind.z * d * ind.z.transpose();
}

/// GLS estimate and its covariance by direct inversion of each Sigma_k.
struct DenseGls {
  Vector alpha;
  Matrix omega;
};

inline DenseGls dense_gls(const Dataset& data, const Matrix& d, const Vector& sigma2) {
  const auto p = data.p();
  Matrix info = Matrix::Zero(p, p);
  Vector rhs = Vector::Zero(p);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto& ind = data.individuals[k];
    const Matrix inv = dense_sigma(ind, d, sigma2(static_cast<Eigen::Index>(k))).inverse();
    info += ind.x.transpose() * inv * ind.x;
    rhs += ind.x.transpose() * inv * ind.y;
  }
  DenseGls out;
  out.omega = info.inverse();
  out.alpha = out.omega * rhs;
  return out;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

inline double rel_diff(const Matrix& a, const Matrix& b) {
  return max_abs(a - b) / std::max(1.0, max_abs(b));
}

/// Builds an Individual from explicit blocks.
inline Individual make_individual(std::string id, Matrix x, Matrix z, Vector y) {
  Individual ind;
  ind.id = std::move(id);
  ind.x = std::move(x);
  ind.z = std::move(z);
  ind.y = std::move(y);
  return ind;
}

}  // namespace rcml::testing
