#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rcml/error.hpp"
#include "rcml/linalg.hpp"

namespace rcml {

/// Default bound on the relative containment residual ||(I - P_k) Z_k||_F / max(1, ||Z_k||_F).
inline constexpr double kDefaultContainmentTol = 1e-8;

/// One subject's block: y_k = X_k alpha + Z_k beta_k + e_k.
struct Individual {
  std::string id;
  Matrix x;  // n_k x p
  Matrix z;  // n_k x q
  Vector y;  // n_k

  Eigen::Index n_obs() const { return y.size(); }
};

struct Dataset {
  std::vector<Individual> individuals;

  std::size_t size() const { return individuals.size(); }
  Eigen::Index p() const { return individuals.empty() ? 0 : individuals.front().x.cols(); }
  Eigen::Index q() const { return individuals.empty() ? 0 : individuals.front().z.cols(); }

  Eigen::Index total_obs() const {
    Eigen::Index total = 0;
    for (const auto& ind : individuals) total += ind.n_obs();
    return total;
  }
};

struct IndividualReport {
  std::string id;
  Eigen::Index n_obs = 0;
  int x_rank = 0;  // rank(X_k^t X_k)
  int z_rank = 0;  // rank(Z_k^t Z_k)
  double containment_residual = 0.0;
  bool contained = true;
};

struct ValidationReport {
  std::vector<IndividualReport> individuals;
  Eigen::Index p = 0;
  Eigen::Index q = 0;
  int pooled_rank = 0;
  bool valid = false;
  double containment_tol = kDefaultContainmentTol;

  /// First failing individual, or nullptr.
  const IndividualReport* first_violation() const {
    for (const auto& r : individuals) {
      if (!r.contained) return &r;
    }
    return nullptr;
  }
};

/// Throws DimensionMismatch if the blocks are ragged or p, q differ between individuals.
inline void check_dimensions(const Dataset& data) {
  if (data.individuals.empty()) {
    throw Error(ErrorCode::dimension_mismatch, "dataset has no individuals");
  }
  const auto p = data.p();
  const auto q = data.q();
  if (p < 1 || q < 1) {
    throw Error(ErrorCode::dimension_mismatch, "p and q must be at least 1");
  }
  for (const auto& ind : data.individuals) {
    const auto n = ind.y.size();
    if (n < 1) {
      throw Error(ErrorCode::dimension_mismatch, "individual '" + ind.id + "' has no observations");
    }
    if (ind.x.rows() != n || ind.z.rows() != n) {
      throw Error(ErrorCode::dimension_mismatch, "individual '" + ind.id + "' has ragged x/z/y blocks");
    }
    if (ind.x.cols() != p || ind.z.cols() != q) {
      throw Error(ErrorCode::dimension_mismatch,
                  "individual '" + ind.id + "' has " + std::to_string(ind.x.cols()) + " x columns and " +
                      std::to_string(ind.z.cols()) + " z columns; expected " + std::to_string(p) + " and " +
                      std::to_string(q));
    }
  }
}

namespace detail {

inline double containment_residual(const Matrix& x, const Matrix& z, const Matrix& factor) {
  return (z - x * factor).norm() / std::max(1.0, z.norm());
}

}  // namespace detail

/// A_k = (X^t X)^- X^t Z, so that X A_k = Z whenever M(Z) lies in M(X).
inline Matrix containment_factor(const Matrix& x, const Matrix& z, double tol = kDefaultContainmentTol,
                                 double rank_tol = kDefaultRankTol) {
  if (x.rows() != z.rows()) {
    throw Error(ErrorCode::dimension_mismatch, "x and z must have the same number of rows");
  }
  const Matrix xtx = x.transpose() * x;
  Matrix factor = SymmetricSpectrum(xtx, rank_tol).pseudo_inverse() * (x.transpose() * z);
  const double residual = detail::containment_residual(x, z, factor);
  if (residual > tol) {
    throw Error(ErrorCode::containment_violation,
                "column space of z is not contained in that of x (residual " + std::to_string(residual) + ")");
  }
  return factor;
}

/// Checks the random-coefficient condition for every block and the pooled
/// rank of sum_k X_k^t X_k. Ragged input throws; the other failures are
/// recorded in the report.
inline ValidationReport validate_dataset(const Dataset& data, double tol = kDefaultContainmentTol,
                                         double rank_tol = kDefaultRankTol) {
  check_dimensions(data);
  ValidationReport report;
  report.p = data.p();
  report.q = data.q();
  report.containment_tol = tol;
  report.individuals.reserve(data.size());

  Matrix pooled = Matrix::Zero(report.p, report.p);
  bool all_contained = true;
  for (const auto& ind : data.individuals) {
    IndividualReport r;
    r.id = ind.id;
    r.n_obs = ind.n_obs();
    const Matrix xtx = ind.x.transpose() * ind.x;
    const SymmetricSpectrum xs(xtx, rank_tol);
    r.x_rank = xs.rank();
    r.z_rank = SymmetricSpectrum(ind.z.transpose() * ind.z, rank_tol).rank();
    const Matrix factor = xs.pseudo_inverse() * (ind.x.transpose() * ind.z);
    r.containment_residual = detail::containment_residual(ind.x, ind.z, factor);
    r.contained = r.containment_residual <= tol;
    all_contained = all_contained && r.contained;
    pooled += xtx;
    report.individuals.push_back(std::move(r));
  }
  report.pooled_rank = SymmetricSpectrum(pooled, rank_tol).rank();
  report.valid = all_contained && report.pooled_rank == report.p;
  return report;
}

/// Converts a failed report into the matching exception.
inline void require_valid(const ValidationReport& report) {
  if (const auto* bad = report.first_violation()) {
    throw Error(ErrorCode::containment_violation,
                "individual '" + bad->id + "': column space of z is not contained in that of x (residual " +
                    std::to_string(bad->containment_residual) + ")");
  }
  if (report.pooled_rank != report.p) {
    throw Error(ErrorCode::rank_deficient_design, "pooled X^t X has rank " + std::to_string(report.pooled_rank) +
                                                      " but p = " + std::to_string(report.p));
  }
}

}  // namespace rcml
