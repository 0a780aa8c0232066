#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "rcml/error.hpp"
#include "rcml/linalg.hpp"
#include "rcml/model.hpp"

namespace rcml {

/// Theta-independent summary of one individual's regression. Everything the
/// reduced likelihood, its gradient and the BLUPs need is here; the raw
/// n_k-row blocks are never touched again once these are built.
struct IndividualStats {
  std::string id;
  Eigen::Index n_obs = 0;
  int x_rank = 0;  // p_k
  int z_rank = 0;  // q_k

  Matrix xtx;  // X^t X
  Matrix ztz;  // Z^t Z
  Matrix xtz;  // X^t Z
  Matrix e;    // (X^t X)^-
  Matrix f;    // (Z^t Z)^-
  Matrix kmat; // E X^t Z, p x q
  Matrix lmat; // F Z^t X, q x p
  Matrix pz;   // P(Z^t Z)
  Matrix z_basis;  // orthonormal basis of M(Z^t Z), q x q_k

  Vector alpha;  // per-individual OLS estimate
  double rss = 0.0;  // y^t (I - P_k) y
  std::optional<double> sigma2_hat;  // rss / (n_k - p_k), absent when n_k <= p_k
  double xtx_logdet = 0.0;  // pseudo-log-determinant of X^t X

  double require_sigma2_hat() const {
    if (!sigma2_hat) {
      throw Error(ErrorCode::degenerate_individual,
                  "individual '" + id + "' has n_k = " + std::to_string(n_obs) + " <= rank(X_k) = " +
                      std::to_string(x_rank) + "; supply sigma2 for it explicitly");
    }
    return *sigma2_hat;
  }
};

/// Per-individual sufficient statistics. Pseudoinverses come from the
/// eigendecomposition of the Gram matrices.
inline IndividualStats compute_stats(const Individual& ind, double tol = kDefaultRankTol) {
  IndividualStats s;
  s.id = ind.id;
  s.n_obs = ind.n_obs();
  s.xtx = ind.x.transpose() * ind.x;
  s.xtx = 0.5 * (s.xtx + s.xtx.transpose());
  s.ztz = ind.z.transpose() * ind.z;
  s.ztz = 0.5 * (s.ztz + s.ztz.transpose());
  s.xtz = ind.x.transpose() * ind.z;

  const SymmetricSpectrum xs(s.xtx, tol);
  const SymmetricSpectrum zs(s.ztz, tol);
  s.x_rank = xs.rank();
  s.z_rank = zs.rank();
  s.e = xs.pseudo_inverse();
  s.f = zs.pseudo_inverse();
  s.pz = zs.projector();
  s.z_basis = zs.range_basis();
  s.kmat = s.e * s.xtz;
  s.lmat = s.f * s.xtz.transpose();
  s.xtx_logdet = xs.pseudo_logdet();

  s.alpha = s.e * (ind.x.transpose() * ind.y);
  s.rss = (ind.y - ind.x * s.alpha).squaredNorm();
  if (s.n_obs > s.x_rank) {
    s.sigma2_hat = s.rss / static_cast<double>(s.n_obs - s.x_rank);
  }
  return s;
}

inline std::vector<IndividualStats> compute_all_stats(const Dataset& data, double tol = kDefaultRankTol,
                                                      int threads = 1) {
  std::vector<IndividualStats> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t k) { out[k] = compute_stats(data.individuals[k], tol); });
  return out;
}

/// Within-individual variance from the residual perpendicular to the
/// extended column space of (X_k, Z_k). Independent of compute_stats: it
/// works from an SVD of the stacked design.
inline double sigma2_extended(const Individual& ind, double tol = kDefaultRankTol) {
  Matrix stacked(ind.x.rows(), ind.x.cols() + ind.z.cols());
  stacked << ind.x, ind.z;
  Eigen::BDCSVD<Matrix> svd(stacked, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  const double cut = (sv.size() > 0 ? sv(0) : 0.0) * tol *
                     static_cast<double>(std::max(stacked.rows(), stacked.cols()));
  int m = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) m += sv(i) > cut ? 1 : 0;
  if (ind.n_obs() <= m) {
    throw Error(ErrorCode::degenerate_individual, "individual '" + ind.id + "' has n_k = " +
                                                      std::to_string(ind.n_obs()) + " <= rank(X_k, Z_k) = " +
                                                      std::to_string(m));
  }
  const Matrix basis = svd.matrixU().leftCols(m);
  const Vector resid = ind.y - basis * (basis.transpose() * ind.y);
  return resid.squaredNorm() / static_cast<double>(ind.n_obs() - m);
}

}  // namespace rcml
