#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rcml/dispersion.hpp"
#include "rcml/error.hpp"
#include "rcml/linalg.hpp"
#include "rcml/model.hpp"
#include "rcml/stats.hpp"

namespace rcml {

namespace detail {

inline void check_sigma2(const Vector& sigma2, std::size_t n) {
  if (static_cast<std::size_t>(sigma2.size()) != n) {
    throw Error(ErrorCode::dimension_mismatch, "sigma2 has " + std::to_string(sigma2.size()) +
                                                   " entries for " + std::to_string(n) + " individuals");
  }
  for (Eigen::Index k = 0; k < sigma2.size(); ++k) {
    if (!(sigma2(k) > 0.0) || !std::isfinite(sigma2(k))) {
      throw Error(ErrorCode::invalid_config, "sigma2[" + std::to_string(k) + "] must be positive and finite");
    }
  }
}

inline double reml_constant(Eigen::Index total_obs, Eigen::Index p) {
  return -0.5 * static_cast<double>(total_obs - p) * std::log(2.0 * std::numbers::pi);
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace detail

/// D_k = P(Z_k^t Z_k) D P(Z_k^t Z_k).
inline Matrix project_d(const Matrix& d, const IndividualStats& s) { return s.pz * d * s.pz; }

/// [sigma_k^2 F_k + D_k]^- restricted to M(Z_k^t Z_k), evaluated in the
/// orthonormal basis of that subspace.
inline Matrix restricted_inverse(const IndividualStats& s, const Matrix& d_k, double sigma2) {
  const Matrix& u = s.z_basis;
  if (u.cols() == 0) return Matrix::Zero(s.f.rows(), s.f.cols());
  const Matrix reduced = u.transpose() * (sigma2 * s.f + d_k) * u;
  const Matrix inv = SymmetricSpectrum(reduced, kDefaultRankTol).pseudo_inverse();
  return detail::symmetrized(u * inv * u.transpose());
}

/// M_k = X_k^t Sigma_k^{-1} X_k in sufficient-statistic form.
inline Matrix m_k(const IndividualStats& s, const Matrix& d_k, double sigma2) {
  const Matrix& l = s.lmat;
  const Matrix within = (s.xtx - l.transpose() * s.ztz * l) / sigma2;
  const Matrix between = l.transpose() * restricted_inverse(s, d_k, sigma2) * l;
  return detail::symmetrized(within + between);
}

/// (sigma^2 I + Z D Z^t)^{-1} through the Woodbury form, using only Z's
/// Gram matrix pseudoinverse. O(n^2 q); meant for checks and small blocks.
inline Matrix sigma_inverse_dense(const Matrix& z, double sigma2, const Matrix& d, double tol = kDefaultRankTol) {
  const auto n = z.rows();
  const SymmetricSpectrum zs(z.transpose() * z, tol);
  const Matrix f = zs.pseudo_inverse();
  const Matrix pz = zs.projector();
  const Matrix u = zs.range_basis();
  const Matrix d_k = pz * d * pz;
  Matrix inner = Matrix::Zero(z.cols(), z.cols());
  if (u.cols() > 0) {
    inner = u * SymmetricSpectrum(u.transpose() * (sigma2 * f + d_k) * u, tol).pseudo_inverse() * u.transpose();
  }
  const Matrix zf = z * f;
  Matrix out = (Matrix::Identity(n, n) - zf * z.transpose()) / sigma2 + zf * inner * zf.transpose();
  return detail::symmetrized(out);
}

struct GlsResult {
  Vector alpha;
  Matrix omega;
  double info_logdet = 0.0;  // ln det(sum_k M_k)
};

/// Pooled GLS estimate as the M_k-weighted combination of the per-individual
/// OLS estimates. Throws SingularInformation when sum_k M_k is not
/// numerically positive definite.
inline GlsResult gls_alpha(const std::vector<IndividualStats>& stats, const std::vector<Matrix>& m) {
  if (stats.empty() || stats.size() != m.size()) {
    throw Error(ErrorCode::dimension_mismatch, "gls_alpha needs one M_k per individual");
  }
  const auto p = m.front().rows();
  CompensatedSum<Matrix> info(Matrix::Zero(p, p));
  CompensatedSum<Vector> rhs(Vector::Zero(p));
  for (std::size_t k = 0; k < stats.size(); ++k) {
    info.add(m[k]);
    rhs.add(m[k] * stats[k].alpha);
  }
  const Matrix total = detail::symmetrized(info.value());
  Eigen::LLT<Matrix> llt(total);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    throw Error(ErrorCode::singular_information, "sum of M_k is singular at the current dispersion");
  }
  GlsResult out;
  out.omega = detail::symmetrized(llt.solve(Matrix::Identity(p, p)));
  out.alpha = llt.solve(rhs.value());
  const Matrix lower = llt.matrixL();
  out.info_logdet = 2.0 * lower.diagonal().array().log().sum();
  return out;
}

/// ln det(Sigma_k) = (n_k - q) ln sigma_k^2 + ln det(sigma_k^2 I_q + Z_k^t Z_k D).
/// The q x q product is not symmetric, so its determinant comes from a
/// partial-pivot LU with the sign tracked explicitly.
inline double logdet_sigma_k(const IndividualStats& s, const Matrix& d, double sigma2) {
  const auto q = d.rows();
  const Matrix small = sigma2 * Matrix::Identity(q, q) + s.ztz * d;
  Eigen::PartialPivLU<Matrix> lu(small);
  const Matrix& packed = lu.matrixLU();
  double sign = lu.permutationP().determinant();
  double logabs = 0.0;
  for (Eigen::Index i = 0; i < q; ++i) {
    const double u = packed(i, i);
    if (u == 0.0 || !std::isfinite(u)) {
      throw Error(ErrorCode::non_positive_determinant, "sigma^2 I + Z^t Z D is singular for individual '" + s.id + "'");
    }
    if (u < 0.0) sign = -sign;
    logabs += std::log(std::abs(u));
  }
  if (sign < 0.0) {
    throw Error(ErrorCode::non_positive_determinant,
                "sigma^2 I + Z^t Z D has negative determinant for individual '" + s.id + "'");
  }
  return static_cast<double>(s.n_obs - q) * std::log(sigma2) + logabs;
}

/// (y_k - X_k alpha)^t Sigma_k^{-1} (y_k - X_k alpha) split into the
/// within-individual residual and the between-estimate part.
inline double residual_quadratic(const IndividualStats& s, const Matrix& m, const Vector& alpha_hat, double sigma2) {
  const Vector delta = s.alpha - alpha_hat;
  return s.rss / sigma2 + delta.dot(m * delta);
}

/// Everything derived from (D, sigma^2) that the likelihood, gradient and
/// information share. Building it is O(N (p^3 + q^3)).
struct CovarianceState {
  Matrix d;
  Vector sigma2;
  std::vector<Matrix> d_k;
  std::vector<Matrix> inner;  // [sigma_k^2 F_k + D_k]^-
  std::vector<Matrix> g;      // inner_k L_k, q x p
  std::vector<Matrix> m;      // M_k
  std::vector<double> logdet_sigma;
  Matrix omega;
  Vector alpha_hat;
  double info_logdet = 0.0;

  std::size_t size() const { return m.size(); }
};

inline CovarianceState evaluate_state(const std::vector<IndividualStats>& stats, const Matrix& d, const Vector& sigma2,
                                      int threads = 1) {
  detail::check_sigma2(sigma2, stats.size());
  const std::size_t n = stats.size();
  CovarianceState st;
  st.d = d;
  st.sigma2 = sigma2;
  st.d_k.resize(n);
  st.inner.resize(n);
  st.g.resize(n);
  st.m.resize(n);
  st.logdet_sigma.resize(n);
  parallel_for(n, threads, [&](std::size_t k) {
    const auto& s = stats[k];
    const double s2 = sigma2(static_cast<Eigen::Index>(k));
    st.d_k[k] = project_d(d, s);
    st.inner[k] = restricted_inverse(s, st.d_k[k], s2);
    st.g[k] = st.inner[k] * s.lmat;
    st.m[k] = detail::symmetrized((s.xtx - s.lmat.transpose() * s.ztz * s.lmat) / s2 + s.lmat.transpose() * st.g[k]);
    st.logdet_sigma[k] = logdet_sigma_k(s, d, s2);
  });
  auto gls = gls_alpha(stats, st.m);
  st.omega = std::move(gls.omega);
  st.alpha_hat = std::move(gls.alpha);
  st.info_logdet = gls.info_logdet;
  return st;
}

/// Reduced restricted log-likelihood from a prepared state.
inline double reml_reduced(const std::vector<IndividualStats>& stats, const CovarianceState& st) {
  Eigen::Index total_obs = 0;
  CompensatedSum<double> acc;
  for (std::size_t k = 0; k < stats.size(); ++k) {
    const auto& s = stats[k];
    total_obs += s.n_obs;
    const double s2 = st.sigma2(static_cast<Eigen::Index>(k));
    acc.add(0.5 * s.xtx_logdet);
    acc.add(-0.5 * st.logdet_sigma[k]);
    acc.add(-0.5 * residual_quadratic(s, st.m[k], st.alpha_hat, s2));
  }
  acc.add(-0.5 * st.info_logdet);
  acc.add(detail::reml_constant(total_obs, stats.front().xtx.rows()));
  return acc.value();
}

inline double reml_reduced(const std::vector<IndividualStats>& stats, const Matrix& d, const Vector& sigma2,
                           int threads = 1) {
  return reml_reduced(stats, evaluate_state(stats, d, sigma2, threads));
}

struct FullEvaluation {
  double loglik = 0.0;
  Vector gradient;  // empty unless requested
  Vector alpha_hat;
  Matrix omega;
};

/// Restricted log-likelihood evaluated directly on the n_k x n_k covariance
/// blocks, O(sum_k n_k^3). With a dispersion spec it also returns the
/// gradient in theta computed from the dense blocks.
inline FullEvaluation reml_full_evaluate(const Dataset& data, const Matrix& d, const Vector& sigma2,
                                         const DispersionSpec* spec = nullptr, double tol = kDefaultRankTol) {
  check_dimensions(data);
  detail::check_sigma2(sigma2, data.size());
  const auto p = data.p();
  const std::size_t n = data.size();

  std::vector<Eigen::LLT<Matrix>> chol(n);
  CompensatedSum<Matrix> info(Matrix::Zero(p, p));
  CompensatedSum<Vector> rhs(Vector::Zero(p));
  CompensatedSum<double> acc;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& ind = data.individuals[k];
    const double s2 = sigma2(static_cast<Eigen::Index>(k));
    const auto nk = ind.n_obs();
    const Matrix sigma = s2 * Matrix::Identity(nk, nk) + ind.z * d * ind.z.transpose();
    chol[k].compute(sigma);
    if (chol[k].info() != Eigen::Success) {
      throw Error(ErrorCode::non_positive_definite_sigma, "Sigma_k is not positive definite for individual '" +
                                                              ind.id + "'");
    }
    const Matrix lower = chol[k].matrixL();
    acc.add(-lower.diagonal().array().log().sum());  // -1/2 ln det Sigma_k

    // 1/2 pseudo-ln det(X^t X) from the singular values of X.
    Eigen::JacobiSVD<Matrix> svd(ind.x);
    const Vector& sv = svd.singularValues();
    const double cut = sv(0) * sv(0) * tol * static_cast<double>(p);
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      const double lam = sv(i) * sv(i);
      if (lam > cut) acc.add(0.5 * std::log(lam));
    }

    info.add(ind.x.transpose() * chol[k].solve(ind.x));
    rhs.add(ind.x.transpose() * chol[k].solve(ind.y));
  }
  const Matrix total = detail::symmetrized(info.value());
  Eigen::LLT<Matrix> pooled(total);
  if (pooled.info() != Eigen::Success || pooled.rcond() < 1e-14) {
    throw Error(ErrorCode::singular_information, "sum of X_k^t Sigma_k^-1 X_k is singular");
  }
  FullEvaluation out;
  out.alpha_hat = pooled.solve(rhs.value());
  out.omega = detail::symmetrized(pooled.solve(Matrix::Identity(p, p)));
  const Matrix pooled_lower = pooled.matrixL();
  acc.add(-pooled_lower.diagonal().array().log().sum());
  acc.add(detail::reml_constant(data.total_obs(), p));

  const int r = spec ? spec->n_params() : 0;
  CompensatedSum<Vector> grad(Vector::Zero(r));
  for (std::size_t k = 0; k < n; ++k) {
    const auto& ind = data.individuals[k];
    const Vector resid = ind.y - ind.x * out.alpha_hat;
    const Vector weighted = chol[k].solve(resid);
    acc.add(-0.5 * resid.dot(weighted));
    if (spec) {
      const Matrix w = chol[k].solve(ind.z);  // Sigma^-1 Z
      const Matrix ztw = ind.z.transpose() * w;
      const Matrix xtw = ind.x.transpose() * w;
      const Vector u = ind.z.transpose() * weighted;
      Vector gk(r);
      for (int i = 0; i < r; ++i) {
        const Matrix& b = spec->basis(i);
        gk(i) = 0.5 * (-(ztw * b).trace() + (out.omega * xtw * b * xtw.transpose()).trace() + u.dot(b * u));
      }
      grad.add(gk);
    }
  }
  out.loglik = acc.value();
  if (spec) out.gradient = grad.value();
  return out;
}

inline double reml_full(const Dataset& data, const Matrix& d, const Vector& sigma2, double tol = kDefaultRankTol) {
  return reml_full_evaluate(data, d, sigma2, nullptr, tol).loglik;
}

}  // namespace rcml
