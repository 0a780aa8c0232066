#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rcml/blup.hpp"
#include "rcml/dispersion.hpp"
#include "rcml/error.hpp"
#include "rcml/likelihood.hpp"
#include "rcml/linalg.hpp"
#include "rcml/model.hpp"
#include "rcml/stats.hpp"

namespace rcml {

enum class SigmaMode { hybrid_ols, user_fixed };

/// exact: the Fisher information 1/2 tr(P dV_i P dV_j) written in reduced
/// statistics. simplified: a shorter expression that leaves out the
/// dependence of alpha_hat on theta (kept for comparison only).
enum class InformationForm { exact, simplified };

inline constexpr std::string_view to_string(SigmaMode m) noexcept {
  return m == SigmaMode::hybrid_ols ? "hybrid-ols" : "user-fixed";
}
inline constexpr std::string_view to_string(InformationForm f) noexcept {
  return f == InformationForm::exact ? "exact" : "simplified";
}

struct FitConfig {
  int max_iters = 100;
  double grad_tol = 1e-6;
  double step_tol = 1e-8;
  double ridge = 0.0;
  bool line_search = true;
  SigmaMode sigma_mode = SigmaMode::hybrid_ols;
  Vector sigma2;  // user-fixed values: one per individual, or a single shared value
  InformationForm information = InformationForm::exact;
  int threads = 1;
  double rank_tol = kDefaultRankTol;
  double containment_tol = kDefaultContainmentTol;

  void check() const {
    if (max_iters < 1) throw Error(ErrorCode::invalid_config, "max_iters must be at least 1");
    if (!(grad_tol > 0.0) || !(step_tol > 0.0)) throw Error(ErrorCode::invalid_config, "tolerances must be positive");
    if (!(ridge >= 0.0)) throw Error(ErrorCode::invalid_config, "ridge must be non-negative");
    if (!(rank_tol > 0.0) || !(containment_tol > 0.0)) {
      throw Error(ErrorCode::invalid_config, "rank and containment tolerances must be positive");
    }
  }
};

struct TraceEntry {
  int iteration = 0;
  Vector theta;
  double loglik = 0.0;
  double grad_norm = 0.0;  // max-norm of the gradient at theta
  double step = 0.0;       // line-search scale of the accepted step (0 for the start point)
};

struct FitResult {
  Vector theta_hat;
  Matrix d_hat;
  Vector alpha_hat;
  Matrix omega;
  Vector sigma2;
  double loglik = 0.0;
  bool converged = false;
  bool stalled = false;
  int iterations = 0;
  Matrix information;  // expected information at theta_hat
  std::vector<TraceEntry> trace;
  std::vector<RandomEffectEstimate> blups;
};

/// G_k = [sigma_k^2 F_k + D_k]^- F_k Z_k^t X_k, q x p.
inline Matrix g_k(const IndividualStats& s, const Matrix& d_k, double sigma2) {
  return restricted_inverse(s, d_k, sigma2) * s.lmat;
}

/// Score vector at a prepared state.
inline Vector gradient(const std::vector<IndividualStats>& stats, const CovarianceState& st,
                       const DispersionSpec& spec) {
  const int r = spec.n_params();
  CompensatedSum<Vector> acc(Vector::Zero(r));
  for (std::size_t k = 0; k < stats.size(); ++k) {
    const Vector delta = stats[k].alpha - st.alpha_hat;
    const Matrix spread = delta * delta.transpose() + st.omega;
    const Matrix core = st.g[k] * spread * st.g[k].transpose() - st.inner[k];
    Vector gk(r);
    for (int i = 0; i < r; ++i) {
      const Matrix dk = stats[k].pz * spec.basis(i) * stats[k].pz;
      gk(i) = 0.5 * core.cwiseProduct(dk).sum();  // tr(core * dk), both symmetric
    }
    acc.add(gk);
  }
  return acc.value();
}

inline Vector gradient(const Vector& theta, const std::vector<IndividualStats>& stats, const Vector& sigma2,
                       const DispersionSpec& spec, int threads = 1) {
  return gradient(stats, evaluate_state(stats, spec.build(theta), sigma2, threads), spec);
}

/// Expected information J = -E[d^2 l / dtheta_i dtheta_j], symmetrized.
/// Uses dOmega/dtheta_i = Omega (sum_k G_k^t dD_k G_k) Omega.
inline Matrix expected_information(const std::vector<IndividualStats>& stats, const CovarianceState& st,
                                   const DispersionSpec& spec, InformationForm form = InformationForm::exact) {
  const int r = spec.n_params();
  const auto p = st.omega.rows();
  const auto nr = static_cast<std::size_t>(r);

  // H_i = sum_k G_k^t dD_k,i G_k, so dOmega_i = Omega H_i Omega.
  std::vector<CompensatedSum<Matrix>> h_acc(nr, CompensatedSum<Matrix>(Matrix::Zero(p, p)));
  for (std::size_t k = 0; k < stats.size(); ++k) {
    for (int i = 0; i < r; ++i) {
      const Matrix dk = stats[k].pz * spec.basis(i) * stats[k].pz;
      h_acc[static_cast<std::size_t>(i)].add(st.g[k].transpose() * dk * st.g[k]);
    }
  }
  std::vector<Matrix> h(nr);
  std::vector<Matrix> domega(nr);
  for (std::size_t i = 0; i < nr; ++i) {
    h[i] = h_acc[i].value();
    domega[i] = st.omega * h[i] * st.omega;
  }

  CompensatedSum<Matrix> acc(Matrix::Zero(r, r));
  std::vector<Matrix> dk(nr);
  std::vector<Matrix> sd(nr);
  for (std::size_t k = 0; k < stats.size(); ++k) {
    const auto& s = stats[k];
    const Matrix& inner = st.inner[k];
    const Matrix& g = st.g[k];
    for (std::size_t i = 0; i < nr; ++i) {
      dk[i] = s.pz * spec.basis(static_cast<int>(i)) * s.pz;
      sd[i] = inner * dk[i];
    }
    Matrix jk(r, r);
    if (form == InformationForm::exact) {
      const Matrix spread = g * st.omega * g.transpose();
      for (std::size_t i = 0; i < nr; ++i) {
        const Matrix cross = spread * dk[i];
        for (std::size_t j = 0; j < nr; ++j) {
          jk(i, j) = 0.5 * ((sd[i] * sd[j]).trace() - 2.0 * (cross * sd[j]).trace());
        }
      }
    } else {
      for (std::size_t i = 0; i < nr; ++i) {
        const Matrix lhs = sd[i] * inner - g * domega[i] * g.transpose();
        for (std::size_t j = 0; j < nr; ++j) jk(i, j) = 0.5 * (lhs * dk[j]).trace();
      }
    }
    acc.add(jk);
  }
  Matrix info = acc.value();
  if (form == InformationForm::exact) {
    for (std::size_t i = 0; i < nr; ++i) {
      for (std::size_t j = 0; j < nr; ++j) info(i, j) += 0.5 * (domega[i] * h[j]).trace();
    }
  }
  return 0.5 * (info + info.transpose());
}

inline Matrix expected_information(const Vector& theta, const std::vector<IndividualStats>& stats,
                                   const Vector& sigma2, const DispersionSpec& spec,
                                   InformationForm form = InformationForm::exact, int threads = 1) {
  return expected_information(stats, evaluate_state(stats, spec.build(theta), sigma2, threads), spec, form);
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues set to zero.
/// PSD input is returned unchanged.
inline Matrix psd_project(const Matrix& d) {
  const Matrix sym = 0.5 * (d + d.transpose());
  if (sym.size() == 0) return sym;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.eigenvalues().minCoeff() >= 0.0) return sym;
  const Vector clipped = eig.eigenvalues().cwiseMax(0.0);
  const Matrix out = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

/// Maps theta to one whose D(theta) is PSD. Exact for the full-symmetric and
/// diagonal kinds; a fixed pattern alternates between the cone and the
/// pattern subspace, which converges to a point of their intersection.
inline Vector project_theta(const DispersionSpec& spec, const Vector& theta) {
  Vector t = theta;
  for (int pass = 0; pass < 500; ++pass) {
    const Matrix d = spec.build(t);
    if (d.size() == 0) return t;
    const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(d, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    if (lo >= -1e-12 * std::max(1.0, max_abs(d))) return t;
    t = spec.extract(psd_project(d));
    if (spec.kind() != DispersionKind::fixed_pattern) return t;
  }
  return t;
}

struct StepOutcome {
  Vector theta;
  double loglik = 0.0;
  double scale = 0.0;
  bool accepted = false;
};

/// Direction J^{-1} grad. Falls back to J + ridge I when J is singular and a
/// ridge is configured.
inline Vector scoring_direction(const Matrix& info, const Vector& grad, double ridge) {
  const auto r = info.rows();
  Eigen::LLT<Matrix> llt(info);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-14) return llt.solve(grad);
  if (ridge > 0.0) {
    Eigen::LLT<Matrix> ridged(info + ridge * Matrix::Identity(r, r));
    if (ridged.info() == Eigen::Success && ridged.rcond() > 1e-14) return ridged.solve(grad);
  }
  throw Error(ErrorCode::singular_information, "expected information matrix is singular");
}

/// One Fisher-scoring update theta + J^{-1} grad, projected to the admissible
/// set. With line search, the step is halved up to 30 times until the
/// objective does not decrease; `objective` returns nullopt for points where
/// the likelihood cannot be evaluated.
template <class Objective, class Project>
StepOutcome scoring_step(const Vector& theta, double loglik, const Vector& grad, const Matrix& info,
                         const FitConfig& cfg, Objective&& objective, Project&& project) {
  const Vector direction = scoring_direction(info, grad, cfg.ridge);
  StepOutcome out;
  double scale = 1.0;
  for (int halvings = 0; halvings <= 30; ++halvings, scale *= 0.5) {
    Vector candidate = project(Vector(theta + scale * direction));
    const std::optional<double> value = objective(candidate);
    if (!cfg.line_search) {
      if (!value) throw Error(ErrorCode::non_positive_determinant, "scoring step left the admissible region");
      return {std::move(candidate), *value, scale, true};
    }
    if (value && *value >= loglik) return {std::move(candidate), *value, scale, true};
  }
  out.theta = theta;
  out.loglik = loglik;
  return out;
}

namespace detail {

inline Vector resolve_sigma2(const Dataset& data, const FitConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(data.size());
  if (cfg.sigma_mode == SigmaMode::user_fixed) {
    if (cfg.sigma2.size() == 1) return Vector::Constant(n, cfg.sigma2(0));
    if (cfg.sigma2.size() == n) return cfg.sigma2;
    throw Error(ErrorCode::invalid_config, "user-fixed sigma mode needs one sigma2 value or one per individual (got " +
                                               std::to_string(cfg.sigma2.size()) + ")");
  }
  Vector out(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out(k) = sigma2_extended(data.individuals[static_cast<std::size_t>(k)], cfg.rank_tol);
    if (!(out(k) > 0.0)) {
      throw Error(ErrorCode::degenerate_individual,
                  "individual '" + data.individuals[static_cast<std::size_t>(k)].id + "' has zero residual variance");
    }
  }
  return out;
}

}  // namespace detail

/// REML fit of D(theta) by Fisher scoring from theta = 0, with sigma_k^2
/// held at the within-individual estimates (or user values).
inline FitResult fit(const Dataset& data, const DispersionSpec& spec, const FitConfig& cfg = {}) {
  cfg.check();
  const auto report = validate_dataset(data, cfg.containment_tol, cfg.rank_tol);
  require_valid(report);
  if (spec.dim() != data.q()) {
    throw Error(ErrorCode::dimension_mismatch, "dispersion dimension " + std::to_string(spec.dim()) +
                                                   " does not match q = " + std::to_string(data.q()));
  }
  const auto stats = compute_all_stats(data, cfg.rank_tol, cfg.threads);

  FitResult res;
  res.sigma2 = detail::resolve_sigma2(data, cfg);

  auto state_at = [&](const Vector& theta) { return evaluate_state(stats, spec.build(theta), res.sigma2, cfg.threads); };
  auto objective = [&](const Vector& theta) -> std::optional<double> {
    try {
      return reml_reduced(stats, state_at(theta));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::non_positive_determinant || e.code() == ErrorCode::singular_information) {
        return std::nullopt;
      }
      throw;
    }
  };
  auto project = [&](const Vector& theta) { return project_theta(spec, theta); };

  Vector theta = Vector::Zero(spec.n_params());
  CovarianceState state = state_at(theta);
  double loglik = reml_reduced(stats, state);
  Vector grad = gradient(stats, state, spec);
  res.trace.push_back({0, theta, loglik, grad.lpNorm<Eigen::Infinity>(), 0.0});

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    if (grad.lpNorm<Eigen::Infinity>() < cfg.grad_tol) {
      res.converged = true;
      break;
    }
    const Matrix info = expected_information(stats, state, spec, cfg.information);
    StepOutcome step = scoring_step(theta, loglik, grad, info, cfg, objective, project);
    res.iterations = iter;
    if (!step.accepted) {
      res.converged = true;
      res.stalled = true;
      break;
    }
    const double moved = (step.theta - theta).lpNorm<Eigen::Infinity>();
    theta = std::move(step.theta);
    state = state_at(theta);
    loglik = reml_reduced(stats, state);
    grad = gradient(stats, state, spec);
    res.trace.push_back({iter, theta, loglik, grad.lpNorm<Eigen::Infinity>(), step.scale});
    if (moved < cfg.step_tol) {
      res.converged = true;
      break;
    }
  }

  res.theta_hat = theta;
  res.d_hat = spec.build(theta);
  res.alpha_hat = state.alpha_hat;
  res.omega = state.omega;
  res.loglik = loglik;
  res.information = expected_information(stats, state, spec, cfg.information);
  res.blups = estimate_all_random_effects(stats, state);
  return res;
}

}  // namespace rcml
