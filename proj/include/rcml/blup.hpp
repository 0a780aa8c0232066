#pragma once

#include <string>
#include <vector>

#include "rcml/likelihood.hpp"
#include "rcml/stats.hpp"

namespace rcml {

struct RandomEffectEstimate {
  std::string id;
  Vector beta;
};

/// beta_k = D_k [sigma_k^2 F_k + D_k]^- L_k (alpha_k - alpha).
inline Vector estimate_random_effects(const IndividualStats& s, const Matrix& d_k, double sigma2,
                                      const Vector& alpha_hat) {
  return d_k * (restricted_inverse(s, d_k, sigma2) * (s.lmat * (s.alpha - alpha_hat)));
}

inline std::vector<RandomEffectEstimate> estimate_all_random_effects(const std::vector<IndividualStats>& stats,
                                                                     const CovarianceState& st) {
  std::vector<RandomEffectEstimate> out;
  out.reserve(stats.size());
  for (std::size_t k = 0; k < stats.size(); ++k) {
    out.push_back({stats[k].id, st.d_k[k] * (st.g[k] * (stats[k].alpha - st.alpha_hat))});
  }
  return out;
}

}  // namespace rcml
