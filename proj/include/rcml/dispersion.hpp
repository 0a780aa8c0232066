#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rcml/error.hpp"
#include "rcml/linalg.hpp"

namespace rcml {

enum class DispersionKind { full_symmetric, diagonal, fixed_pattern };

inline constexpr std::string_view to_string(DispersionKind kind) noexcept {
  switch (kind) {
    case DispersionKind::full_symmetric: return "full-symmetric";
    case DispersionKind::diagonal: return "diagonal";
    case DispersionKind::fixed_pattern: return "fixed-pattern";
  }
  return "unknown";
}

/// Linear parameterization D(theta) = sum_i theta_i B_i with constant
/// symmetric basis matrices B_i, so D(0) = 0 and dD/dtheta_i = B_i.
///
/// full-symmetric uses the half-vectorization order (0,0), (1,0), ...,
/// (q-1,0), (1,1), ... with off-diagonal basis entries set in both
/// symmetric positions. diagonal uses the q unit diagonal matrices.
class DispersionSpec {
 public:
  static DispersionSpec full_symmetric(int q) {
    require_dim(q);
    DispersionSpec spec(DispersionKind::full_symmetric, q);
    for (int j = 0; j < q; ++j) {
      for (int i = j; i < q; ++i) {
        Matrix b = Matrix::Zero(q, q);
        b(i, j) = 1.0;
        b(j, i) = 1.0;
        spec.basis_.push_back(std::move(b));
        spec.index_.emplace_back(i, j);
      }
    }
    spec.finish();
    return spec;
  }

  static DispersionSpec diagonal(int q) {
    require_dim(q);
    DispersionSpec spec(DispersionKind::diagonal, q);
    for (int i = 0; i < q; ++i) {
      Matrix b = Matrix::Zero(q, q);
      b(i, i) = 1.0;
      spec.basis_.push_back(std::move(b));
      spec.index_.emplace_back(i, i);
    }
    spec.finish();
    return spec;
  }

  /// User-supplied basis. Each matrix must be symmetric q x q and the set
  /// must be linearly independent.
  static DispersionSpec fixed_pattern(std::vector<Matrix> basis) {
    if (basis.empty()) throw Error(ErrorCode::invalid_config, "fixed-pattern dispersion needs at least one basis matrix");
    const auto q = static_cast<int>(basis.front().rows());
    require_dim(q);
    DispersionSpec spec(DispersionKind::fixed_pattern, q);
    for (auto& b : basis) {
      if (b.rows() != q || b.cols() != q) {
        throw Error(ErrorCode::invalid_config, "fixed-pattern basis matrices must all be " + std::to_string(q) + "x" +
                                                   std::to_string(q));
      }
      if (max_abs(b - b.transpose()) > 0.0) {
        throw Error(ErrorCode::invalid_config, "fixed-pattern basis matrices must be symmetric");
      }
      spec.basis_.push_back(std::move(b));
    }
    spec.finish();
    if (SymmetricSpectrum(spec.gram_, kDefaultRankTol).rank() != spec.n_params()) {
      throw Error(ErrorCode::invalid_config, "fixed-pattern basis matrices are linearly dependent");
    }
    return spec;
  }

  DispersionKind kind() const { return kind_; }
  int dim() const { return q_; }
  int n_params() const { return static_cast<int>(basis_.size()); }
  const Matrix& basis(int i) const { return basis_.at(static_cast<std::size_t>(i)); }
  const std::vector<Matrix>& bases() const { return basis_; }

  Matrix build(const Vector& theta) const {
    if (theta.size() != n_params()) {
      throw Error(ErrorCode::dimension_mismatch, "theta has " + std::to_string(theta.size()) + " entries, expected " +
                                                     std::to_string(n_params()));
    }
    Matrix d = Matrix::Zero(q_, q_);
    for (int i = 0; i < n_params(); ++i) d += theta(i) * basis_[static_cast<std::size_t>(i)];
    return d;
  }

  /// Least-squares coordinates of d in the Frobenius inner product. Exact
  /// for full-symmetric input and for diagonal input under the diagonal kind.
  Vector extract(const Matrix& d) const {
    Vector theta(n_params());
    if (kind_ != DispersionKind::fixed_pattern) {
      for (int i = 0; i < n_params(); ++i) {
        const auto [r, c] = index_[static_cast<std::size_t>(i)];
        theta(i) = r == c ? d(r, c) : 0.5 * (d(r, c) + d(c, r));
      }
      return theta;
    }
    Vector rhs(n_params());
    for (int i = 0; i < n_params(); ++i) rhs(i) = basis_[static_cast<std::size_t>(i)].cwiseProduct(d).sum();
    return gram_.ldlt().solve(rhs);
  }

 private:
  DispersionSpec(DispersionKind kind, int q) : kind_(kind), q_(q) {}

  static void require_dim(int q) {
    if (q < 1) throw Error(ErrorCode::invalid_config, "dispersion dimension must be at least 1");
  }

  void finish() {
    const int r = n_params();
    gram_ = Matrix(r, r);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        gram_(i, j) = basis_[static_cast<std::size_t>(i)].cwiseProduct(basis_[static_cast<std::size_t>(j)]).sum();
      }
    }
  }

  DispersionKind kind_;
  int q_;
  std::vector<Matrix> basis_;
  std::vector<std::pair<int, int>> index_;
  Matrix gram_;
};

}  // namespace rcml
