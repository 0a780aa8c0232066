#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <thread>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "rcml/error.hpp"

namespace rcml {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative rank tolerance: a singular value s is treated as zero when
/// s <= s_max * tol * max(rows, cols).
inline constexpr double kDefaultRankTol = 1e-10;

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Throws NotSymmetric when max|m - m^t| exceeds tol * max(1, max|m|).
inline void require_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::not_symmetric, "matrix is not square");
  }
  const double asym = max_abs(m - m.transpose());
  if (asym > tol * std::max(1.0, max_abs(m))) {
    throw Error(ErrorCode::not_symmetric, "asymmetry " + std::to_string(asym) + " exceeds tolerance");
  }
}

/// Eigendecomposition of a symmetric matrix with a numerical-rank cut.
/// Eigenvalues with |lambda| <= threshold are treated as zero.
class SymmetricSpectrum {
 public:
  SymmetricSpectrum() = default;

  SymmetricSpectrum(const Matrix& m, double tol) {
    const Matrix sym = 0.5 * (m + m.transpose());
    const auto n = sym.rows();
    if (n == 0) return;
    Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
    values_ = solver.eigenvalues();
    vectors_ = solver.eigenvectors();
    threshold_ = values_.cwiseAbs().maxCoeff() * tol * static_cast<double>(n);
  }

  const Vector& values() const { return values_; }
  const Matrix& vectors() const { return vectors_; }
  double threshold() const { return threshold_; }

  bool is_nonzero(Eigen::Index i) const { return std::abs(values_(i)) > threshold_; }

  int rank() const {
    int r = 0;
    for (Eigen::Index i = 0; i < values_.size(); ++i) r += is_nonzero(i) ? 1 : 0;
    return r;
  }

  Matrix pseudo_inverse() const {
    const auto n = values_.size();
    Vector inv = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (is_nonzero(i)) inv(i) = 1.0 / values_(i);
    }
    Matrix out = vectors_ * inv.asDiagonal() * vectors_.transpose();
    return 0.5 * (out + out.transpose());
  }

  /// Orthonormal basis (n x rank) of the range.
  Matrix range_basis() const {
    Matrix basis(values_.size(), rank());
    Eigen::Index c = 0;
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
      if (is_nonzero(i)) basis.col(c++) = vectors_.col(i);
    }
    return basis;
  }

  Matrix projector() const {
    const Matrix basis = range_basis();
    return basis * basis.transpose();
  }

  /// Sum of logs of the eigenvalues above threshold. Only meaningful for PSD input.
  double pseudo_logdet() const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
      if (is_nonzero(i) && values_(i) > 0.0) acc += std::log(values_(i));
    }
    return acc;
  }

 private:
  Vector values_;
  Matrix vectors_;
  double threshold_ = 0.0;
};

/// Moore-Penrose inverse of a symmetric matrix.
inline Matrix pseudo_inverse(const Matrix& m, double tol = kDefaultRankTol) {
  require_symmetric(m, tol);
  return SymmetricSpectrum(m, tol).pseudo_inverse();
}

/// Orthogonal projector onto the column space of a symmetric PSD matrix.
inline Matrix projector(const Matrix& m, double tol = kDefaultRankTol) {
  require_symmetric(m, tol);
  return SymmetricSpectrum(m, tol).projector();
}

/// Neumaier-compensated accumulator for scalars and Eigen dense objects.
template <class T>
class CompensatedSum {
 public:
  CompensatedSum() = default;
  explicit CompensatedSum(const T& zero) : sum_(zero), comp_(zero) {}

  void add(const T& x) {
    if constexpr (std::is_arithmetic_v<T>) {
      const T t = sum_ + x;
      if (std::abs(sum_) >= std::abs(x)) {
        comp_ += (sum_ - t) + x;
      } else {
        comp_ += (x - t) + sum_;
      }
      sum_ = t;
    } else {
      const T t = sum_ + x;
      const auto big = (sum_.array().abs() >= x.array().abs());
      comp_.array() += big.select((sum_ - t).array() + x.array(), (x - t).array() + sum_.array());
      sum_ = t;
    }
  }

  T value() const { return sum_ + comp_; }

 private:
  T sum_{};
  T comp_{};
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers with static
/// chunking. If several indices throw, the exception of the lowest index is
/// rethrown so failures are reported deterministically.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, 256));
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t used = std::min(workers, n);
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    pool.reserve(used);
    for (std::size_t w = 0; w < used; ++w) {
      pool.emplace_back([&, w] {
        const std::size_t begin = n * w / used;
        const std::size_t end = n * (w + 1) / used;
        for (std::size_t i = begin; i < end; ++i) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
            return;
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace rcml
