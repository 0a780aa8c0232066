#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace rcml;
using rcml::testing::make_individual;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// X_k = Z_k = [1; 1], y_1 = [1, 3], y_2 = [2, 4].
Dataset two_means() {
  Dataset data;
  Vector y1(2), y2(2);
  y1 << 1.0, 3.0;
  y2 << 2.0, 4.0;
  data.individuals.push_back(make_individual("one", Matrix::Ones(2, 1), Matrix::Ones(2, 1), y1));
  data.individuals.push_back(make_individual("two", Matrix::Ones(2, 1), Matrix::Ones(2, 1), y2));
  return data;
}

}  // namespace

TEST(ProjectD, FullRankLeavesDUnchanged) {
  rcml::testing::Rng rng(1);
  const Matrix z = rng.normal_matrix(5, 2);
  const auto s = compute_stats(make_individual("f", z, z, rng.normal_vector(5)));
  const Matrix d = rng.psd(2, false);
  EXPECT_LT(max_abs(project_d(d, s) - d), 1e-12);
  EXPECT_TRUE(project_d(Matrix::Zero(2, 2), s).isZero());
}

TEST(ProjectD, RankOneGram) {
  Matrix z(3, 2);
  z << 1.0, 1.0, 2.0, 2.0, -1.0, -1.0;
  const auto s = compute_stats(make_individual("r1", z, z, Vector::Ones(3)));
  Matrix d(2, 2);
  d << 2.0, 0.5, 0.5, 1.0;
  // P = 1/2 [[1,1],[1,1]], so P D P = (a + 2b + c)/4 * [[1,1],[1,1]]
  const double c = (2.0 + 2.0 * 0.5 + 1.0) / 4.0;
  const Matrix expected = Matrix::Constant(2, 2, c);
  const Matrix dk = project_d(d, s);
  EXPECT_LT(max_abs(dk - expected), 1e-12);
  EXPECT_LT(max_abs(project_d(dk, s) - dk), 1e-12);
}

TEST(MK, IdentityDesign) {
  const auto s = compute_stats(make_individual("i", Matrix::Identity(2, 2), Matrix::Identity(2, 2), Vector::Ones(2)));
  const Matrix m = m_k(s, Matrix::Identity(2, 2), 1.0);
  EXPECT_LT(max_abs(m - 0.5 * Matrix::Identity(2, 2)), 1e-14);
}

TEST(MK, ZeroDispersionIsScaledGram) {
  rcml::testing::Rng rng(2);
  const Matrix x = rng.normal_matrix(6, 3);
  const auto s = compute_stats(make_individual("z", x, x.leftCols(2), rng.normal_vector(6)));
  const Matrix m = m_k(s, Matrix::Zero(2, 2), 1.7);
  EXPECT_LT(rcml::testing::rel_diff(m, s.xtx / 1.7), 1e-12);
}

TEST(MK, MatchesDenseInverseOnRandomInstances) {
  rcml::testing::Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = rcml::testing::random_instance(rng);
    for (std::size_t k = 0; k < inst.data.size(); ++k) {
      const auto& ind = inst.data.individuals[k];
      const double s2 = inst.sigma2(static_cast<Eigen::Index>(k));
      const auto s = compute_stats(ind);
      const Matrix dense = ind.x.transpose() * rcml::testing::dense_sigma(ind, inst.d, s2).inverse() * ind.x;
      const Matrix reduced = m_k(s, project_d(inst.d, s), s2);
      EXPECT_LE(max_abs(dense - reduced), 1e-8 * std::max(1.0, max_abs(dense)));
    }
  }
}

TEST(SigmaInverseDense, ZeroBlocks) {
  const Matrix inv = sigma_inverse_dense(Matrix::Zero(3, 1), 2.0, Matrix::Zero(1, 1));
  EXPECT_LT(max_abs(inv - 0.5 * Matrix::Identity(3, 3)), 1e-15);
}

TEST(SigmaInverseDense, Scalar) {
  const Matrix inv = sigma_inverse_dense(Matrix::Ones(1, 1), 1.5, Matrix::Constant(1, 1, 0.7));
  EXPECT_NEAR(inv(0, 0), 1.0 / (1.5 + 0.7), 1e-15);
}

TEST(SigmaInverseDense, WoodburyProductIsIdentity) {
  rcml::testing::Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = rcml::testing::random_instance(rng);
    const auto& ind = inst.data.individuals.front();
    const double s2 = inst.sigma2(0);
    const Matrix inv = sigma_inverse_dense(ind.z, s2, inst.d);
    const Matrix prod = inv * rcml::testing::dense_sigma(ind, inst.d, s2);
    EXPECT_LT(max_abs(prod - Matrix::Identity(ind.n_obs(), ind.n_obs())), 1e-9);
  }
}

TEST(GlsAlpha, SingleIndividual) {
  rcml::testing::Rng rng(5);
  const Matrix x = rng.normal_matrix(5, 2);
  const auto s = compute_stats(make_individual("a", x, x, rng.normal_vector(5)));
  const Matrix m = m_k(s, 0.3 * Matrix::Identity(2, 2), 1.0);
  const auto g = gls_alpha({s}, {m});
  EXPECT_LT((g.alpha - s.alpha).norm(), 1e-12);
  EXPECT_LT(rcml::testing::rel_diff(g.omega, m.inverse()), 1e-12);
}

TEST(GlsAlpha, EqualWeightsAverage) {
  const auto data = two_means();
  const auto stats = compute_all_stats(data);
  const Matrix m = m_k(stats[0], Matrix::Zero(1, 1), 1.0);
  const auto g = gls_alpha(stats, {m, m});
  EXPECT_NEAR(g.alpha(0), 2.5, 1e-14);
  EXPECT_NEAR(g.omega(0, 0), 0.25, 1e-14);
}

TEST(GlsAlpha, MatchesDenseGls) {
  rcml::testing::Rng rng(6);
  int done = 0;
  while (done < 100) {
    auto inst = rcml::testing::random_instance(rng, {3, 12, 3, true});
    if (inst.data.size() != 3) continue;
    const auto stats = compute_all_stats(inst.data);
    const auto st = evaluate_state(stats, inst.d, inst.sigma2);
    const auto dense = rcml::testing::dense_gls(inst.data, inst.d, inst.sigma2);
    EXPECT_LE((st.alpha_hat - dense.alpha).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, dense.alpha.norm()));
    EXPECT_LE(max_abs(st.omega - dense.omega), 1e-9 * std::max(1.0, max_abs(dense.omega)));
    ++done;
  }
}

TEST(GlsAlpha, SingularInformationThrows) {
  const auto stats = compute_all_stats(two_means());
  try {
    gls_alpha(stats, {Matrix::Zero(1, 1), Matrix::Zero(1, 1)});
    FAIL() << "expected SingularInformation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::singular_information);
  }
}

TEST(LogdetSigma, ZeroDispersion) {
  rcml::testing::Rng rng(7);
  const Matrix x = rng.normal_matrix(7, 2);
  const auto s = compute_stats(make_individual("a", x, x, rng.normal_vector(7)));
  EXPECT_NEAR(logdet_sigma_k(s, Matrix::Zero(2, 2), 1.3), 7.0 * std::log(1.3), 1e-12);
}

TEST(LogdetSigma, RankOneUpdate) {
  const auto s = compute_stats(make_individual("a", Matrix::Ones(2, 1), Matrix::Ones(2, 1), Vector::Ones(2)));
  const double d = 0.8;
  EXPECT_NEAR(logdet_sigma_k(s, Matrix::Constant(1, 1, d), 1.0), std::log(1.0 + 2.0 * d), 1e-14);
}

TEST(LogdetSigma, MatchesDenseDeterminant) {
  rcml::testing::Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = rcml::testing::random_instance(rng);
    for (std::size_t k = 0; k < inst.data.size(); ++k) {
      const auto& ind = inst.data.individuals[k];
      const double s2 = inst.sigma2(static_cast<Eigen::Index>(k));
      Eigen::LLT<Matrix> llt(rcml::testing::dense_sigma(ind, inst.d, s2));
      const Matrix lower = llt.matrixL();
      const double dense = 2.0 * lower.diagonal().array().log().sum();
      EXPECT_LE(std::abs(logdet_sigma_k(compute_stats(ind), inst.d, s2) - dense), 1e-9 * std::max(1.0, std::abs(dense)));
    }
  }
}

TEST(LogdetSigma, NegativeDeterminantThrows) {
  const auto s = compute_stats(make_individual("neg", Matrix::Ones(2, 1), Matrix::Ones(2, 1), Vector::Ones(2)));
  try {
    logdet_sigma_k(s, Matrix::Constant(1, 1, -1.0), 1.0);  // 1 + 2 * (-1) < 0
    FAIL() << "expected NonPositiveDeterminant";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_positive_determinant);
  }
}

TEST(ResidualQuadratic, Degenerate) {
  Matrix x = Matrix::Identity(2, 2);
  const auto s = compute_stats(make_individual("sq", x, x, Vector::Ones(2)));
  EXPECT_NEAR(residual_quadratic(s, Matrix::Identity(2, 2), s.alpha, 1.0), 0.0, 1e-20);
}

TEST(ResidualQuadratic, ZeroDispersionIsScaledSse) {
  rcml::testing::Rng rng(9);
  const Matrix x = rng.normal_matrix(6, 2);
  const Vector y = rng.normal_vector(6);
  const auto s = compute_stats(make_individual("a", x, x, y));
  const Vector alpha = rng.normal_vector(2);
  const double s2 = 0.7;
  EXPECT_NEAR(residual_quadratic(s, m_k(s, Matrix::Zero(2, 2), s2), alpha, s2), (y - x * alpha).squaredNorm() / s2,
              1e-11);
}

TEST(ResidualQuadratic, MatchesDenseQuadraticForm) {
  rcml::testing::Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = rcml::testing::random_instance(rng);
    const auto stats = compute_all_stats(inst.data);
    const auto st = evaluate_state(stats, inst.d, inst.sigma2);
    for (std::size_t k = 0; k < stats.size(); ++k) {
      const auto& ind = inst.data.individuals[k];
      const double s2 = inst.sigma2(static_cast<Eigen::Index>(k));
      const Vector r = ind.y - ind.x * st.alpha_hat;
      const double dense = r.dot(rcml::testing::dense_sigma(ind, inst.d, s2).llt().solve(r));
      EXPECT_LE(std::abs(residual_quadratic(stats[k], st.m[k], st.alpha_hat, s2) - dense),
                1e-8 * std::max(1.0, dense));
    }
  }
}

TEST(Reml, HandValueZeroDispersion) {
  const auto data = two_means();
  const auto stats = compute_all_stats(data);
  EXPECT_NEAR(stats[0].alpha(0), 2.0, 1e-14);
  EXPECT_NEAR(stats[1].alpha(0), 3.0, 1e-14);
  const Vector s2 = Vector::Ones(2);
  const auto st = evaluate_state(stats, Matrix::Zero(1, 1), s2);
  EXPECT_NEAR(st.alpha_hat(0), 2.5, 1e-14);
  // C(3) + ln 2 - ln 4 / 2 - (2 + 2 + 2 * 0.25 * 2) / 2
  const double hand = -1.5 * kLog2Pi - 2.5;
  EXPECT_NEAR(reml_reduced(stats, st), hand, 1e-12);
  EXPECT_NEAR(reml_full(data, Matrix::Zero(1, 1), s2), hand, 1e-12);
}

TEST(Reml, HandValueUnitDispersion) {
  const auto data = two_means();
  const Vector s2 = Vector::Ones(2);
  const Matrix d = Matrix::Ones(1, 1);
  // Sigma_k = I + 11^t: det 3, M_k = 2/3, alpha = 2.5
  const double hand = -1.5 * kLog2Pi + std::log(2.0) - std::log(3.0) - 0.5 * std::log(4.0 / 3.0) - 0.5 * (4.0 + 1.0 / 3.0);
  const double full = reml_full(data, d, s2);
  const double reduced = reml_reduced(compute_all_stats(data), d, s2);
  EXPECT_NEAR(full, hand, 1e-12);
  EXPECT_NEAR(reduced, full, 1e-10);
}

TEST(Reml, HandValueAtWithinVariances) {
  const auto data = two_means();
  const auto stats = compute_all_stats(data);
  Vector s2(2);
  s2 << *stats[0].sigma2_hat, *stats[1].sigma2_hat;
  ASSERT_NEAR(s2(0), 2.0, 1e-14);
  // term by term: C + ln2 - ln2 - ln2 - ln2/2 - 1 - 1/4
  const double hand = -1.5 * kLog2Pi - 1.5 * std::log(2.0) - 1.25;
  EXPECT_NEAR(reml_reduced(stats, Matrix::Zero(1, 1), s2), hand, 1e-12);
  EXPECT_NEAR(reml_full(data, Matrix::Zero(1, 1), s2), hand, 1e-12);
}

TEST(Reml, PermutationInvariant) {
  rcml::testing::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = rcml::testing::random_instance(rng);
    const double before = reml_reduced(compute_all_stats(inst.data), inst.d, inst.sigma2);
    std::vector<std::size_t> order(inst.data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = order.size() - 1 - i;
    Dataset permuted;
    Vector s2(inst.sigma2.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      permuted.individuals.push_back(inst.data.individuals[order[i]]);
      s2(static_cast<Eigen::Index>(i)) = inst.sigma2(static_cast<Eigen::Index>(order[i]));
    }
    const double after = reml_reduced(compute_all_stats(permuted), inst.d, s2);
    EXPECT_LT(std::abs(after - before), 1e-12 * std::max(1.0, std::abs(before)));
  }
}

TEST(Reml, ReducedEqualsFullOnRandomInstances) {
  rcml::testing::Rng rng(12);
  int rank_deficient = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = rcml::testing::random_instance(rng);
    rank_deficient += inst.rank_deficient ? 1 : 0;
    const double full = reml_full(inst.data, inst.d, inst.sigma2);
    const double reduced = reml_reduced(compute_all_stats(inst.data), inst.d, inst.sigma2);
    EXPECT_LE(std::abs(reduced - full), 1e-8 * (1.0 + std::abs(full))) << "trial " << trial;
  }
  EXPECT_GT(rank_deficient, 10);
}

TEST(Reml, FullRejectsIndefiniteSigma) {
  const auto data = two_means();
  try {
    reml_full(data, Matrix::Constant(1, 1, -5.0), Vector::Ones(2));
    FAIL() << "expected NonPositiveDefiniteSigma";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_positive_definite_sigma);
  }
}

TEST(Reml, ThreadedStateIsBitIdentical) {
  rcml::testing::Rng rng(13);
  const auto inst = rcml::testing::random_instance(rng);
  const auto stats = compute_all_stats(inst.data);
  EXPECT_EQ(reml_reduced(stats, inst.d, inst.sigma2, 1), reml_reduced(stats, inst.d, inst.sigma2, 3));
}

TEST(Information, AddingAnIndividualNeverDecreasesEigenvalues) {
  rcml::testing::Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = rcml::testing::random_instance(rng);
    const auto stats = compute_all_stats(inst.data);
    const auto st = evaluate_state(stats, inst.d, inst.sigma2);
    const auto p = st.omega.rows();
    Matrix running = Matrix::Zero(p, p);
    Vector previous = Vector::Zero(p);
    for (const auto& m : st.m) {
      running += m;
      const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(running).eigenvalues();
      for (Eigen::Index i = 0; i < p; ++i) EXPECT_GE(eig(i), previous(i) - 1e-10 * std::max(1.0, eig.maxCoeff()));
      previous = eig;
    }
  }
}
