#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "aftpic/model.hpp"
#include "oracles.hpp"

using namespace aftpic;

namespace {

SubjectRecord subject(Vector x, StepTrajectory z) {
  SubjectRecord s;
  s.id = "a";
  s.x = std::move(x);
  s.z = std::move(z);
  s.kind = CensoringKind::Right;
  s.y_left = 5.0;
  s.y_right = kInf;
  return s;
}

ModelParams params(Vector beta, Vector gamma) { return {std::move(beta), std::move(gamma), Vector()}; }

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

StepTrajectory step_at(double tau) { return StepTrajectory::change_point(tau, vec({0.0}), vec({1.0})); }

}  // namespace

TEST(StepTrajectory, EvaluatesRightContinuous) {
  const StepTrajectory z = step_at(0.2);
  EXPECT_EQ(z.segments(), 2u);
  EXPECT_EQ(z.value_at(0.0)[0], 0.0);
  EXPECT_EQ(z.value_at(0.19999)[0], 0.0);
  EXPECT_EQ(z.value_at(0.2)[0], 1.0);
  EXPECT_EQ(z.value_at(100.0)[0], 1.0);
}

TEST(StepTrajectory, RejectsBadBreakpoints) {
  EXPECT_THROW(StepTrajectory({0.5}, Matrix::Zero(1, 1)), InvalidInput);
  EXPECT_THROW(StepTrajectory({0.0, 1.0, 1.0}, Matrix::Zero(3, 1)), InvalidInput);
  EXPECT_THROW(StepTrajectory({0.0, 1.0}, Matrix::Zero(1, 1)), InvalidInput);
}

TEST(StepTrajectory, ChangePointAtZeroIsSingleSegment) {
  const StepTrajectory z = step_at(0.0);
  EXPECT_EQ(z.segments(), 1u);
  EXPECT_EQ(z.value_at(0.0)[0], 1.0);
}

TEST(Kappa, IdentityAtZeroCoefficients) {
  const auto s = subject(vec({0.7}), step_at(1.3));
  EXPECT_DOUBLE_EQ(kappa(s, params(vec({0.0}), vec({0.0})), 3.7), 3.7);
}

TEST(Kappa, FixedCovariateMultiplier) {
  const auto s = subject(vec({1.0}), StepTrajectory::zeros(0));
  EXPECT_NEAR(kappa(s, params(vec({1.0}), Vector()), 2.0), 2.0 * std::exp(-1.0), 1e-15);
}

TEST(Kappa, ChangePointMatchesQuadrature) {
  const auto s = subject(vec({0.0}), step_at(0.2));
  const auto pr = params(vec({0.0}), vec({-0.1}));
  const double expect = 0.2 + std::exp(0.1) * 0.8;
  EXPECT_NEAR(kappa(s, pr, 1.0), expect, 1e-14);
  EXPECT_NEAR(oracle::kappa_quadrature(s, pr.beta, pr.gamma, 1.0), expect, 1e-10);
}

TEST(Kappa, ZeroAtOriginAndStrictlyIncreasing) {
  std::mt19937_64 rng(3);
  const Dataset d = oracle::random_dataset(rng, 20, 2, 2);
  const auto pr = params(vec({0.4, -0.8}), vec({0.3, -1.1}));
  for (const auto& s : d.subjects) {
    EXPECT_EQ(kappa(s, pr, 0.0), 0.0);
    double prev = 0.0;
    for (int i = 1; i <= 300; ++i) {
      const double t = 0.01 * i;
      const double k = kappa(s, pr, t);
      EXPECT_GT(k, prev);
      prev = k;
    }
  }
}

TEST(Kappa, ContinuousAcrossBreakpoints) {
  const auto s = subject(vec({0.0}), step_at(0.5));
  const auto pr = params(vec({0.0}), vec({-2.0}));
  EXPECT_NEAR(kappa(s, pr, 0.5 - 1e-12), kappa(s, pr, 0.5 + 1e-12), 1e-10);
}

TEST(Kappa, ScalesUnderBetaShift) {
  std::mt19937_64 rng(5);
  const Dataset d = oracle::random_dataset(rng, 10, 3, 1);
  const auto pr = params(vec({0.2, -0.3, 0.5}), vec({0.4}));
  for (const auto& s : d.subjects) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      auto shifted = pr;
      shifted.beta[j] += 0.7;
      EXPECT_NEAR(kappa(s, shifted, 1.3), std::exp(-0.7 * s.x[j]) * kappa(s, pr, 1.3), 1e-13);
    }
  }
}

TEST(Kappa, MatchesQuadratureOnRandomTrajectories) {
  std::mt19937_64 rng(7);
  const Dataset d = oracle::random_dataset(rng, 25, 2, 2);
  const auto pr = params(vec({0.5, -0.2}), vec({-0.6, 0.9}));
  for (const auto& s : d.subjects) {
    for (double t : {0.05, 0.4, 1.1, 2.5}) {
      const double k = kappa(s, pr, t);
      EXPECT_NEAR(k, oracle::kappa_quadrature(s, pr.beta, pr.gamma, t), 1e-9 * std::max(1.0, k));
    }
  }
}

TEST(Kappa, DimensionMismatchThrows) {
  const auto s = subject(vec({1.0, 2.0}), step_at(0.3));
  EXPECT_THROW(kappa(s, params(vec({1.0}), vec({0.0})), 1.0), DimensionError);
  EXPECT_THROW(kappa(s, params(vec({1.0, 0.0}), vec({0.0, 0.0})), 1.0), DimensionError);
  EXPECT_THROW(kappa_grad_gamma(s, params(vec({1.0}), vec({0.0})), 1.0), DimensionError);
  EXPECT_THROW(kappa_hess_gamma(s, params(vec({1.0}), vec({0.0})), 1.0), DimensionError);
}

TEST(KappaGradBeta, IsMinusKappaTimesX) {
  const auto s = subject(vec({1.0, 0.0}), step_at(0.3));
  const Vector g = kappa_grad_beta(s, params(vec({0.0, 0.0}), vec({0.0})), 2.0);
  EXPECT_NEAR(g[0], -2.0, 1e-15);
  EXPECT_EQ(g[1], 0.0);
  const auto s0 = subject(vec({0.0, 0.0}), step_at(0.3));
  EXPECT_TRUE(kappa_grad_beta(s0, params(vec({0.3, 1.0}), vec({0.2})), 1.5).isZero());
}

TEST(KappaGradGamma, ZeroForZeroTrajectory) {
  const auto s = subject(vec({1.0}), StepTrajectory::zeros(2));
  EXPECT_TRUE(kappa_grad_gamma(s, params(vec({0.5}), vec({0.1, -0.4})), 2.0).isZero());
  EXPECT_TRUE(kappa_hess_gamma(s, params(vec({0.5}), vec({0.1, -0.4})), 2.0).isZero());
}

TEST(KappaGradGamma, ChangePointHandValue) {
  const auto s = subject(vec({0.0}), step_at(0.2));
  const auto pr = params(vec({0.0}), vec({0.0}));
  EXPECT_NEAR(kappa_grad_gamma(s, pr, 1.0)[0], -0.8, 1e-15);
  EXPECT_NEAR(kappa_hess_gamma(s, pr, 1.0)(0, 0), 0.8, 1e-15);
}

TEST(KappaDerivatives, MatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> N(0.0, 0.5);
  for (int rep = 0; rep < 60; ++rep) {
    const Dataset d = oracle::random_dataset(rng, 4, 3, 2);
    ModelParams pr = params(vec({N(rng), N(rng), N(rng)}), vec({N(rng), N(rng)}));
    for (const auto& s : d.subjects) {
      const double t = 0.1 + 2.0 * std::abs(N(rng));
      auto kb = [&](const Vector& b) { return kappa(s, params(b, pr.gamma), t); };
      auto kg = [&](const Vector& g) { return kappa(s, params(pr.beta, g), t); };
      const Vector fb = oracle::fd_gradient(kb, pr.beta);
      const Vector fg = oracle::fd_gradient(kg, pr.gamma);
      const Vector ab = kappa_grad_beta(s, pr, t);
      const Vector ag = kappa_grad_gamma(s, pr, t);
      for (Eigen::Index j = 0; j < 3; ++j) EXPECT_TRUE(oracle::close(ab[j], fb[j], 1e-6, 1e-3, 1e-8));
      for (Eigen::Index r = 0; r < 2; ++r) EXPECT_TRUE(oracle::close(ag[r], fg[r], 1e-6, 1e-3, 1e-8));

      const Matrix fh = oracle::fd_hessian(kg, pr.gamma);
      const Matrix ah = kappa_hess_gamma(s, pr, t);
      EXPECT_LE((ah - ah.transpose()).cwiseAbs().maxCoeff(), 1e-14);
      EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(ah).eigenvalues().minCoeff(), -1e-12);
      for (Eigen::Index i = 0; i < 2; ++i)
        for (Eigen::Index j = 0; j < 2; ++j) EXPECT_TRUE(oracle::close(ah(i, j), fh(i, j), 1e-4, 1e-3, 1e-6));
    }
  }
}

TEST(SubjectRecord, YStarAndValidation) {
  SubjectRecord s = subject(vec({0.0}), step_at(0.2));
  EXPECT_EQ(s.y_star(), 5.0);
  s.kind = CensoringKind::Interval;
  s.y_left = 1.0;
  s.y_right = 2.0;
  EXPECT_EQ(s.y_star(), 2.0);
  EXPECT_NO_THROW(s.validate());
  s.y_left = 3.0;
  EXPECT_THROW(s.validate(), InvalidInput);
}

TEST(CensoringKind, StringRoundTrip) {
  for (auto k : {CensoringKind::Event, CensoringKind::Left, CensoringKind::Right, CensoringKind::Interval})
    EXPECT_EQ(censoring_kind_from_string(to_string(k)), k);
  EXPECT_THROW(censoring_kind_from_string("sometimes"), InvalidInput);
}
