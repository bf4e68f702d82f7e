#ifndef AFTPIC_BASIS_HPP_
#define AFTPIC_BASIS_HPP_

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aftpic/errors.hpp"
#include "aftpic/model.hpp"

namespace aftpic {

namespace detail {

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Phi(a) - Phi(b) without cancellation when both arguments sit in the upper tail.
inline double normal_cdf_diff(double a, double b) {
  if (a > 0.0 && b > 0.0)
    return 0.5 * (std::erfc(b / std::numbers::sqrt2) - std::erfc(a / std::numbers::sqrt2));
  return normal_cdf(a) - normal_cdf(b);
}

}  // namespace detail

/// Gaussian basis on the kappa scale: psi_u(k) = phi((k - mu_u) / sigma_u) / sigma_u.
/// [d1, d2] is the integration range of the roughness penalty.
class BasisConfig {
 public:
  BasisConfig() = default;

  BasisConfig(Vector mu, Vector sigma, double d1, double d2)
      : mu_(std::move(mu)), sigma_(std::move(sigma)), d1_(d1), d2_(d2) {
    if (mu_.size() < 1) throw InvalidInput("basis needs m >= 1");
    if (mu_.size() != sigma_.size()) throw DimensionError("basis: mu and sigma sizes differ");
    for (Eigen::Index u = 0; u < mu_.size(); ++u) {
      if (!(sigma_[u] > 0.0) || !std::isfinite(sigma_[u])) throw InvalidInput("basis: sigma must be > 0");
      if (u > 0 && !(mu_[u] > mu_[u - 1])) throw InvalidInput("basis: knots must be strictly increasing");
    }
    if (!(d1_ < d2_)) throw InvalidInput("basis: requires d1 < d2");
    anchor_.resize(mu_.size());
    for (Eigen::Index u = 0; u < mu_.size(); ++u) anchor_[u] = -mu_[u] / sigma_[u];
  }

  Eigen::Index m() const { return mu_.size(); }
  const Vector& mu() const { return mu_; }
  const Vector& sigma() const { return sigma_; }
  double d1() const { return d1_; }
  double d2() const { return d2_; }

  void check_index(Eigen::Index u) const {
    if (u < 0 || u >= m())
      throw std::out_of_range("basis index " + std::to_string(u) + " out of range [0, " +
                              std::to_string(m()) + ")");
  }

  double psi(Eigen::Index u, double k) const {
    check_index(u);
    return detail::normal_pdf((k - mu_[u]) / sigma_[u]) / sigma_[u];
  }

  /// Integral of psi_u over [0, k].
  double Psi(Eigen::Index u, double k) const {
    check_index(u);
    if (k <= 0.0) return 0.0;
    return detail::normal_cdf_diff((k - mu_[u]) / sigma_[u], anchor_[u]);
  }

  double psi_d1(Eigen::Index u, double k) const {
    const double s2 = sigma_[u] * sigma_[u];
    return -psi(u, k) * (k - mu_[u]) / s2;
  }

  double psi_d2(Eigen::Index u, double k) const {
    const double s2 = sigma_[u] * sigma_[u];
    const double d = k - mu_[u];
    return psi(u, k) * (d * d / (s2 * s2) - 1.0 / s2);
  }

 private:
  Vector mu_;
  Vector sigma_;
  Vector anchor_;
  double d1_ = 0.0;
  double d2_ = 1.0;
};

/// All basis quantities at one kappa.
struct BasisEval {
  Vector psi;
  Vector Psi;
  Vector dpsi;
  Vector d2psi;
};

inline BasisEval evaluate_basis(const BasisConfig& cfg, double k, bool with_d2 = true) {
  const Eigen::Index m = cfg.m();
  BasisEval e;
  e.psi.resize(m);
  e.Psi.resize(m);
  e.dpsi.resize(m);
  if (with_d2) e.d2psi.resize(m);
  for (Eigen::Index u = 0; u < m; ++u) {
    const double s = cfg.sigma()[u];
    const double d = k - cfg.mu()[u];
    const double v = detail::normal_pdf(d / s) / s;
    e.psi[u] = v;
    e.Psi[u] = k <= 0.0 ? 0.0 : detail::normal_cdf_diff(d / s, -cfg.mu()[u] / s);
    e.dpsi[u] = -v * d / (s * s);
    if (with_d2) e.d2psi[u] = v * (d * d / (s * s * s * s) - 1.0 / (s * s));
  }
  return e;
}

inline void check_theta(const Vector& theta) {
  for (Eigen::Index u = 0; u < theta.size(); ++u)
    if (!(theta[u] >= 0.0)) throw InvalidInput("theta must be nonnegative (entry " + std::to_string(u) + ")");
}

inline void check_theta(const BasisConfig& cfg, const Vector& theta) {
  if (theta.size() != cfg.m()) throw DimensionError("theta size does not match basis size");
  check_theta(theta);
}

inline double baseline_hazard(const BasisConfig& cfg, const Vector& theta, double k) {
  check_theta(cfg, theta);
  return evaluate_basis(cfg, k, false).psi.dot(theta);
}

inline double baseline_cumhaz(const BasisConfig& cfg, const Vector& theta, double k) {
  check_theta(cfg, theta);
  return evaluate_basis(cfg, k, false).Psi.dot(theta);
}

inline double baseline_hazard_d1(const BasisConfig& cfg, const Vector& theta, double k) {
  check_theta(cfg, theta);
  return evaluate_basis(cfg, k, false).dpsi.dot(theta);
}

inline double baseline_hazard_d2(const BasisConfig& cfg, const Vector& theta, double k) {
  check_theta(cfg, theta);
  return evaluate_basis(cfg, k, true).d2psi.dot(theta);
}

/// m = round(cbrt(n)), at least 1.
inline Eigen::Index default_basis_count(std::size_t n) {
  return std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::lround(std::cbrt(static_cast<double>(n)))));
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double level) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * level;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Knots at quantile levels j/(m+1) of the kappa values; widths are 2/3 of the
/// wider neighbouring knot gap; [d1, d2] spans the values.
inline BasisConfig knot_placement(std::span<const double> kappa_values, Eigen::Index m) {
  if (m < 1) throw InvalidInput("knot_placement: m must be >= 1");
  std::vector<double> sorted(kappa_values.begin(), kappa_values.end());
  for (double v : sorted)
    if (!std::isfinite(v)) throw InvalidInput("knot_placement: non-finite kappa value");
  std::sort(sorted.begin(), sorted.end());
  Eigen::Index n_distinct = sorted.empty() ? 0 : 1;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i] != sorted[i - 1]) ++n_distinct;
  if (n_distinct < std::max<Eigen::Index>(m, 2))
    throw InvalidInput("knot_placement: need at least " + std::to_string(std::max<Eigen::Index>(m, 2)) +
                       " distinct kappa values, got " + std::to_string(n_distinct));

  Vector mu(m);
  for (Eigen::Index j = 0; j < m; ++j)
    mu[j] = quantile_sorted(sorted, static_cast<double>(j + 1) / static_cast<double>(m + 1));
  for (Eigen::Index j = 1; j < m; ++j)
    if (!(mu[j] > mu[j - 1]))
      throw InvalidInput("knot_placement: kappa values too concentrated for " + std::to_string(m) + " knots");

  const double d1 = sorted.front();
  const double d2 = sorted.back();
  Vector sigma(m);
  if (m == 1) {
    sigma[0] = (2.0 / 3.0) * std::max(mu[0] - d1, d2 - mu[0]);
  } else {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double left = j > 0 ? mu[j] - mu[j - 1] : 0.0;
      const double right = j + 1 < m ? mu[j + 1] - mu[j] : 0.0;
      sigma[j] = (2.0 / 3.0) * std::max(left, right);
    }
  }
  return BasisConfig(std::move(mu), std::move(sigma), d1, d2);
}

/// Gauss-Legendre nodes and weights on [-1, 1].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline QuadratureRule gauss_legendre(int n) {
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  return rule;
}

/// Composite quadrature panels: [d1, d2] split at every knot inside it.
inline std::vector<double> penalty_panels(const BasisConfig& cfg) {
  std::vector<double> edges{cfg.d1()};
  for (Eigen::Index u = 0; u < cfg.m(); ++u)
    if (cfg.mu()[u] > cfg.d1() && cfg.mu()[u] < cfg.d2()) edges.push_back(cfg.mu()[u]);
  edges.push_back(cfg.d2());
  return edges;
}

inline constexpr int kPenaltyNodesPerPanel = 50;

/// R[u][v] = integral over [d1, d2] of psi_u'' psi_v''; symmetrized and
/// clipped to be positive semidefinite.
inline Matrix penalty_matrix(const BasisConfig& cfg, int nodes_per_panel = kPenaltyNodesPerPanel) {
  if (!(cfg.d1() < cfg.d2())) throw InvalidInput("penalty_matrix: requires d1 < d2");
  const Eigen::Index m = cfg.m();
  const QuadratureRule rule = gauss_legendre(nodes_per_panel);
  const std::vector<double> edges = penalty_panels(cfg);
  Matrix R = Matrix::Zero(m, m);
  for (std::size_t panel = 0; panel + 1 < edges.size(); ++panel) {
    const double half = 0.5 * (edges[panel + 1] - edges[panel]);
    const double mid = 0.5 * (edges[panel + 1] + edges[panel]);
    for (int i = 0; i < nodes_per_panel; ++i) {
      const double s = mid + half * rule.nodes[i];
      const BasisEval e = evaluate_basis(cfg, s, true);
      R.noalias() += (half * rule.weights[i]) * e.d2psi * e.d2psi.transpose();
    }
  }
  R = 0.5 * (R + R.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(R);
  if (eig.eigenvalues().minCoeff() < 0.0) {
    Vector clipped = eig.eigenvalues().cwiseMax(0.0);
    R = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    R = 0.5 * (R + R.transpose()).eval();
  }
  return R;
}

}  // namespace aftpic

#endif
