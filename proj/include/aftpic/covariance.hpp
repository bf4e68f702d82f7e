#ifndef AFTPIC_COVARIANCE_HPP_
#define AFTPIC_COVARIANCE_HPP_

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aftpic/errors.hpp"
#include "aftpic/likelihood.hpp"
#include "aftpic/model.hpp"

namespace aftpic {

struct CovarianceResult {
  /// (p+q+m) square, ordered (beta, gamma, theta); rows/columns of active
  /// theta constraints are exactly zero.
  Matrix full;
  Vector se_beta;
  Vector se_gamma;
  Vector se_theta;
  std::vector<Eigen::Index> active;
  double nu = 0.0;
};

/// theta_u < theta_thresh with dP/dtheta_u < -grad_thresh.
inline std::vector<Eigen::Index> active_constraints(const Vector& theta, const Vector& grad_theta,
                                                    double theta_thresh, double grad_thresh) {
  std::vector<Eigen::Index> active;
  for (Eigen::Index u = 0; u < theta.size(); ++u)
    if (theta[u] < theta_thresh && grad_theta[u] < -grad_thresh) active.push_back(u);
  return active;
}

inline std::string coordinate_name(Eigen::Index idx, Eigen::Index p, Eigen::Index q) {
  if (idx < p) return "beta[" + std::to_string(idx) + "]";
  if (idx < p + q) return "gamma[" + std::to_string(idx - p) + "]";
  return "theta[" + std::to_string(idx - p - q) + "]";
}

/// var = B^-1 (-H) B^-1 with B^-1 = U (U'(-H + h R~) U)^-1 U', where U drops the
/// active theta coordinates and the inverse is zero-padded back.
inline CovarianceResult sandwich_covariance(const Matrix& hessian, const Matrix& R, double h, Eigen::Index p,
                                            Eigen::Index q, const std::vector<Eigen::Index>& active) {
  const Eigen::Index m = R.rows();
  const Eigen::Index d = p + q + m;
  if (hessian.rows() != d || hessian.cols() != d) throw DimensionError("sandwich: Hessian size mismatch");

  std::vector<char> is_active(static_cast<std::size_t>(d), 0);
  for (Eigen::Index u : active) {
    if (u < 0 || u >= m) throw DimensionError("sandwich: active index out of range");
    is_active[static_cast<std::size_t>(p + q + u)] = 1;
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < d; ++j)
    if (!is_active[static_cast<std::size_t>(j)]) keep.push_back(j);
  const auto k = static_cast<Eigen::Index>(keep.size());

  Matrix neg_h = -hessian;
  Matrix penalised = neg_h;
  penalised.bottomRightCorner(m, m) += h * R;

  Matrix reduced(k, k);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b) reduced(a, b) = penalised(keep[a], keep[b]);

  Eigen::FullPivLU<Matrix> lu(reduced);
  if (!lu.isInvertible()) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (reduced + reduced.transpose()));
    const Vector null_dir = eig.eigenvectors().col(0);
    std::ostringstream msg;
    msg << "sandwich: reduced information matrix is singular; near-null direction loads on";
    for (Eigen::Index a = 0; a < k; ++a)
      if (std::abs(null_dir[a]) > 0.1) msg << ' ' << coordinate_name(keep[a], p, q);
    throw SingularMatrix(msg.str());
  }
  const Matrix reduced_inv = lu.inverse();
  Matrix b_inv = Matrix::Zero(d, d);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b) b_inv(keep[a], keep[b]) = reduced_inv(a, b);

  CovarianceResult out;
  out.full = b_inv * neg_h * b_inv;
  out.full = 0.5 * (out.full + out.full.transpose()).eval();
  for (Eigen::Index u : active) {
    out.full.row(p + q + u).setZero();
    out.full.col(p + q + u).setZero();
  }
  out.active = active;

  const Vector diag = out.full.diagonal();
  for (Eigen::Index j = 0; j < p + q; ++j) {
    if (diag[j] < 0.0) {
      std::ostringstream msg;
      msg << "sandwich: negative variance for " << coordinate_name(j, p, q) << "; active set {";
      for (std::size_t a = 0; a < active.size(); ++a) msg << (a ? "," : "") << active[a];
      msg << "}";
      throw Error(msg.str());
    }
  }
  out.se_beta = diag.head(p).cwiseSqrt();
  out.se_gamma = diag.segment(p, q).cwiseSqrt();
  out.se_theta = diag.tail(m).cwiseMax(0.0).cwiseSqrt();
  return out;
}

inline CovarianceResult sandwich_covariance(const Dataset& data, const BasisConfig& cfg, const Matrix& R, double h,
                                            const ModelParams& params, double theta_thresh = 1e-2,
                                            double grad_thresh = 1e-2) {
  Workspace ws(data, cfg, params);
  const GradientBlock g = gradient(ws, R, h);
  const auto active = active_constraints(params.theta, g.theta, theta_thresh, grad_thresh);
  return sandwich_covariance(full_hessian(ws), R, h, data.p(), data.q(), active);
}

struct WaldRow {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  bool defined = true;
};

/// Two-sided p-value against the standard normal.
inline double two_sided_normal_p(double z) { return std::erfc(std::abs(z) / std::numbers::sqrt2); }

inline WaldRow wald_row(std::string name, double estimate, double se) {
  WaldRow row{std::move(name), estimate, se};
  if (!(se > 0.0) || !std::isfinite(se)) {
    row.defined = false;
    row.z = std::nan("");
    row.p_value = std::nan("");
    return row;
  }
  row.z = estimate / se;
  row.p_value = two_sided_normal_p(row.z);
  return row;
}

}  // namespace aftpic

#endif
