#ifndef AFTPIC_INFERENCE_HPP_
#define AFTPIC_INFERENCE_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "aftpic/basis.hpp"
#include "aftpic/covariance.hpp"
#include "aftpic/errors.hpp"
#include "aftpic/model.hpp"
#include "aftpic/optimizer.hpp"

namespace aftpic {

/// Recomputes the sandwich covariance at a fitted point.
inline CovarianceResult sandwich_covariance(const FitResult& fit, const Dataset& data,
                                            const FitOptions& opts = {}) {
  return sandwich_covariance(data, fit.cfg, fit.R, fit.h, fit.params, opts.theta_thresh, opts.grad_thresh);
}

/// One row per beta and gamma coefficient; names default to beta[j]/gamma[r].
inline std::vector<WaldRow> wald_table(const ModelParams& params, const CovarianceResult& cov,
                                       const std::vector<std::string>& x_names = {},
                                       const std::vector<std::string>& z_names = {}) {
  const Eigen::Index p = params.beta.size(), q = params.gamma.size();
  if (cov.se_beta.size() != p || cov.se_gamma.size() != q) throw DimensionError("wald_table: size mismatch");
  std::vector<WaldRow> rows;
  for (Eigen::Index j = 0; j < p; ++j) {
    std::string name = static_cast<std::size_t>(j) < x_names.size() ? x_names[j] : "beta[" + std::to_string(j) + "]";
    rows.push_back(wald_row(std::move(name), params.beta[j], cov.se_beta[j]));
  }
  for (Eigen::Index r = 0; r < q; ++r) {
    std::string name = static_cast<std::size_t>(r) < z_names.size() ? z_names[r] : "gamma[" + std::to_string(r) + "]";
    rows.push_back(wald_row(std::move(name), params.gamma[r], cov.se_gamma[r]));
  }
  return rows;
}

inline std::vector<WaldRow> wald_table(const FitResult& fit, const CovarianceResult& cov,
                                       const std::vector<std::string>& x_names = {},
                                       const std::vector<std::string>& z_names = {}) {
  return wald_table(fit.params, cov, x_names, z_names);
}

namespace detail {

inline void check_grid(const std::vector<double>& t_grid) {
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (!(t_grid[i] >= 0.0) || !std::isfinite(t_grid[i])) throw InvalidInput("time grid must be finite and >= 0");
    if (i > 0 && !(t_grid[i] > t_grid[i - 1])) throw InvalidInput("time grid must be increasing");
  }
}

inline SubjectRecord scenario_subject(const Vector& x, const StepTrajectory& z) {
  SubjectRecord s;
  s.id = "scenario";
  s.x = x;
  s.z = z;
  return s;
}

}  // namespace detail

/// S(t | x, z) = exp(-Lambda0(kappa(t))) on a grid.
inline std::vector<double> predict_survival(const ModelParams& params, const BasisConfig& cfg, const Vector& x,
                                            const StepTrajectory& z, const std::vector<double>& t_grid) {
  detail::check_grid(t_grid);
  check_theta(cfg, params.theta);
  const SubjectRecord s = detail::scenario_subject(x, z);
  check_dimensions(s, params);
  std::vector<double> out;
  out.reserve(t_grid.size());
  for (double t : t_grid) {
    const double k = kappa_eval(s, params.beta, params.gamma, t, false).value;
    out.push_back(std::exp(-baseline_cumhaz(cfg, params.theta, k)));
  }
  return out;
}

/// S(t | x + e_j, z) / S(t | x, z).
inline std::vector<double> survival_ratio_fixed(const ModelParams& params, const BasisConfig& cfg, const Vector& x,
                                                const StepTrajectory& z, Eigen::Index j,
                                                const std::vector<double>& t_grid) {
  if (j < 0 || j >= x.size()) throw DimensionError("survival_ratio_fixed: covariate index out of range");
  Vector shifted = x;
  shifted[j] += 1.0;
  const auto num = predict_survival(params, cfg, shifted, z, t_grid);
  const auto den = predict_survival(params, cfg, x, z, t_grid);
  std::vector<double> out(t_grid.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = num[i] / den[i];
  return out;
}

inline std::vector<double> survival_ratio_fixed(const ModelParams& params, const BasisConfig& cfg, const Vector& x,
                                                double tau, Eigen::Index j, const std::vector<double>& t_grid) {
  const Eigen::Index q = params.gamma.size();
  return survival_ratio_fixed(params, cfg, x, StepTrajectory::change_point(tau, Vector::Zero(q), Vector::Ones(q)), j,
                              t_grid);
}

/// S(t | x, z = I(t >= tau)) / S(t | x, z = 0).
inline std::vector<double> survival_ratio_treatment(const ModelParams& params, const BasisConfig& cfg,
                                                    const Vector& x, const StepTrajectory& treated,
                                                    const std::vector<double>& t_grid) {
  const auto num = predict_survival(params, cfg, x, treated, t_grid);
  const auto den = predict_survival(params, cfg, x, StepTrajectory::zeros(params.gamma.size()), t_grid);
  std::vector<double> out(t_grid.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = num[i] / den[i];
  return out;
}

inline std::vector<double> survival_ratio_treatment(const ModelParams& params, const BasisConfig& cfg,
                                                    const Vector& x, double tau, const std::vector<double>& t_grid) {
  const Eigen::Index q = params.gamma.size();
  return survival_ratio_treatment(params, cfg, x, StepTrajectory::change_point(tau, Vector::Zero(q), Vector::Ones(q)),
                                  t_grid);
}

}  // namespace aftpic

#endif
