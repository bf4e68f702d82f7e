#ifndef AFTPIC_OPTIMIZER_HPP_
#define AFTPIC_OPTIMIZER_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aftpic/basis.hpp"
#include "aftpic/covariance.hpp"
#include "aftpic/errors.hpp"
#include "aftpic/likelihood.hpp"
#include "aftpic/model.hpp"

namespace aftpic {

struct FitOptions {
  /// Number of basis functions; 0 selects round(cbrt(n)).
  Eigen::Index m = 0;
  double param_tol = 1e-6;
  /// KKT threshold on gradient components, multiplied by n.
  double kkt_tol = 1e-4;
  int max_inner_iters = 20000;
  int max_outer_iters = 30;
  /// Knots, widths and R are recomputed every iteration before this count.
  int boundary_freeze_iter = 100;
  double nu_tol = 1e-2;
  double initial_sigma2h = 1.0;
  double backtrack_factor = 0.5;
  int max_halvings = 30;
  double theta_thresh = 1e-2;
  double grad_thresh = 1e-2;
  double hessian_ridge = 1e-8;
  /// Relative floor (times max theta) for lifting stuck weights before an MI
  /// step; 0 disables the lift.
  double theta_lift = 1e-4;
  /// While knots are refreshed, carry the cumulative hazard over to the new
  /// basis instead of reusing theta as is.
  bool project_on_refresh = true;
  /// While knots are refreshed, re-estimate h after every refresh.
  bool smooth_on_refresh = true;

  void validate() const {
    if (!(param_tol > 0 && kkt_tol > 0 && nu_tol > 0 && initial_sigma2h > 0 && theta_thresh > 0 &&
          grad_thresh > 0 && hessian_ridge > 0 && theta_lift >= 0 && theta_lift < 1))
      throw InvalidInput("fit options: tolerances must be positive");
    if (!(backtrack_factor > 0 && backtrack_factor < 1)) throw InvalidInput("fit options: backtrack factor in (0,1)");
    if (max_inner_iters < 1 || max_outer_iters < 1 || max_halvings < 0 || boundary_freeze_iter < 0 || m < 0)
      throw InvalidInput("fit options: invalid iteration limits");
  }
};

/// P at the start of an iteration and after each of the beta, gamma and theta
/// sub-steps.
struct IterationTrace {
  int outer = 0;
  int iteration = 0;
  double p_start = 0.0;
  double p_beta = 0.0;
  double p_gamma = 0.0;
  double p_theta = 0.0;
  double max_change = 0.0;
};

struct FitState {
  ModelParams params;
  double h = 0.5;
  BasisConfig cfg;
  Matrix R;
  int iterations = 0;  // across all inner solves
  int outer = 0;
  std::vector<IterationTrace> trace;
  std::vector<double> nu_trace;
  std::vector<double> h_trace;
  int stalls = 0;
  int regularized = 0;
  int refreshes = 0;
  int rejected_refreshes = 0;
  int lifts = 0;               // accepted lifts of stuck weights
  bool theta_feasible = true;  // theta >= 0 at every iterate

  double sigma2h() const { return 1.0 / (2.0 * h); }
};

/// Result of a backtracking search along a fixed ascent direction.
struct LineSearchResult {
  Vector x;
  double value = 0.0;
  double step = 0.0;
  bool accepted = false;
};

/// Tries step sizes 1, f, f^2, ... until objective(x + a dir) >= f0.
/// The objective returns nullopt for infeasible trial points.
template <typename Objective>
LineSearchResult backtracking_ascent(Objective&& objective, const Vector& x, const Vector& dir, double f0,
                                     double factor, int max_halvings) {
  double a = 1.0;
  for (int k = 0; k <= max_halvings; ++k, a *= factor) {
    Vector trial = x + a * dir;
    const std::optional<double> f = objective(trial);
    if (f && *f >= f0) return {std::move(trial), *f, a, true};
  }
  return {x, f0, 0.0, false};
}

/// Ascent direction from a negative semidefinite (pseudo-)Hessian:
/// (-H)^-1 g, with -H + ridge I used if -H is not positive definite.
inline Vector newton_direction(const Matrix& neg_semidef_hessian, const Vector& grad, double ridge,
                               bool* regularized = nullptr) {
  if (grad.size() == 0) return grad;
  Matrix A = -neg_semidef_hessian;
  Eigen::LLT<Matrix> llt(A);
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    const Vector diag = llt.matrixLLT().diagonal();
    ok = diag.minCoeff() > 0.0 && diag.minCoeff() * diag.minCoeff() > 1e-14 * A.diagonal().cwiseAbs().maxCoeff();
  }
  if (!ok) {
    if (regularized) *regularized = true;
    A.diagonal().array() += ridge;
    Eigen::LDLT<Matrix> ldlt(A);
    return ldlt.solve(grad);
  }
  return llt.solve(grad);
}

namespace detail {

inline std::optional<double> guarded_objective(const Workspace& ws, const Matrix& R, double h) {
  bool clamped = false;
  const double v = penalised_log_likelihood(ws, R, h, true, &clamped);
  if (clamped || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<double> kappa_at_y_star(const Dataset& data, const Vector& beta, const Vector& gamma) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& s : data.subjects) out.push_back(kappa_eval(s, beta, gamma, s.y_star(), false).value);
  return out;
}

}  // namespace detail

/// Re-places knots at the current kappa(y*) quantiles and rebuilds R.
inline void refresh_basis(FitState& state, const Dataset& data) {
  const auto k = detail::kappa_at_y_star(data, state.params.beta, state.params.gamma);
  state.cfg = knot_placement(k, state.params.theta.size());
  state.R = penalty_matrix(state.cfg);
}

/// Pseudo-Newton update of beta with line search; `ws` must match `state`
/// and is left at the accepted point.
inline double newton_step_beta(FitState& state, Workspace& ws, const FitOptions& opts, double p0) {
  const Vector g = gradient(ws, state.R, state.h).beta;
  bool reg = false;
  const Vector dir = newton_direction(pseudo_hessian_beta(ws), g, opts.hessian_ridge, &reg);
  if (reg) ++state.regularized;
  const Vector gamma = state.params.gamma;
  auto objective = [&](const Vector& b) {
    ws.set_regression(b, gamma);
    return detail::guarded_objective(ws, state.R, state.h);
  };
  LineSearchResult res = backtracking_ascent(objective, state.params.beta, dir, p0, opts.backtrack_factor,
                                             opts.max_halvings);
  if (!res.accepted) ++state.stalls;
  state.params.beta = res.x;
  if (ws.beta() != state.params.beta) ws.set_regression(state.params.beta, gamma);
  return res.value;
}

/// Pseudo-Newton update of gamma at the already-updated beta.
inline double newton_step_gamma(FitState& state, Workspace& ws, const FitOptions& opts, double p0) {
  if (state.params.gamma.size() == 0) return p0;
  const Vector g = gradient(ws, state.R, state.h).gamma;
  bool reg = false;
  const Vector dir = newton_direction(pseudo_hessian_gamma(ws), g, opts.hessian_ridge, &reg);
  if (reg) ++state.regularized;
  const Vector beta = state.params.beta;
  auto objective = [&](const Vector& c) {
    ws.set_regression(beta, c);
    return detail::guarded_objective(ws, state.R, state.h);
  };
  LineSearchResult res = backtracking_ascent(objective, state.params.gamma, dir, p0, opts.backtrack_factor,
                                             opts.max_halvings);
  if (!res.accepted) ++state.stalls;
  state.params.gamma = res.x;
  if (ws.gamma() != state.params.gamma) ws.set_regression(beta, state.params.gamma);
  return res.value;
}

/// Multiplicative-iterative update theta + a S_theta dP/dtheta.
inline double mi_step_theta(FitState& state, Workspace& ws, const FitOptions& opts, double p0) {
  Vector g = gradient(ws, state.R, state.h).theta;
  // A multiplicative step cannot move a weight sitting at round-off zero. Where
  // such a weight has a gradient above the KKT threshold, lift it to a small
  // floor first and keep the lift only if P does not drop.
  if (opts.theta_lift > 0.0 && state.params.theta.size() > 0) {
    const double floor = opts.theta_lift * std::max(state.params.theta.maxCoeff(), 1e-300);
    const double tol = opts.kkt_tol * static_cast<double>(std::max<std::size_t>(ws.data().size(), 1));
    Vector lifted = state.params.theta;
    bool any = false;
    for (Eigen::Index u = 0; u < lifted.size(); ++u) {
      if (lifted[u] < floor && g[u] > tol) {
        lifted[u] = floor;
        any = true;
      }
    }
    if (any) {
      ws.set_theta(lifted);
      const auto v = detail::guarded_objective(ws, state.R, state.h);
      if (v && *v >= p0) {
        state.params.theta = lifted;
        p0 = *v;
        g = gradient(ws, state.R, state.h).theta;
        ++state.lifts;
      } else {
        ws.set_theta(state.params.theta);
      }
    }
  }
  const Vector dir = mi_scale_theta(ws, state.R, state.h).cwiseProduct(g);
  auto objective = [&](const Vector& t) -> std::optional<double> {
    // theta + a S g >= 0 for a <= 1; clip round-off below zero.
    ws.set_theta(t.cwiseMax(0.0));
    return detail::guarded_objective(ws, state.R, state.h);
  };
  LineSearchResult res = backtracking_ascent(objective, state.params.theta, dir, p0, opts.backtrack_factor,
                                             opts.max_halvings);
  if (!res.accepted) ++state.stalls;
  state.params.theta = res.x.cwiseMax(0.0);
  if ((state.params.theta.array() < 0.0).any()) state.theta_feasible = false;
  if (ws.theta() != state.params.theta) ws.set_theta(state.params.theta);
  return res.value;
}

// Single-step entry points that build their own workspace.
inline Vector newton_step_beta(FitState& state, const Dataset& data, const FitOptions& opts = {}) {
  Workspace ws(data, state.cfg, state.params);
  newton_step_beta(state, ws, opts, penalised_log_likelihood(ws, state.R, state.h));
  return state.params.beta;
}

inline Vector newton_step_gamma(FitState& state, const Dataset& data, const FitOptions& opts = {}) {
  Workspace ws(data, state.cfg, state.params);
  newton_step_gamma(state, ws, opts, penalised_log_likelihood(ws, state.R, state.h));
  return state.params.gamma;
}

inline Vector mi_step_theta(FitState& state, const Dataset& data, const FitOptions& opts = {}) {
  Workspace ws(data, state.cfg, state.params);
  mi_step_theta(state, ws, opts, penalised_log_likelihood(ws, state.R, state.h));
  return state.params.theta;
}

/// KKT conditions with gradient threshold kkt_tol * n.
inline bool kkt_satisfied(const GradientBlock& g, const Vector& theta, const FitOptions& opts, std::size_t n) {
  const double tol = opts.kkt_tol * static_cast<double>(std::max<std::size_t>(n, 1));
  if (g.beta.size() && g.beta.cwiseAbs().maxCoeff() >= tol) return false;
  if (g.gamma.size() && g.gamma.cwiseAbs().maxCoeff() >= tol) return false;
  for (Eigen::Index u = 0; u < theta.size(); ++u) {
    if (std::abs(g.theta[u]) < tol) continue;
    if (theta[u] <= opts.theta_thresh && g.theta[u] < 0.0) continue;
    return false;
  }
  return true;
}

struct SmoothingUpdate {
  double sigma2h = 0.0;
  double nu = 0.0;
  bool ok = false;
  std::string reason;
};

/// nu = tr{(F + Q)^-1 Q} with Q = R / sigma2h in the theta block, and the
/// fixed-point update sigma2h = theta' R theta / (m - nu).
inline SmoothingUpdate update_sigma2h(const Matrix& neg_hessian, const Matrix& R, const Vector& theta,
                                      double sigma2h) {
  SmoothingUpdate up;
  const Eigen::Index m = R.rows();
  const Eigen::Index d = neg_hessian.rows();
  Matrix Q = Matrix::Zero(d, d);
  Q.bottomRightCorner(m, m) = R / sigma2h;
  Eigen::FullPivLU<Matrix> lu(neg_hessian + Q);
  if (!lu.isInvertible()) {
    up.reason = "F + Q is singular";
    return up;
  }
  up.nu = lu.solve(Q).trace();
  const double quad = theta.dot(R * theta);
  if (!std::isfinite(up.nu) || up.nu < -1e-8 || up.nu > static_cast<double>(m) + 1e-8) {
    up.reason = "degrees of freedom outside [0, m]";
    return up;
  }
  up.nu = std::clamp(up.nu, 0.0, static_cast<double>(m));
  if (!(quad > 0.0)) {
    up.reason = "theta' R theta = 0";
    return up;
  }
  if (!(static_cast<double>(m) - up.nu > 0.0)) {
    up.reason = "m - nu <= 0";
    return up;
  }
  up.sigma2h = quad / (static_cast<double>(m) - up.nu);
  up.ok = true;
  return up;
}

inline SmoothingUpdate update_sigma2h(const FitState& state, const Dataset& data) {
  Workspace ws(data, state.cfg, state.params);
  return update_sigma2h(-full_hessian(ws), state.R, state.params.theta, state.sigma2h());
}

/// Nonnegative theta whose cumulative hazard on `grid` best matches `target`
/// in least squares (multiplicative updates; zero entries stay zero).
inline Vector project_cumhaz(const BasisConfig& cfg, const std::vector<double>& grid, const Vector& target,
                             Vector theta, int iterations = 300) {
  Matrix A(static_cast<Eigen::Index>(grid.size()), cfg.m());
  for (std::size_t g = 0; g < grid.size(); ++g)
    A.row(static_cast<Eigen::Index>(g)) = evaluate_basis(cfg, grid[g], false).Psi.transpose();
  const Matrix AtA = A.transpose() * A;
  const Vector Atb = A.transpose() * target;
  for (int it = 0; it < iterations; ++it) {
    const Vector den = AtA * theta;
    for (Eigen::Index u = 0; u < theta.size(); ++u)
      if (den[u] > 0.0) theta[u] *= Atb[u] / den[u];
  }
  return theta;
}

/// One knot refresh: new knots and R at the current kappa(y*), theta carried
/// over and h re-estimated as configured. A refresh that would lower P or make
/// it non-finite is rejected, so knots only move when the new basis fits at
/// least as well.
inline void refresh_step(FitState& state, const Dataset& data, const FitOptions& opts) {
  FitState next = state;
  refresh_basis(next, data);
  if (opts.project_on_refresh) {
    const double top = std::max(state.cfg.d2(), next.cfg.d2());
    constexpr int kGrid = 200;
    std::vector<double> grid(kGrid);
    Vector target(kGrid);
    for (int g = 0; g < kGrid; ++g) {
      grid[g] = top * (g + 1) / kGrid;
      target[g] = evaluate_basis(state.cfg, grid[g], false).Psi.dot(state.params.theta);
    }
    next.params.theta = project_cumhaz(next.cfg, grid, target, state.params.theta);
  }
  {
    Workspace ws(data, next.cfg, next.params);
    const auto p_next = detail::guarded_objective(ws, next.R, next.h);
    Workspace ws_now(data, state.cfg, state.params);
    const auto p_now = detail::guarded_objective(ws_now, state.R, state.h);
    if (!p_next || (p_now && *p_next < *p_now)) {
      ++state.rejected_refreshes;
      return;
    }
  }
  if (opts.smooth_on_refresh) {
    const SmoothingUpdate up = update_sigma2h(next, data);
    if (up.ok) next.h = 1.0 / (2.0 * up.sigma2h);
  }
  ++next.refreshes;
  state = std::move(next);
}

struct InnerResult {
  bool converged = false;
  int iterations = 0;
};

/// Alternating beta -> gamma -> theta updates at fixed h until the largest
/// parameter change is below param_tol and KKT holds.
inline InnerResult inner_solve(FitState& state, const Dataset& data, const FitOptions& opts) {
  InnerResult out;
  for (int it = 0; it < opts.max_inner_iters; ++it) {
    if (state.iterations < opts.boundary_freeze_iter) refresh_step(state, data, opts);
    const Vector before = state.params.stacked();
    Workspace ws(data, state.cfg, state.params);

    IterationTrace tr;
    tr.outer = state.outer;
    tr.iteration = state.iterations;
    tr.p_start = penalised_log_likelihood(ws, state.R, state.h);
    tr.p_beta = newton_step_beta(state, ws, opts, tr.p_start);
    tr.p_gamma = newton_step_gamma(state, ws, opts, tr.p_beta);
    tr.p_theta = mi_step_theta(state, ws, opts, tr.p_gamma);
    tr.max_change = (state.params.stacked() - before).cwiseAbs().maxCoeff();
    state.trace.push_back(tr);
    ++state.iterations;
    ++out.iterations;

    if (tr.max_change < opts.param_tol) {
      const GradientBlock g = gradient(ws, state.R, state.h);
      if (kkt_satisfied(g, state.params.theta, opts, data.size())) {
        // The accepted point must not depend on the log guard.
        (void)penalised_log_likelihood(ws, state.R, state.h, false);
        out.converged = true;
        break;
      }
    }
  }
  return out;
}

struct FitResult {
  ModelParams params;
  double h = 0.0;
  double nu = 0.0;
  BasisConfig cfg;
  Matrix R;
  std::vector<Eigen::Index> active;
  std::optional<CovarianceResult> covariance;
  std::string covariance_error;
  GradientBlock gradient;
  bool converged = false;
  bool inner_converged = false;
  bool nu_stable = false;
  bool smoothing_frozen = false;
  std::string smoothing_note;
  int iterations = 0;
  int outer_iterations = 0;
  int stalls = 0;
  int regularized = 0;
  int lifts = 0;
  bool theta_feasible = true;
  std::vector<IterationTrace> trace;
  std::vector<double> nu_trace;
  std::vector<double> h_trace;
  double wall_seconds = 0.0;
  double penalised_loglik = 0.0;
  double loglik = 0.0;
};

/// Starting point: beta = 0, gamma = 0, knots from y*, and a flat theta with
/// Lambda0(median kappa) = log 2.
inline FitState initial_state(const Dataset& data, const FitOptions& opts) {
  FitState st;
  const Eigen::Index m = opts.m > 0 ? opts.m : default_basis_count(data.size());
  st.params.beta = Vector::Zero(data.p());
  st.params.gamma = Vector::Zero(data.q());
  st.params.theta = Vector::Zero(m);
  st.h = 1.0 / (2.0 * opts.initial_sigma2h);
  refresh_basis(st, data);
  auto k = detail::kappa_at_y_star(data, st.params.beta, st.params.gamma);
  std::sort(k.begin(), k.end());
  const double median = quantile_sorted(k, 0.5);
  double total = 0.0;
  for (Eigen::Index u = 0; u < m; ++u) total += st.cfg.Psi(u, median);
  st.params.theta = Vector::Constant(m, std::numbers::ln2 / total);
  return st;
}

/// Fits at the current h, re-estimates h from the marginal-likelihood fixed
/// point, and repeats until nu changes by less than nu_tol.
inline FitResult fit(const Dataset& data, const FitOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  opts.validate();
  data.validate();
  if (data.p() + data.q() < 1) throw InvalidInput("fit: need at least one covariate");
  if (data.empty()) throw InvalidInput("fit: empty dataset");

  FitState st = initial_state(data, opts);
  FitResult res;
  double nu_prev = std::numeric_limits<double>::quiet_NaN();
  for (st.outer = 0; st.outer < opts.max_outer_iters; ++st.outer) {
    const InnerResult inner = inner_solve(st, data, opts);
    res.inner_converged = inner.converged;
    const SmoothingUpdate up = update_sigma2h(st, data);
    st.h_trace.push_back(st.h);
    if (!up.ok) {
      res.smoothing_frozen = true;
      res.smoothing_note = up.reason;
      st.nu_trace.push_back(up.nu);
      res.nu = up.nu;
      break;
    }
    st.nu_trace.push_back(up.nu);
    res.nu = up.nu;
    if (!std::isnan(nu_prev) && std::abs(up.nu - nu_prev) < opts.nu_tol) {
      res.nu_stable = true;
      break;
    }
    nu_prev = up.nu;
    st.h = 1.0 / (2.0 * up.sigma2h);
  }
  res.outer_iterations = std::min(st.outer + 1, opts.max_outer_iters);

  res.params = st.params;
  res.h = st.h;
  res.cfg = st.cfg;
  res.R = st.R;
  res.iterations = st.iterations;
  res.stalls = st.stalls;
  res.lifts = st.lifts;
  res.regularized = st.regularized;
  res.theta_feasible = st.theta_feasible && (st.params.theta.array() >= 0.0).all();
  res.trace = std::move(st.trace);
  res.nu_trace = std::move(st.nu_trace);
  res.h_trace = std::move(st.h_trace);
  res.converged = res.inner_converged && (res.nu_stable || res.smoothing_frozen);

  Workspace ws(data, res.cfg, res.params);
  res.gradient = gradient(ws, res.R, res.h);
  bool clamped = false;
  res.penalised_loglik = penalised_log_likelihood(ws, res.R, res.h, true, &clamped);
  res.loglik = log_likelihood(ws, true, &clamped);
  res.active = active_constraints(res.params.theta, res.gradient.theta, opts.theta_thresh, opts.grad_thresh);
  try {
    res.covariance = sandwich_covariance(full_hessian(ws), res.R, res.h, data.p(), data.q(), res.active);
    res.covariance->nu = res.nu;
  } catch (const Error& e) {
    res.covariance_error = e.what();
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace aftpic

#endif
