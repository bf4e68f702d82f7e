// Randomized derivative checks shared by the unit tests and the acceptance
// runner: analytic gradient blocks of P against finite differences of P, and
// full_hessian against finite differences of the gradient of l.

#ifndef AFTPIC_TESTS_DERIVATIVE_ORACLE_HPP_
#define AFTPIC_TESTS_DERIVATIVE_ORACLE_HPP_

#include <algorithm>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "aftpic/basis.hpp"
#include "aftpic/covariance.hpp"
#include "aftpic/likelihood.hpp"
#include "oracles.hpp"

namespace oracle {

struct Instance {
  aftpic::Dataset data;
  aftpic::BasisConfig cfg;
  Matrix R;
  double h = 0.0;
  aftpic::ModelParams params;
};

/// n <= 30, p <= 3, q <= 2, m <= 6, theta bounded away from 0.
inline Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> N(8, 30), P(1, 3), Q(1, 2), M(1, 6);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Instance in;
  const int n = N(rng), p = P(rng), q = Q(rng), m = M(rng);
  in.data = random_dataset(rng, n, p, q);
  in.params.beta = Vector(p);
  in.params.gamma = Vector(q);
  in.params.theta = Vector(m);
  for (auto& b : in.params.beta) b = U(rng) - 0.5;
  for (auto& g : in.params.gamma) g = 0.6 * (U(rng) - 0.5);
  for (auto& t : in.params.theta) t = 0.2 + 1.3 * U(rng);
  std::vector<double> ks;
  for (const auto& s : in.data.subjects) ks.push_back(aftpic::kappa(s, in.params, s.y_star()));
  in.cfg = aftpic::knot_placement(ks, m);
  in.R = aftpic::penalty_matrix(in.cfg);
  in.h = U(rng) < 0.25 ? 0.0 : std::pow(10.0, -3.0 + 3.0 * U(rng));
  return in;
}

inline aftpic::ModelParams unstack(const Vector& v, Eigen::Index p, Eigen::Index q) {
  return {v.head(p), v.segment(p, q), v.tail(v.size() - p - q)};
}

struct DerivativeReport {
  bool ok = true;
  double worst_gradient = 0.0;  // worst error relative to the per-entry tolerance
  double worst_hessian = 0.0;
  std::string detail;
};

/// Error divided by its allowance: <= 1 passes.
inline double tolerance_ratio(double a, double b, double rel, double floor, double abs_tol) {
  if (std::abs(b) > floor) return std::abs(a - b) / (rel * std::abs(b));
  return std::abs(a - b) / abs_tol;
}

inline DerivativeReport check_derivatives(const Instance& in) {
  DerivativeReport rep;
  const Eigen::Index p = in.data.p(), q = in.data.q();
  const Vector x = in.params.stacked();
  auto P = [&](const Vector& v) {
    return aftpic::penalised_log_likelihood(in.data, in.cfg, in.R, in.h, unstack(v, p, q));
  };
  const aftpic::Workspace ws(in.data, in.cfg, in.params);
  const Vector analytic = aftpic::gradient(ws, in.R, in.h).stacked();
  const Vector numeric = fd_gradient(P, x);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double r = tolerance_ratio(analytic[i], numeric[i], 1e-5, 1e-3, 1e-7);
    if (r > rep.worst_gradient) rep.worst_gradient = r;
    if (r > 1.0) {
      rep.ok = false;
      std::ostringstream os;
      os << "gradient " << aftpic::coordinate_name(i, p, q) << ": analytic " << analytic[i] << " vs fd "
         << numeric[i] << "; ";
      rep.detail += os.str();
    }
  }

  auto grad_l = [&](const Vector& v) {
    const aftpic::Workspace w(in.data, in.cfg, unstack(v, p, q));
    return aftpic::gradient(w, in.R, 0.0).stacked();
  };
  const Matrix H = aftpic::full_hessian(ws);
  const Matrix Hn = fd_hessian_from_gradient(grad_l, x);
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, H.cwiseAbs().maxCoeff())) {
    rep.ok = false;
    rep.detail += "full_hessian not symmetric; ";
  }
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    for (Eigen::Index j = 0; j < H.cols(); ++j) {
      const double r = tolerance_ratio(H(i, j), Hn(i, j), 1e-4, 1e-3, 1e-7);
      if (r > rep.worst_hessian) rep.worst_hessian = r;
      if (r > 1.0) {
        rep.ok = false;
        std::ostringstream os;
        os << "hessian (" << aftpic::coordinate_name(i, p, q) << "," << aftpic::coordinate_name(j, p, q)
           << "): analytic " << H(i, j) << " vs fd " << Hn(i, j) << "; ";
        rep.detail += os.str();
      }
    }
  }
  return rep;
}

}  // namespace oracle

#endif
