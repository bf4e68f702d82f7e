#ifndef AFTPIC_MODEL_HPP_
#define AFTPIC_MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aftpic/errors.hpp"

namespace aftpic {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class CensoringKind { Event, Left, Right, Interval };

inline const char* to_string(CensoringKind k) {
  switch (k) {
    case CensoringKind::Event: return "event";
    case CensoringKind::Left: return "left";
    case CensoringKind::Right: return "right";
    case CensoringKind::Interval: return "interval";
  }
  return "?";
}

inline CensoringKind censoring_kind_from_string(const std::string& s) {
  if (s == "event") return CensoringKind::Event;
  if (s == "left") return CensoringKind::Left;
  if (s == "right") return CensoringKind::Right;
  if (s == "interval") return CensoringKind::Interval;
  throw InvalidInput("unknown censoring kind '" + s + "'");
}

/// Right-continuous piecewise-constant covariate path. Segment a holds
/// values.row(a) on [breakpoints[a], breakpoints[a+1]); the last segment
/// extends to +inf (last observation carried forward).
class StepTrajectory {
 public:
  StepTrajectory() : breakpoints_{0.0}, values_(1, 0) {}

  /// A path that is identically zero in q covariates.
  static StepTrajectory zeros(Eigen::Index q) {
    return StepTrajectory({0.0}, Matrix::Zero(1, q));
  }

  /// z(t) = before for t < tau, after for t >= tau.
  static StepTrajectory change_point(double tau, const Vector& before, const Vector& after) {
    if (before.size() != after.size()) throw DimensionError("change_point: value sizes differ");
    if (tau <= 0.0) {
      return StepTrajectory({0.0}, after.transpose());
    }
    Matrix v(2, before.size());
    v.row(0) = before.transpose();
    v.row(1) = after.transpose();
    return StepTrajectory({0.0, tau}, std::move(v));
  }

  StepTrajectory(std::vector<double> breakpoints, Matrix values)
      : breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
    if (breakpoints_.empty()) throw InvalidInput("trajectory needs at least one segment");
    if (breakpoints_.front() != 0.0) throw InvalidInput("trajectory must start at time 0");
    for (std::size_t a = 1; a < breakpoints_.size(); ++a) {
      if (!(breakpoints_[a] > breakpoints_[a - 1]) || !std::isfinite(breakpoints_[a]))
        throw InvalidInput("trajectory breakpoints must be finite and strictly increasing");
    }
    if (static_cast<std::size_t>(values_.rows()) != breakpoints_.size())
      throw InvalidInput("trajectory needs one value row per breakpoint");
  }

  std::size_t segments() const { return breakpoints_.size(); }
  Eigen::Index q() const { return values_.cols(); }
  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const Matrix& values() const { return values_; }

  std::size_t segment_at(double t) const {
    auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
    if (it == breakpoints_.begin()) return 0;
    return static_cast<std::size_t>(it - breakpoints_.begin()) - 1;
  }

  Vector value_at(double t) const { return values_.row(segment_at(t)).transpose(); }

  /// Length of segment a that lies inside [0, t].
  double overlap(std::size_t a, double t) const {
    double lo = breakpoints_[a];
    double hi = a + 1 < breakpoints_.size() ? std::min(t, breakpoints_[a + 1]) : t;
    return std::max(0.0, hi - lo);
  }

  bool operator==(const StepTrajectory& o) const {
    return breakpoints_ == o.breakpoints_ && values_.rows() == o.values_.rows() &&
           values_.cols() == o.values_.cols() && values_ == o.values_;
  }

 private:
  std::vector<double> breakpoints_;
  Matrix values_;
};

struct SubjectRecord {
  std::string id;
  double y_left = 0.0;
  double y_right = 0.0;
  CensoringKind kind = CensoringKind::Event;
  Vector x;
  StepTrajectory z;

  /// y* = yL if right-censored, else yR.
  double y_star() const { return std::isinf(y_right) ? y_left : y_right; }

  void validate() const {
    auto bad = [&](const std::string& msg) {
      throw InvalidInput("subject '" + id + "': " + msg);
    };
    if (!(y_left >= 0.0) || !(y_right >= 0.0)) bad("times must be nonnegative");
    if (y_left > y_right) bad("yL > yR");
    switch (kind) {
      case CensoringKind::Event:
        if (y_left != y_right || !std::isfinite(y_right) || y_right <= 0.0)
          bad("event requires 0 < yL = yR < inf");
        break;
      case CensoringKind::Left:
        if (y_left != 0.0 || !std::isfinite(y_right) || y_right <= 0.0)
          bad("left-censoring requires yL = 0 and 0 < yR < inf");
        break;
      case CensoringKind::Right:
        if (!std::isinf(y_right) || !std::isfinite(y_left)) bad("right-censoring requires yR = inf");
        break;
      case CensoringKind::Interval:
        if (!(y_left > 0.0 && y_left < y_right && std::isfinite(y_right)))
          bad("interval-censoring requires 0 < yL < yR < inf");
        break;
    }
  }
};

struct Dataset {
  std::vector<SubjectRecord> subjects;
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;

  std::size_t size() const { return subjects.size(); }
  bool empty() const { return subjects.empty(); }
  Eigen::Index p() const { return static_cast<Eigen::Index>(x_names.size()); }
  Eigen::Index q() const { return static_cast<Eigen::Index>(z_names.size()); }

  void validate() const {
    for (const auto& s : subjects) {
      s.validate();
      if (s.x.size() != p() || s.z.q() != q())
        throw DimensionError("subject '" + s.id + "' covariate dimensions do not match the dataset");
    }
  }
};

struct ModelParams {
  Vector beta;
  Vector gamma;
  Vector theta;

  Eigen::Index size() const { return beta.size() + gamma.size() + theta.size(); }

  /// (beta, gamma, theta) stacked in that order.
  Vector stacked() const {
    Vector v(size());
    v << beta, gamma, theta;
    return v;
  }
};

inline void check_dimensions(const SubjectRecord& s, const ModelParams& params) {
  if (s.x.size() != params.beta.size() || s.z.q() != params.gamma.size())
    throw DimensionError("parameter dimensions (p=" + std::to_string(params.beta.size()) +
                         ", q=" + std::to_string(params.gamma.size()) + ") do not match subject '" +
                         s.id + "'");
}

/// kappa(t) with its gamma derivatives; d/dbeta is -value * x.
struct KappaEval {
  double value = 0.0;
  Vector grad_gamma;
  Matrix hess_gamma;
};

/// kappa_i(t) = exp(-x beta) * integral_0^t exp(-z(s) gamma) ds, in closed form for a step path.
inline KappaEval kappa_eval(const SubjectRecord& s, const Vector& beta, const Vector& gamma, double t,
                            bool with_hessian = true) {
  const Eigen::Index q = gamma.size();
  KappaEval out;
  out.grad_gamma = Vector::Zero(q);
  if (with_hessian) out.hess_gamma = Matrix::Zero(q, q);
  const double scale = std::exp(-s.x.dot(beta));
  const auto& bp = s.z.breakpoints();
  const Matrix& zv = s.z.values();
  double integral = 0.0;
  for (std::size_t a = 0; a < bp.size() && bp[a] < t; ++a) {
    const double len = s.z.overlap(a, t);
    if (len <= 0.0) continue;
    const double w = std::exp(-zv.row(a).dot(gamma)) * len;
    integral += w;
    if (q > 0) {
      out.grad_gamma.noalias() -= w * zv.row(a).transpose();
      if (with_hessian) out.hess_gamma.noalias() += w * zv.row(a).transpose() * zv.row(a);
    }
  }
  out.value = scale * integral;
  out.grad_gamma *= scale;
  if (with_hessian) out.hess_gamma *= scale;
  return out;
}

inline double kappa(const SubjectRecord& s, const ModelParams& params, double t) {
  check_dimensions(s, params);
  if (t < 0.0) throw InvalidInput("kappa: negative time");
  return kappa_eval(s, params.beta, params.gamma, t, false).value;
}

inline Vector kappa_grad_beta(const SubjectRecord& s, const ModelParams& params, double t) {
  return -kappa(s, params, t) * s.x;
}

inline Vector kappa_grad_gamma(const SubjectRecord& s, const ModelParams& params, double t) {
  check_dimensions(s, params);
  if (t < 0.0) throw InvalidInput("kappa: negative time");
  return kappa_eval(s, params.beta, params.gamma, t, false).grad_gamma;
}

inline Matrix kappa_hess_gamma(const SubjectRecord& s, const ModelParams& params, double t) {
  check_dimensions(s, params);
  if (t < 0.0) throw InvalidInput("kappa: negative time");
  return kappa_eval(s, params.beta, params.gamma, t, true).hess_gamma;
}

}  // namespace aftpic

#endif
