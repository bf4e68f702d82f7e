#ifndef AFTPIC_LIKELIHOOD_HPP_
#define AFTPIC_LIKELIHOOD_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aftpic/basis.hpp"
#include "aftpic/errors.hpp"
#include "aftpic/model.hpp"

namespace aftpic {

/// Survival differences below this are clamped inside logs during line search.
inline constexpr double kLogGuard = 1e-12;

struct GradientBlock {
  Vector beta;
  Vector gamma;
  Vector theta;

  Vector stacked() const {
    Vector v(beta.size() + gamma.size() + theta.size());
    v << beta, gamma, theta;
    return v;
  }
};

/// Per-subject quantities at every kappa endpoint a subject's likelihood term
/// touches: y for events, yL for right-, yR for left-, and (yL, yR) for
/// interval-censoring. Regression-dependent parts (kappa, basis values) and
/// theta-dependent parts (hazard sums) are refreshed separately.
class Workspace {
 public:
  Workspace(const Dataset& data, const BasisConfig& cfg, const ModelParams& params)
      : data_(&data), cfg_(&cfg) {
    const Eigen::Index q = data.q();
    first_.resize(data.size() + 1);
    std::size_t ne = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      first_[i] = ne;
      ne += data.subjects[i].kind == CensoringKind::Interval ? 2 : 1;
    }
    first_[data.size()] = ne;
    kappa_.resize(static_cast<Eigen::Index>(ne));
    dk_.resize(q, static_cast<Eigen::Index>(ne));
    ddk_.resize(q * q, static_cast<Eigen::Index>(ne));
    lin_ = Vector::Zero(static_cast<Eigen::Index>(data.size()));
    set_regression(params.beta, params.gamma);
    set_theta(params.theta);
  }

  /// Recomputes kappa and basis values; theta-dependent sums are refreshed too.
  void set_regression(const Vector& beta, const Vector& gamma) {
    if (beta.size() != data_->p() || gamma.size() != data_->q())
      throw DimensionError("parameter dimensions do not match the dataset");
    beta_ = beta;
    gamma_ = gamma;
    const Eigen::Index m = cfg_->m();
    const Eigen::Index q = data_->q();
    const auto ne = kappa_.size();
    psi_.resize(m, ne);
    Psi_.resize(m, ne);
    dpsi_.resize(m, ne);
    d2psi_.resize(m, ne);
    for (std::size_t i = 0; i < data_->size(); ++i) {
      const SubjectRecord& s = data_->subjects[i];
      double times[2];
      int count = 0;
      switch (s.kind) {
        case CensoringKind::Event: times[count++] = s.y_right; break;
        case CensoringKind::Right: times[count++] = s.y_left; break;
        case CensoringKind::Left: times[count++] = s.y_right; break;
        case CensoringKind::Interval:
          times[count++] = s.y_left;
          times[count++] = s.y_right;
          break;
      }
      for (int c = 0; c < count; ++c) {
        const auto e = static_cast<Eigen::Index>(first_[i] + c);
        KappaEval k = kappa_eval(s, beta_, gamma_, times[c], true);
        kappa_[e] = k.value;
        if (q > 0) {
          dk_.col(e) = k.grad_gamma;
          ddk_.col(e) = Eigen::Map<const Vector>(k.hess_gamma.data(), q * q);
        }
        fill_basis(e, k.value);
      }
      if (s.kind == CensoringKind::Event) {
        lin_[static_cast<Eigen::Index>(i)] = s.x.dot(beta_) + (q > 0 ? s.z.value_at(s.y_right).dot(gamma_) : 0.0);
      }
    }
    ++version_;
    if (theta_.size() == m) set_theta(theta_);
  }

  void set_theta(const Vector& theta) {
    check_theta(*cfg_, theta);
    theta_ = theta;
    haz_.noalias() = psi_.transpose() * theta_;
    haz1_.noalias() = dpsi_.transpose() * theta_;
    haz2_.noalias() = d2psi_.transpose() * theta_;
    cum_.noalias() = Psi_.transpose() * theta_;
    ++version_;
  }

  const Dataset& data() const { return *data_; }
  const BasisConfig& basis() const { return *cfg_; }
  ModelParams params() const { return {beta_, gamma_, theta_}; }
  const Vector& beta() const { return beta_; }
  const Vector& gamma() const { return gamma_; }
  const Vector& theta() const { return theta_; }
  std::uint64_t version() const { return version_; }

  std::size_t first(std::size_t i) const { return first_[i]; }
  double kappa(Eigen::Index e) const { return kappa_[e]; }
  auto dk(Eigen::Index e) const { return dk_.col(e); }
  Matrix ddk(Eigen::Index e) const {
    const Eigen::Index q = data_->q();
    return Eigen::Map<const Matrix>(ddk_.col(e).data(), q, q);
  }
  auto psi(Eigen::Index e) const { return psi_.col(e); }
  auto Psi(Eigen::Index e) const { return Psi_.col(e); }
  auto dpsi(Eigen::Index e) const { return dpsi_.col(e); }
  double haz(Eigen::Index e) const { return haz_[e]; }
  double haz_d1(Eigen::Index e) const { return haz1_[e]; }
  double haz_d2(Eigen::Index e) const { return haz2_[e]; }
  double cumhaz(Eigen::Index e) const { return cum_[e]; }
  /// x beta + z(y) gamma for event subjects, 0 otherwise.
  double linear_predictor(std::size_t i) const { return lin_[static_cast<Eigen::Index>(i)]; }

 private:
  void fill_basis(Eigen::Index e, double k) {
    const Eigen::Index m = cfg_->m();
    for (Eigen::Index u = 0; u < m; ++u) {
      const double s = cfg_->sigma()[u];
      const double d = k - cfg_->mu()[u];
      const double v = detail::normal_pdf(d / s) / s;
      psi_(u, e) = v;
      Psi_(u, e) = k <= 0.0 ? 0.0 : detail::normal_cdf_diff(d / s, -cfg_->mu()[u] / s);
      dpsi_(u, e) = -v * d / (s * s);
      d2psi_(u, e) = v * (d * d / (s * s * s * s) - 1.0 / (s * s));
    }
  }

  const Dataset* data_;
  const BasisConfig* cfg_;
  Vector beta_, gamma_, theta_;
  std::vector<std::size_t> first_;
  Vector kappa_;
  Matrix dk_, ddk_;
  Matrix psi_, Psi_, dpsi_, d2psi_;
  Vector haz_, haz1_, haz2_, cum_;
  Vector lin_;
  std::uint64_t version_ = 0;
};

namespace detail {

// 1 / (1 - exp(-x)) and 1 / (exp(x) - 1) for x > 0.
inline double inv_one_minus_exp_neg(double x) { return -1.0 / std::expm1(-x); }
inline double inv_expm1(double x) { return 1.0 / std::expm1(x); }

}  // namespace detail

/// Log-likelihood from the cached workspace. With `guard` set, non-positive
/// arguments of logs are clamped to kLogGuard and `clamped` is raised;
/// otherwise they throw LogOfNonPositive.
inline double log_likelihood(const Workspace& ws, bool guard, bool* clamped = nullptr) {
  const Dataset& data = ws.data();
  double total = 0.0;
  auto fail = [&](std::size_t i, const char* what) -> double {
    if (!guard) throw LogOfNonPositive(data.subjects[i].id, what);
    if (clamped) *clamped = true;
    return std::log(kLogGuard);
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto e = static_cast<Eigen::Index>(ws.first(i));
    switch (data.subjects[i].kind) {
      case CensoringKind::Event: {
        const double lam = ws.haz(e);
        const double log_lam = lam > 0.0 ? std::log(lam) : fail(i, "baseline hazard at event time");
        total += log_lam - ws.linear_predictor(i) - ws.cumhaz(e);
        break;
      }
      case CensoringKind::Right:
        total -= ws.cumhaz(e);
        break;
      case CensoringKind::Left: {
        const double F = -std::expm1(-ws.cumhaz(e));
        total += F > 0.0 ? std::log(F) : fail(i, "1 - S(yR)");
        break;
      }
      case CensoringKind::Interval: {
        const double lo = ws.cumhaz(e);
        const double delta = ws.cumhaz(e + 1) - lo;
        const double frac = -std::expm1(-delta);
        total += frac > 0.0 ? -lo + std::log(frac) : fail(i, "S(yL) - S(yR)");
        break;
      }
    }
  }
  return total;
}

inline double penalty_value(const Matrix& R, const Vector& theta) { return theta.dot(R * theta); }

inline double penalised_log_likelihood(const Workspace& ws, const Matrix& R, double h, bool guard = false,
                                       bool* clamped = nullptr) {
  const double ll = log_likelihood(ws, guard, clamped);
  if (h == 0.0) return ll;
  return ll - h * penalty_value(R, ws.theta());
}

/// Gradient of P = l - h theta' R theta in every block.
inline GradientBlock gradient(const Workspace& ws, const Matrix& R, double h) {
  const Dataset& data = ws.data();
  const Eigen::Index p = data.p(), q = data.q(), m = ws.basis().m();
  GradientBlock g{Vector::Zero(p), Vector::Zero(q), Vector::Zero(m)};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SubjectRecord& s = data.subjects[i];
    const auto e = static_cast<Eigen::Index>(ws.first(i));
    switch (s.kind) {
      case CensoringKind::Event: {
        const double lam = ws.haz(e);
        if (!(lam > 0.0)) throw LogOfNonPositive(s.id, "baseline hazard at event time");
        const double lk = ws.haz_d1(e) / lam - lam;
        g.beta.noalias() -= (lk * ws.kappa(e) + 1.0) * s.x;
        if (q > 0) g.gamma.noalias() += lk * ws.dk(e) - s.z.value_at(s.y_right);
        g.theta.noalias() += ws.psi(e) / lam - ws.Psi(e);
        break;
      }
      case CensoringKind::Right: {
        const double lk = -ws.haz(e);
        g.beta.noalias() -= lk * ws.kappa(e) * s.x;
        if (q > 0) g.gamma.noalias() += lk * ws.dk(e);
        g.theta.noalias() -= ws.Psi(e);
        break;
      }
      case CensoringKind::Left: {
        const double L = ws.cumhaz(e);
        if (!(L > 0.0)) throw LogOfNonPositive(s.id, "1 - S(yR)");
        const double r = detail::inv_expm1(L);
        const double lk = r * ws.haz(e);
        g.beta.noalias() -= lk * ws.kappa(e) * s.x;
        if (q > 0) g.gamma.noalias() += lk * ws.dk(e);
        g.theta.noalias() += r * ws.Psi(e);
        break;
      }
      case CensoringKind::Interval: {
        const double delta = ws.cumhaz(e + 1) - ws.cumhaz(e);
        if (!(delta > 0.0)) throw LogOfNonPositive(s.id, "S(yL) - S(yR)");
        const double rl = detail::inv_one_minus_exp_neg(delta);
        const double rr = detail::inv_expm1(delta);
        const double lkl = -rl * ws.haz(e);
        const double lkr = rr * ws.haz(e + 1);
        g.beta.noalias() -= (lkl * ws.kappa(e) + lkr * ws.kappa(e + 1)) * s.x;
        if (q > 0) g.gamma.noalias() += lkl * ws.dk(e) + lkr * ws.dk(e + 1);
        g.theta.noalias() += rr * ws.Psi(e + 1) - rl * ws.Psi(e);
        break;
      }
    }
  }
  if (h != 0.0) g.theta.noalias() -= 2.0 * h * (R * ws.theta());
  return g;
}

namespace detail {

// Pseudo-Hessian weights for one endpoint: the negative-definite part of the
// Hessian is -(a J J' + b H) with J, H the first and second kappa derivatives.
struct PseudoWeights {
  double a = 0.0;
  double b = 0.0;
};

template <typename Fn>
void for_each_pseudo_weight(const Workspace& ws, Fn&& fn) {
  const Dataset& data = ws.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SubjectRecord& s = data.subjects[i];
    const auto e = static_cast<Eigen::Index>(ws.first(i));
    switch (s.kind) {
      case CensoringKind::Event: {
        const double lam = ws.haz(e);
        if (!(lam > 0.0)) throw LogOfNonPositive(s.id, "baseline hazard at event time");
        const double ratio = ws.haz_d1(e) / lam;
        fn(i, e, PseudoWeights{ratio * ratio, lam});
        break;
      }
      case CensoringKind::Right:
        fn(i, e, PseudoWeights{0.0, ws.haz(e)});
        break;
      case CensoringKind::Left: {
        const double L = ws.cumhaz(e);
        if (!(L > 0.0)) throw LogOfNonPositive(s.id, "1 - S(yR)");
        const double r = inv_expm1(L);
        const double lam = ws.haz(e);
        fn(i, e, PseudoWeights{r * lam * lam + (r * lam) * (r * lam), 0.0});
        break;
      }
      case CensoringKind::Interval: {
        const double delta = ws.cumhaz(e + 1) - ws.cumhaz(e);
        if (!(delta > 0.0)) throw LogOfNonPositive(s.id, "S(yL) - S(yR)");
        const double rl = inv_one_minus_exp_neg(delta);
        const double rr = inv_expm1(delta);
        const double ll = rl * ws.haz(e);
        const double lr = rr * ws.haz(e + 1);
        fn(i, e, PseudoWeights{ll * ll, ll});
        fn(i, e + 1, PseudoWeights{rr * ws.haz(e + 1) * ws.haz(e + 1) + lr * lr, 0.0});
        break;
      }
    }
  }
}

}  // namespace detail

/// Negative semidefinite surrogate of the beta Hessian.
inline Matrix pseudo_hessian_beta(const Workspace& ws) {
  const Eigen::Index p = ws.data().p();
  Matrix H = Matrix::Zero(p, p);
  if (p == 0) return H;
  detail::for_each_pseudo_weight(ws, [&](std::size_t i, Eigen::Index e, detail::PseudoWeights w) {
    const double k = ws.kappa(e);
    const double c = w.a * k * k + w.b * k;
    if (c != 0.0) H.selfadjointView<Eigen::Lower>().rankUpdate(ws.data().subjects[i].x, -c);
  });
  return H.selfadjointView<Eigen::Lower>();
}

/// Negative semidefinite surrogate of the gamma Hessian.
inline Matrix pseudo_hessian_gamma(const Workspace& ws) {
  const Eigen::Index q = ws.data().q();
  Matrix H = Matrix::Zero(q, q);
  if (q == 0) return H;
  detail::for_each_pseudo_weight(ws, [&](std::size_t, Eigen::Index e, detail::PseudoWeights w) {
    if (w.a != 0.0) H.noalias() -= w.a * ws.dk(e) * ws.dk(e).transpose();
    if (w.b != 0.0) H.noalias() -= w.b * ws.ddk(e);
  });
  return 0.5 * (H + H.transpose());
}

/// Denominator of the multiplicative-iterative scaling: the negative part of
/// dP/dtheta, including 2h [R theta]^+.
inline Vector mi_denominator(const Workspace& ws, const Matrix& R, double h) {
  const Dataset& data = ws.data();
  const Eigen::Index m = ws.basis().m();
  Vector den = Vector::Zero(m);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SubjectRecord& s = data.subjects[i];
    const auto e = static_cast<Eigen::Index>(ws.first(i));
    switch (s.kind) {
      case CensoringKind::Event:
      case CensoringKind::Right:
        den.noalias() += ws.Psi(e);
        break;
      case CensoringKind::Left:
        break;
      case CensoringKind::Interval: {
        const double delta = ws.cumhaz(e + 1) - ws.cumhaz(e);
        if (!(delta > 0.0)) throw LogOfNonPositive(s.id, "S(yL) - S(yR)");
        den.noalias() += detail::inv_one_minus_exp_neg(delta) * ws.Psi(e);
        break;
      }
    }
  }
  if (h != 0.0) den.noalias() += 2.0 * h * (R * ws.theta()).cwiseMax(0.0);
  return den;
}

/// Diagonal of S_theta: theta_u / denominator_u.
inline Vector mi_scale_theta(const Workspace& ws, const Matrix& R, double h) {
  const Vector den = mi_denominator(ws, R, h);
  const Vector& theta = ws.theta();
  Vector scale(theta.size());
  for (Eigen::Index u = 0; u < theta.size(); ++u) {
    if (theta[u] == 0.0) {
      scale[u] = 0.0;
    } else if (!(den[u] > 0.0)) {
      throw InvalidInput("MI scaling: zero denominator for basis " + std::to_string(u) +
                         " with positive theta (degenerate dataset)");
    } else {
      scale[u] = theta[u] / den[u];
    }
  }
  return scale;
}

/// Full second-derivative matrix of the unpenalised log-likelihood, ordered
/// (beta, gamma, theta).
inline Matrix full_hessian(const Workspace& ws) {
  const Dataset& data = ws.data();
  const Eigen::Index p = data.p(), q = data.q(), m = ws.basis().m();
  const Eigen::Index r = p + q;
  Matrix H = Matrix::Zero(r + m, r + m);
  Matrix J(r, 2);
  Matrix lkk(2, 2);
  Matrix lkt(m, 2);
  Vector lk(2);
  Matrix ltt(m, m);

  for (std::size_t i = 0; i < data.size(); ++i) {
    const SubjectRecord& s = data.subjects[i];
    const auto e0 = static_cast<Eigen::Index>(ws.first(i));
    const int count = s.kind == CensoringKind::Interval ? 2 : 1;
    lkk.setZero();
    lkt.setZero();
    lk.setZero();
    ltt.setZero();

    switch (s.kind) {
      case CensoringKind::Event: {
        const double lam = ws.haz(e0), d1 = ws.haz_d1(e0), d2 = ws.haz_d2(e0);
        if (!(lam > 0.0)) throw LogOfNonPositive(s.id, "baseline hazard at event time");
        lk[0] = d1 / lam - lam;
        lkk(0, 0) = (lam * d2 - d1 * d1) / (lam * lam) - d1;
        lkt.col(0) = ws.dpsi(e0) / lam - d1 * ws.psi(e0) / (lam * lam) - ws.psi(e0);
        ltt.noalias() -= ws.psi(e0) * ws.psi(e0).transpose() / (lam * lam);
        break;
      }
      case CensoringKind::Right:
        lk[0] = -ws.haz(e0);
        lkk(0, 0) = -ws.haz_d1(e0);
        lkt.col(0) = -ws.psi(e0);
        break;
      case CensoringKind::Left: {
        const double L = ws.cumhaz(e0);
        if (!(L > 0.0)) throw LogOfNonPositive(s.id, "1 - S(yR)");
        const double rr = detail::inv_expm1(L);
        const double lam = ws.haz(e0), d1 = ws.haz_d1(e0);
        lk[0] = rr * lam;
        const Vector lt = rr * ws.Psi(e0);
        lkk(0, 0) = rr * (d1 - lam * lam) - lk[0] * lk[0];
        lkt.col(0) = rr * (ws.psi(e0) - lam * ws.Psi(e0)) - lk[0] * lt;
        ltt.noalias() -= rr * ws.Psi(e0) * ws.Psi(e0).transpose() + lt * lt.transpose();
        break;
      }
      case CensoringKind::Interval: {
        const Eigen::Index eL = e0, eR = e0 + 1;
        const double delta = ws.cumhaz(eR) - ws.cumhaz(eL);
        if (!(delta > 0.0)) throw LogOfNonPositive(s.id, "S(yL) - S(yR)");
        const double rl = detail::inv_one_minus_exp_neg(delta);
        const double rr = detail::inv_expm1(delta);
        const double lamL = ws.haz(eL), lamR = ws.haz(eR);
        lk[0] = -rl * lamL;
        lk[1] = rr * lamR;
        const Vector lt = rr * ws.Psi(eR) - rl * ws.Psi(eL);
        lkk(0, 0) = rl * (lamL * lamL - ws.haz_d1(eL)) - lk[0] * lk[0];
        lkk(1, 1) = rr * (ws.haz_d1(eR) - lamR * lamR) - lk[1] * lk[1];
        lkk(0, 1) = lkk(1, 0) = -lk[0] * lk[1];
        lkt.col(0) = -rl * (ws.psi(eL) - lamL * ws.Psi(eL)) - lk[0] * lt;
        lkt.col(1) = rr * (ws.psi(eR) - lamR * ws.Psi(eR)) - lk[1] * lt;
        ltt.noalias() += rl * ws.Psi(eL) * ws.Psi(eL).transpose() - rr * ws.Psi(eR) * ws.Psi(eR).transpose() -
                         lt * lt.transpose();
        break;
      }
    }

    // Chain rule through kappa: J_e = d kappa_e / d(beta, gamma).
    for (int c = 0; c < count; ++c) {
      const Eigen::Index e = e0 + c;
      const double k = ws.kappa(e);
      J.col(c).head(p) = -k * s.x;
      if (q > 0) J.col(c).tail(q) = ws.dk(e);
      // lk * d2 kappa / d(beta, gamma)^2
      if (lk[c] != 0.0) {
        H.topLeftCorner(p, p).noalias() += lk[c] * k * s.x * s.x.transpose();
        if (q > 0) {
          const Matrix cross = -lk[c] * s.x * ws.dk(e).transpose();
          H.block(0, p, p, q) += cross;
          H.block(p, 0, q, p) += cross.transpose();
          H.block(p, p, q, q) += lk[c] * ws.ddk(e);
        }
      }
    }
    H.topLeftCorner(r, r).noalias() += J.leftCols(count) * lkk.topLeftCorner(count, count) *
                                       J.leftCols(count).transpose();
    const Matrix cross = J.leftCols(count) * lkt.leftCols(count).transpose();
    H.block(0, r, r, m) += cross;
    H.block(r, 0, m, r) += cross.transpose();
    H.bottomRightCorner(m, m) += ltt;
  }
  return 0.5 * (H + H.transpose());
}

// Convenience entry points that build a workspace for one parameter value.

inline double log_likelihood(const Dataset& data, const BasisConfig& cfg, const ModelParams& params) {
  return log_likelihood(Workspace(data, cfg, params), false);
}

inline double penalised_log_likelihood(const Dataset& data, const BasisConfig& cfg, const Matrix& R, double h,
                                       const ModelParams& params) {
  return penalised_log_likelihood(Workspace(data, cfg, params), R, h);
}

inline Vector grad_beta(const Dataset& data, const BasisConfig& cfg, const Matrix& R, double h,
                        const ModelParams& params) {
  return gradient(Workspace(data, cfg, params), R, h).beta;
}

inline Vector grad_gamma(const Dataset& data, const BasisConfig& cfg, const Matrix& R, double h,
                         const ModelParams& params) {
  return gradient(Workspace(data, cfg, params), R, h).gamma;
}

inline Vector grad_theta(const Dataset& data, const BasisConfig& cfg, const Matrix& R, double h,
                         const ModelParams& params) {
  return gradient(Workspace(data, cfg, params), R, h).theta;
}

inline Matrix pseudo_hessian_beta(const Dataset& data, const BasisConfig& cfg, const ModelParams& params) {
  return pseudo_hessian_beta(Workspace(data, cfg, params));
}

inline Matrix pseudo_hessian_gamma(const Dataset& data, const BasisConfig& cfg, const ModelParams& params) {
  return pseudo_hessian_gamma(Workspace(data, cfg, params));
}

inline Vector mi_scale_theta(const Dataset& data, const BasisConfig& cfg, const Matrix& R, double h,
                             const ModelParams& params) {
  return mi_scale_theta(Workspace(data, cfg, params), R, h);
}

inline Matrix full_hessian(const Dataset& data, const BasisConfig& cfg, const ModelParams& params) {
  return full_hessian(Workspace(data, cfg, params));
}

}  // namespace aftpic

#endif
