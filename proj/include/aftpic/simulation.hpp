#ifndef AFTPIC_SIMULATION_HPP_
#define AFTPIC_SIMULATION_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "aftpic/errors.hpp"
#include "aftpic/model.hpp"
#include "aftpic/optimizer.hpp"

namespace aftpic {

/// Censoring-interval scalars calibrated so that n = 1e5 draws reproduce the
/// target (left, interval, right) proportions; see tools/calibrate_censoring.
struct CensoringScales {
  double alpha_l = 0.0;
  double alpha_r = 0.0;
};

inline constexpr CensoringScales kCalibratedScalesEvent03{1.3571, 1.3575};
inline constexpr CensoringScales kCalibratedScalesEvent07{1.1354, 3.1447};

/// Shipped scales for the two calibrated event proportions; throws otherwise.
inline CensoringScales calibrated_scales(double pi_event) {
  if (std::abs(pi_event - 0.3) < 1e-12) return kCalibratedScalesEvent03;
  if (std::abs(pi_event - 0.7) < 1e-12) return kCalibratedScalesEvent07;
  throw InvalidInput("no calibrated censoring scales for pi_event = " + std::to_string(pi_event) +
                     "; pass alpha_l and alpha_r explicitly");
}

struct SimConfig {
  std::size_t n = 100;
  double pi_event = 0.7;
  double alpha_l = kCalibratedScalesEvent07.alpha_l;
  double alpha_r = kCalibratedScalesEvent07.alpha_r;
  Vector beta = (Vector(2) << 1.0, -1.0).finished();
  double gamma = -0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(pi_event >= 0.0 && pi_event <= 1.0)) throw InvalidInput("pi_event must lie in [0, 1]");
    if (!(alpha_l > 0.0) || !(alpha_r > 0.0)) throw InvalidInput("alpha_l and alpha_r must be > 0");
    if (beta.size() != 2) throw InvalidInput("the generator uses two time-fixed covariates");
  }
};

/// Independent stream for one (seed, replicate, subject) triple. Streams do not
/// depend on the order in which subjects or replicates are generated.
class SubjectStream {
 public:
  SubjectStream(std::uint64_t seed, std::uint64_t replicate, std::uint64_t subject) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(replicate >> 32),
                      static_cast<std::uint32_t>(subject), static_cast<std::uint32_t>(subject >> 32)};
    engine_.seed(seq);
  }

  /// Uniform on the open interval (0, 1) from the top 53 bits.
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

/// Event time under the change-point model: kappa(t) = T0 with a Weibull
/// baseline S0(k) = exp(-k^3) and z(t) = I(t >= tau).
inline double change_point_event_time(double xb, double gamma, double tau, double u) {
  const double t0 = std::exp(xb) * std::cbrt(-std::log(u));
  return t0 < tau ? t0 : tau + std::exp(gamma) * (t0 - tau);
}

struct ObservedInterval {
  CensoringKind kind = CensoringKind::Event;
  double y_left = 0.0;
  double y_right = 0.0;
};

/// Observation of event time t: exact with probability pi_event, otherwise
/// bracketed by the ordered inspection times alpha_l*ul and alpha_r*ur.
inline ObservedInterval observe(double t, double ue, double ul, double ur, double pi_event, double alpha_l,
                                double alpha_r) {
  if (ue < pi_event) return {CensoringKind::Event, t, t};
  const double a = alpha_l * ul, b = alpha_r * ur;
  const double lo = std::min(a, b), hi = std::max(a, b);
  if (t < lo) return {CensoringKind::Left, 0.0, lo};
  if (t <= hi) return {CensoringKind::Interval, lo, hi};
  return {CensoringKind::Right, hi, kInf};
}

/// Raw draws behind one simulated subject, kept for tests.
struct SubjectDraws {
  double u = 0, x1 = 0, x2 = 0, tau = 0, ue = 0, ul = 0, ur = 0;
  double t = 0;
};

inline SubjectRecord simulate_subject(const SimConfig& cfg, SubjectStream& rng, SubjectDraws* draws = nullptr) {
  SubjectDraws d;
  d.u = rng.uniform();
  d.x1 = rng.uniform() < 0.5 ? 1.0 : 0.0;
  d.x2 = rng.uniform();
  d.tau = rng.uniform();
  d.ue = rng.uniform();
  d.ul = rng.uniform();
  d.ur = rng.uniform();
  const double xb = cfg.beta[0] * d.x1 + cfg.beta[1] * d.x2;
  d.t = change_point_event_time(xb, cfg.gamma, d.tau, d.u);

  SubjectRecord s;
  s.x = (Vector(2) << d.x1, d.x2).finished();
  const ObservedInterval obs = observe(d.t, d.ue, d.ul, d.ur, cfg.pi_event, cfg.alpha_l, cfg.alpha_r);
  s.kind = obs.kind;
  s.y_left = obs.y_left;
  s.y_right = obs.y_right;
  // The covariate path is only observed up to y*.
  const Vector zero = Vector::Zero(1), one = Vector::Ones(1);
  s.z = d.tau < s.y_star() ? StepTrajectory::change_point(d.tau, zero, one) : StepTrajectory::zeros(1);
  if (draws) *draws = d;
  return s;
}

inline Dataset simulate_dataset(const SimConfig& cfg, std::uint64_t replicate = 0) {
  cfg.validate();
  Dataset data;
  data.x_names = {"x1", "x2"};
  data.z_names = {"z"};
  data.subjects.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    SubjectStream rng(cfg.seed, replicate, i);
    SubjectRecord s = simulate_subject(cfg, rng);
    s.id = std::to_string(i + 1);
    data.subjects.push_back(std::move(s));
  }
  return data;
}

struct CensoringMix {
  double event = 0, left = 0, interval = 0, right = 0;
};

inline CensoringMix censoring_mix(const Dataset& data) {
  CensoringMix mix;
  if (data.empty()) return mix;
  for (const auto& s : data.subjects) {
    switch (s.kind) {
      case CensoringKind::Event: mix.event += 1; break;
      case CensoringKind::Left: mix.left += 1; break;
      case CensoringKind::Interval: mix.interval += 1; break;
      case CensoringKind::Right: mix.right += 1; break;
    }
  }
  const double n = static_cast<double>(data.size());
  mix.event /= n;
  mix.left /= n;
  mix.interval /= n;
  mix.right /= n;
  return mix;
}

struct ReplicateResult {
  std::size_t replicate = 0;
  bool included = false;
  std::string note;
  Vector estimate;  // (beta, gamma)
  Vector se;
  bool converged = false;
  int iterations = 0;
  double nu = 0.0;
  double h = 0.0;
  std::size_t active = 0;
  double wall_seconds = 0.0;
  CensoringMix mix;
};

struct CoefficientSummary {
  std::string name;
  double truth = 0.0;
  double bias = 0.0;
  double mcsd = 0.0;
  double aasd = 0.0;
  double cp_mcsd = 0.0;
  double cp_aasd = 0.0;
};

struct MonteCarloReport {
  std::size_t reps_requested = 0;
  std::size_t reps_used = 0;
  std::size_t excluded = 0;
  std::vector<CoefficientSummary> coefficients;
  CensoringMix mix;  // averaged over all replicates
  std::vector<ReplicateResult> replicates;
};

inline ReplicateResult run_replicate(const SimConfig& cfg, const FitOptions& opts, std::size_t rep) {
  ReplicateResult r;
  r.replicate = rep;
  const Dataset data = simulate_dataset(cfg, rep);
  r.mix = censoring_mix(data);
  try {
    const FitResult fit = aftpic::fit(data, opts);
    r.estimate = (Vector(3) << fit.params.beta, fit.params.gamma).finished();
    r.converged = fit.converged;
    r.iterations = fit.iterations;
    r.nu = fit.nu;
    r.h = fit.h;
    r.active = fit.active.size();
    r.wall_seconds = fit.wall_seconds;
    if (fit.covariance) r.se = (Vector(3) << fit.covariance->se_beta, fit.covariance->se_gamma).finished();
    if (!fit.converged) {
      r.note = "not converged";
    } else if (!fit.covariance) {
      r.note = "covariance failed: " + fit.covariance_error;
    } else {
      r.included = true;
    }
  } catch (const std::exception& e) {
    r.note = std::string("fit failed: ") + e.what();
  }
  return r;
}

/// Aggregates bias, MCSD, AASD and 95% normal-interval coverage over the
/// included replicates, in replicate order.
inline MonteCarloReport summarize(const SimConfig& cfg, std::vector<ReplicateResult> reps) {
  MonteCarloReport rep;
  rep.reps_requested = reps.size();
  const Vector truth = (Vector(3) << cfg.beta, cfg.gamma).finished();
  const char* names[] = {"beta1", "beta2", "gamma"};
  std::vector<const ReplicateResult*> used;
  for (const auto& r : reps) {
    rep.mix.event += r.mix.event;
    rep.mix.left += r.mix.left;
    rep.mix.interval += r.mix.interval;
    rep.mix.right += r.mix.right;
    if (r.included) used.push_back(&r);
  }
  if (!reps.empty()) {
    const double k = static_cast<double>(reps.size());
    rep.mix = {rep.mix.event / k, rep.mix.left / k, rep.mix.interval / k, rep.mix.right / k};
  }
  rep.reps_used = used.size();
  rep.excluded = reps.size() - used.size();
  const double nu = static_cast<double>(used.size());
  constexpr double z975 = 1.959963984540054;
  for (Eigen::Index c = 0; c < 3; ++c) {
    CoefficientSummary s;
    s.name = names[c];
    s.truth = truth[c];
    if (used.empty()) {
      s.bias = s.mcsd = s.aasd = s.cp_mcsd = s.cp_aasd = std::nan("");
      rep.coefficients.push_back(s);
      continue;
    }
    double mean = 0, aasd = 0;
    for (const auto* r : used) {
      mean += r->estimate[c];
      aasd += r->se[c];
    }
    mean /= nu;
    aasd /= nu;
    double ss = 0;
    for (const auto* r : used) ss += (r->estimate[c] - mean) * (r->estimate[c] - mean);
    s.bias = mean - s.truth;
    s.mcsd = used.size() > 1 ? std::sqrt(ss / (nu - 1.0)) : 0.0;
    s.aasd = aasd;
    double hit_mc = 0, hit_as = 0;
    for (const auto* r : used) {
      const double err = std::abs(r->estimate[c] - s.truth);
      if (err <= z975 * s.mcsd) hit_mc += 1;
      if (err <= z975 * r->se[c]) hit_as += 1;
    }
    s.cp_mcsd = hit_mc / nu;
    s.cp_aasd = hit_as / nu;
    rep.coefficients.push_back(s);
  }
  rep.replicates = std::move(reps);
  return rep;
}

/// Runs `reps` independent simulate-and-fit rounds on `threads` workers.
/// Replicate r always uses stream (cfg.seed, r), so results do not depend on
/// the thread count. `progress` is called under a lock after each replicate.
inline MonteCarloReport monte_carlo(const SimConfig& cfg, std::size_t reps, const FitOptions& opts,
                                    unsigned threads = 0,
                                    const std::function<void(const ReplicateResult&)>& progress = {}) {
  cfg.validate();
  opts.validate();
  if (reps < 2) throw InvalidInput("monte_carlo needs at least 2 replicates");
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, reps));

  std::vector<ReplicateResult> results(reps);
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (std::size_t r = next++; r < reps; r = next++) {
      results[r] = run_replicate(cfg, opts, r);
      if (progress) {
        std::lock_guard lock(report_mutex);
        progress(results[r]);
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
  }
  return summarize(cfg, std::move(results));
}

}  // namespace aftpic

#endif
