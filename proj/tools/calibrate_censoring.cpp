// Finds (alpha_l, alpha_r) whose simulated censoring mix matches target
// proportions, by coarse-to-fine grid search on a fixed set of draws.
//
//   calibrate_censoring --pi-event 0.7 --left 0.08 --interval 0.14 --right 0.08

#include <cmath>
#include <cstdio>
#include <vector>

#include "CLI11.hpp"

#include "aftpic/simulation.hpp"

using namespace aftpic;

int main(int argc, char** argv) {
  CLI::App app{"Calibrate censoring-interval scales"};
  double pi_event = 0.7, left = 0.08, interval = 0.14, right = 0.08, gamma = -0.1;
  std::size_t n = 100000;
  std::uint64_t seed = 20240101;
  app.add_option("--pi-event", pi_event)->required();
  app.add_option("--left", left)->required();
  app.add_option("--interval", interval)->required();
  app.add_option("--right", right)->required();
  app.add_option("--gamma", gamma);
  app.add_option("--n", n);
  app.add_option("--seed", seed);
  CLI11_PARSE(app, argc, argv);

  SimConfig cfg;
  cfg.pi_event = pi_event;
  cfg.gamma = gamma;
  cfg.seed = seed;
  std::vector<SubjectDraws> draws(n);
  for (std::size_t i = 0; i < n; ++i) {
    SubjectStream rng(seed, 0, i);
    simulate_subject(cfg, rng, &draws[i]);
  }

  auto mix = [&](double al, double ar) {
    CensoringMix m;
    for (const auto& d : draws) {
      switch (observe(d.t, d.ue, d.ul, d.ur, pi_event, al, ar).kind) {
        case CensoringKind::Event: m.event += 1; break;
        case CensoringKind::Left: m.left += 1; break;
        case CensoringKind::Interval: m.interval += 1; break;
        case CensoringKind::Right: m.right += 1; break;
      }
    }
    const double k = static_cast<double>(n);
    return CensoringMix{m.event / k, m.left / k, m.interval / k, m.right / k};
  };
  auto loss = [&](double al, double ar) {
    const CensoringMix m = mix(al, ar);
    return std::pow(m.left - left, 2) + std::pow(m.interval - interval, 2) + std::pow(m.right - right, 2);
  };

  double best_l = 1.0, best_r = 2.0, lo_l = 0.01, hi_l = 4.0, lo_r = 0.01, hi_r = 6.0;
  double best = loss(best_l, best_r);
  for (int level = 0; level < 6; ++level) {
    constexpr int kSteps = 24;
    for (int i = 0; i <= kSteps; ++i) {
      for (int j = 0; j <= kSteps; ++j) {
        const double al = lo_l + (hi_l - lo_l) * i / kSteps;
        const double ar = lo_r + (hi_r - lo_r) * j / kSteps;
        if (al > ar) continue;  // the pair is symmetric after ordering; keep alpha_l <= alpha_r
        const double v = loss(al, ar);
        if (v < best) {
          best = v;
          best_l = al;
          best_r = ar;
        }
      }
    }
    const double wl = (hi_l - lo_l) / 6.0, wr = (hi_r - lo_r) / 6.0;
    lo_l = std::max(1e-3, best_l - wl);
    hi_l = best_l + wl;
    lo_r = std::max(1e-3, best_r - wr);
    hi_r = best_r + wr;
  }
  const CensoringMix m = mix(best_l, best_r);
  std::printf("alpha_l %.4f alpha_r %.4f\n", best_l, best_r);
  std::printf("event %.4f left %.4f interval %.4f right %.4f (rms error %.2e)\n", m.event, m.left, m.interval,
              m.right, std::sqrt(best / 3.0));
  return 0;
}
