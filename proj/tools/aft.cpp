// Command-line front end: fit, simulate, predict.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "aftpic/aftpic.hpp"

namespace fs = std::filesystem;
using namespace aftpic;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNotConverged = 2;

FlatConfig load_settings(const std::string& config_path, const std::vector<std::string>& overrides) {
  FlatConfig cfg;
  if (!config_path.empty()) cfg = read_flat_config(config_path);
  for (const auto& kv : overrides) {
    std::istringstream in(kv);
    for (const auto& [k, v] : parse_flat_config(in, "--set")) cfg[k] = v;
  }
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

struct FitArgs {
  std::string data;
  std::string subjects;
  std::string config;
  std::string out;
  std::vector<std::string> set;
  long m = 0;
  bool strict = false;
  std::size_t baseline_points = 201;
};

int cmd_fit(const FitArgs& a) {
  FlatConfig settings = load_settings(a.config, a.set);
  if (a.m > 0) settings["m"] = std::to_string(a.m);
  ColumnMapping mapping;
  apply_column_mapping(settings, mapping);
  bool strict = a.strict;
  if (auto it = settings.find("format"); it != settings.end()) {
    if (it->second == "strict") strict = true;
    else if (it->second != "companion") throw InvalidInput("config: format must be 'companion' or 'strict'");
  }
  FitOptions opts;
  for (const auto& key : apply_fit_options(settings, opts))
    if (key != "x_columns" && key != "z_columns" && key != "format")
      std::cerr << "warning: unknown config key '" << key << "' ignored\n";

  Dataset data;
  if (strict) {
    data = ingest_strict(read_csv_file(a.data), mapping);
  } else {
    if (a.subjects.empty()) throw InvalidInput("--subjects is required unless the strict long format is used");
    data = ingest_files(a.data, a.subjects, mapping);
  }
  std::cerr << "fitting n=" << data.size() << " p=" << data.p() << " q=" << data.q() << '\n';

  const FitResult fit = aftpic::fit(data, opts);
  const fs::path out(a.out);
  ensure_dir(out);
  Json base = Json::object();
  if (fs::exists(out / "fit.json")) {
    // Keep fields written by other tools.
    std::ifstream in(out / "fit.json");
    try {
      base = Json::parse(in);
      if (!base.is_object()) base = Json::object();
    } catch (const Json::exception&) {
      base = Json::object();
    }
  }
  write_json(fit_to_json(fit, data, opts, std::move(base)), out / "fit.json");
  auto bl = open_out(out / "baseline.csv");
  write_baseline_csv(fit.cfg, fit.params.theta, a.baseline_points, bl);

  std::cerr << "iterations=" << fit.iterations << " outer=" << fit.outer_iterations << " nu=" << fit.nu
            << " h=" << fit.h << " active=" << fit.active.size() << " wall=" << fit.wall_seconds << "s\n";
  if (fit.covariance) {
    for (const auto& r : wald_table(fit, *fit.covariance, data.x_names, data.z_names))
      std::printf("%-16s % .6f  se %.6f  z % .3f  p %.4g\n", r.name.c_str(), r.estimate, r.se, r.z, r.p_value);
  } else {
    std::cerr << "covariance unavailable: " << fit.covariance_error << '\n';
  }
  if (!fit.converged) {
    std::cerr << "did not converge (inner=" << fit.inner_converged << ", nu_stable=" << fit.nu_stable
              << (fit.smoothing_note.empty() ? "" : ", " + fit.smoothing_note) << ")\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

struct SimulateArgs {
  std::size_t n = 100;
  double pi_event = 0.7;
  double alpha_l = 0.0;
  double alpha_r = 0.0;
  double gamma = -0.1;
  std::uint64_t seed = 1;
  std::size_t reps = 0;
  unsigned threads = 0;
  long m = 0;
  std::string config;
  std::vector<std::string> set;
  std::string out;
};

void write_report(const MonteCarloReport& rep, const fs::path& out) {
  auto csv = open_out(out / "report.csv");
  csv << "coefficient,truth,bias,mcsd,aasd,cp_mcsd,cp_aasd\n";
  for (const auto& c : rep.coefficients)
    csv << c.name << ',' << format_double(c.truth) << ',' << format_double(c.bias) << ',' << format_double(c.mcsd)
        << ',' << format_double(c.aasd) << ',' << format_double(c.cp_mcsd) << ',' << format_double(c.cp_aasd) << '\n';

  auto reps = open_out(out / "replicates.csv");
  reps << "replicate,included,converged,beta1,beta2,gamma,se_beta1,se_beta2,se_gamma,nu,h,active,iterations,"
          "pi_event,pi_left,pi_interval,pi_right,note\n";
  for (const auto& r : rep.replicates) {
    reps << r.replicate << ',' << r.included << ',' << r.converged;
    for (Eigen::Index c = 0; c < 3; ++c) reps << ',' << (r.estimate.size() ? format_double(r.estimate[c]) : "");
    for (Eigen::Index c = 0; c < 3; ++c) reps << ',' << (r.se.size() ? format_double(r.se[c]) : "");
    reps << ',' << format_double(r.nu) << ',' << format_double(r.h) << ',' << r.active << ',' << r.iterations << ','
         << format_double(r.mix.event) << ',' << format_double(r.mix.left) << ',' << format_double(r.mix.interval)
         << ',' << format_double(r.mix.right) << ',' << '"' << r.note << '"' << '\n';
  }

  Json j;
  j["reps_requested"] = rep.reps_requested;
  j["reps_used"] = rep.reps_used;
  j["excluded"] = rep.excluded;
  j["censoring"] = {{"event", rep.mix.event}, {"left", rep.mix.left}, {"interval", rep.mix.interval},
                    {"right", rep.mix.right}};
  for (const auto& c : rep.coefficients)
    j["coefficients"].push_back({{"name", c.name},
                                 {"truth", c.truth},
                                 {"bias", c.bias},
                                 {"mcsd", c.mcsd},
                                 {"aasd", c.aasd},
                                 {"cp_mcsd", c.cp_mcsd},
                                 {"cp_aasd", c.cp_aasd}});
  write_json(j, out / "report.json");
}

int cmd_simulate(const SimulateArgs& a, const CLI::App& app) {
  FlatConfig settings = load_settings(a.config, a.set);
  if (a.m > 0) settings["m"] = std::to_string(a.m);
  FitOptions opts;
  for (const auto& key : apply_fit_options(settings, opts))
    std::cerr << "warning: unknown config key '" << key << "' ignored\n";

  SimConfig cfg;
  cfg.n = a.n;
  cfg.pi_event = a.pi_event;
  cfg.gamma = a.gamma;
  cfg.seed = a.seed;
  const bool have_l = app.count("--alpha-l") > 0, have_r = app.count("--alpha-r") > 0;
  if (!have_l || !have_r) {
    const CensoringScales s = calibrated_scales(a.pi_event);
    cfg.alpha_l = have_l ? a.alpha_l : s.alpha_l;
    cfg.alpha_r = have_r ? a.alpha_r : s.alpha_r;
  } else {
    cfg.alpha_l = a.alpha_l;
    cfg.alpha_r = a.alpha_r;
  }
  cfg.validate();

  const fs::path out(a.out);
  ensure_dir(out);
  const Dataset data = simulate_dataset(cfg, 0);
  emit_files(data, out / "data.csv", out / "subjects.csv");
  const CensoringMix mix = censoring_mix(data);
  std::cerr << "simulated n=" << data.size() << " event=" << mix.event << " left=" << mix.left
            << " interval=" << mix.interval << " right=" << mix.right << '\n';

  if (a.reps > 0) {
    if (opts.m == 0) opts.m = default_basis_count(cfg.n);
    const MonteCarloReport rep = monte_carlo(cfg, a.reps, opts, a.threads, [&](const ReplicateResult& r) {
      std::cerr << "rep " << r.replicate << (r.included ? " ok" : " excluded: " + r.note) << " (" << r.wall_seconds
                << "s)\n";
    });
    write_report(rep, out);
    std::printf("reps used %zu of %zu\n", rep.reps_used, rep.reps_requested);
    for (const auto& c : rep.coefficients)
      std::printf("%-6s bias % .4f  MCSD %.4f  AASD %.4f  CP(MCSD) %.3f  CP(AASD) %.3f\n", c.name.c_str(), c.bias,
                  c.mcsd, c.aasd, c.cp_mcsd, c.cp_aasd);
  }
  return kExitOk;
}

struct PredictArgs {
  std::string fit;
  std::string scenarios;
  double t_max = 1.0;
  std::size_t t_steps = 100;
  std::string out;
};

int cmd_predict(const PredictArgs& a) {
  const FitArtifact art = read_fit_artifact(a.fit);
  const auto scenarios = read_scenarios(read_csv_file(a.scenarios), art.x_names, art.z_names);
  if (!(a.t_max > 0.0) || a.t_steps < 1) throw InvalidInput("--t-max must be > 0 and --t-steps >= 1");
  std::vector<double> grid(a.t_steps + 1);
  for (std::size_t i = 0; i <= a.t_steps; ++i)
    grid[i] = a.t_max * static_cast<double>(i) / static_cast<double>(a.t_steps);

  const fs::path out(a.out);
  ensure_dir(out);
  auto surv = open_out(out / "survival.csv");
  auto ratio = open_out(out / "ratio.csv");
  surv << "scenario,t,survival\n";
  ratio << "scenario,measure,t,ratio,reciprocal\n";
  auto emit_ratio = [&](const std::string& name, const std::string& measure, const std::vector<double>& r) {
    for (std::size_t i = 0; i < grid.size(); ++i)
      ratio << name << ',' << measure << ',' << format_double(grid[i]) << ',' << format_double(r[i]) << ','
            << format_double(1.0 / r[i]) << '\n';
  };
  for (const auto& sc : scenarios) {
    const auto s = predict_survival(art.params, art.cfg, sc.x, sc.z, grid);
    for (std::size_t i = 0; i < grid.size(); ++i)
      surv << sc.name << ',' << format_double(grid[i]) << ',' << format_double(s[i]) << '\n';
    for (std::size_t j = 0; j < art.x_names.size(); ++j)
      emit_ratio(sc.name, "x:" + art.x_names[j],
                 survival_ratio_fixed(art.params, art.cfg, sc.x, sc.z, static_cast<Eigen::Index>(j), grid));
    if (!art.z_names.empty())
      emit_ratio(sc.name, "treatment", survival_ratio_treatment(art.params, art.cfg, sc.x, sc.z, grid));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semiparametric AFT models with time-varying covariates for partly interval-censored data"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit a model to long-format data");
  fit->add_option("--data", fa.data, "Long-format trajectories (id,start,end,status,z...)")->required();
  fit->add_option("--subjects", fa.subjects, "Companion table (id,yL,yR,kind,x...)");
  fit->add_option("--config", fa.config, "Flat key = value settings");
  fit->add_option("--set", fa.set, "Override one setting, key=value (repeatable)");
  fit->add_option("--m", fa.m, "Number of basis functions (default: cube root of n)");
  fit->add_flag("--strict", fa.strict, "Infer censoring from the status column only");
  fit->add_option("--baseline-points", fa.baseline_points, "Rows in baseline.csv")->check(CLI::PositiveNumber);
  fit->add_option("--out", fa.out, "Output directory")->required();

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Simulate data and optionally run a Monte Carlo study");
  sim->add_option("--n", sa.n, "Subjects per dataset")->required();
  sim->add_option("--pi-event", sa.pi_event, "Event proportion")->required();
  sim->add_option("--alpha-l", sa.alpha_l, "Left censoring-interval scale (default: calibrated)");
  sim->add_option("--alpha-r", sa.alpha_r, "Right censoring-interval scale (default: calibrated)");
  sim->add_option("--gamma", sa.gamma, "True coefficient of the time-varying covariate");
  sim->add_option("--seed", sa.seed, "Random seed");
  sim->add_option("--reps", sa.reps, "Monte Carlo replications (0: dataset only)");
  sim->add_option("--threads", sa.threads, "Worker threads (0: all cores)");
  sim->add_option("--m", sa.m, "Number of basis functions for replicate fits");
  sim->add_option("--config", sa.config, "Flat key = value fit settings");
  sim->add_option("--set", sa.set, "Override one fit setting, key=value (repeatable)");
  sim->add_option("--out", sa.out, "Output directory")->required();

  PredictArgs pa;
  auto* pred = app.add_subcommand("predict", "Survival curves and ratios for covariate scenarios");
  pred->add_option("--fit", pa.fit, "fit.json from `aft fit`")->required();
  pred->add_option("--scenarios", pa.scenarios, "Scenario table (scenario,tau,covariates...)")->required();
  pred->add_option("--t-max", pa.t_max, "Largest time on the grid")->required();
  pred->add_option("--t-steps", pa.t_steps, "Number of grid intervals")->required();
  pred->add_option("--out", pa.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  try {
    if (*fit) return cmd_fit(fa);
    if (*sim) return cmd_simulate(sa, *sim);
    if (*pred) return cmd_predict(pa);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
