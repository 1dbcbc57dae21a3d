// subhaz: simulate recurrent-event data with sensor histories, fit the subsampled
// functional hazard model, and run the replicate studies.
#include "subhaz/dataset_io.hpp"
#include "subhaz/eval.hpp"
#include "subhaz/impute.hpp"
#include "subhaz/io.hpp"
#include "subhaz/mixed.hpp"
#include "subhaz/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#ifndef SUBHAZ_GIT_DESCRIBE
#define SUBHAZ_GIT_DESCRIBE "unknown"
#endif

using namespace subhaz;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// Bumped whenever a column or field changes meaning.
const json kSchemas = {{"subjects.csv", 1}, {"sensor.csv", 1},  {"events.csv", 1},   {"samples.csv", 1},
                       {"fit.json", 1},     {"beta.csv", 1},    {"blup.csv", 1},     {"bootmi.json", 1},
                       {"table.csv", 1},    {"eval.json", 1},   {"diagnose.json", 1}, {"design.csv", 1}};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail_io("cannot create directory " + dir + ": " + ec.message());
}

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json vec_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
  return a;
}

json mat_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

Vec json_vec(const json& a) {
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

// Simulation parameters shared by simulate and eval.
struct SimArgs {
  SimConfig cfg;
  std::string beta_kind = "sine";
  std::optional<double> beta0, beta1;
  std::string design = "constant";
  double rate = 2.0;
  double c = 1.0;

  void add_beta(CLI::App* app) {
    app->add_option("--beta", beta_kind, "true coefficient function")
        ->check(CLI::IsMember({"sine", "exp"}))
        ->capture_default_str();
    app->add_option("--beta0", beta0, "beta0 (exp: offset; default 2 for exp, 0 for sine)");
    app->add_option("--beta1", beta1, "beta1 (default 16 for sine, 4 for exp)");
    app->add_option("--beta-delta", cfg.beta.delta, "true window length in hours")->capture_default_str();
  }

  void add(CLI::App* app) {
    app->add_option("--user-days", cfg.user_days, "number of simulated user-days")->capture_default_str();
    app->add_option("--steps", cfg.steps, "sensor grid points per day")->capture_default_str();
    app->add_option("--day-length", cfg.day_length, "day length in hours")->capture_default_str();
    app->add_option("--nu", cfg.matern.nu, "Matern smoothness")->capture_default_str();
    app->add_option("--sigma2", cfg.matern.sigma2, "Matern variance")->capture_default_str();
    app->add_option("--rho", cfg.matern.rho, "Matern range in hours")->capture_default_str();
    add_beta(app);
    app->add_option("--theta0", cfg.theta0, "log baseline hazard per grid step")->capture_default_str();
    app->add_option("--design", design, "subsampling design")
        ->check(CLI::IsMember({"constant", "proportional"}))
        ->capture_default_str();
    app->add_option("--rate", rate, "constant design: samples per hour")->capture_default_str();
    app->add_option("--c", c, "proportional design: pi(t) = c h(t)")->capture_default_str();
    app->add_option("--lower", cfg.design.lower, "lower bound on pi")->capture_default_str();
    app->add_option("--upper", cfg.design.upper, "upper bound on pi")->capture_default_str();
    app->add_option("--entry", cfg.entry, "start of the at-risk period (default: beta delta)");
    app->add_flag("--zero-pad", cfg.zero_pad, "treat the sensor as 0 before the start of the day");
    app->add_option("--mcar", cfg.mcar, "fraction of sensor values masked completely at random")
        ->capture_default_str();
  }

  void resolve_beta() {
    const bool sine = beta_kind == "sine";
    cfg.beta.kind = sine ? TrueBeta::Kind::sine : TrueBeta::Kind::exp_decay;
    cfg.beta.beta0 = beta0.value_or(sine ? 0.0 : 2.0);
    cfg.beta.beta1 = beta1.value_or(sine ? 16.0 : 4.0);
  }

  void resolve() {
    resolve_beta();
    if (design == "constant") {
      cfg.design.kind = SamplingDesign::Kind::constant_rate;
      cfg.design.rate_or_c = rate;
    } else {
      cfg.design.kind = SamplingDesign::Kind::proportional_to_hazard;
      cfg.design.rate_or_c = c;
    }
    cfg.validate();
  }
};

// Functional-model parameters shared by fit and impute-diagnose.
struct ModelArgs {
  ModelConfig cfg;
  std::vector<double> deltas;
  std::vector<std::string> features{"intercept"};
  std::string mean = "estimate";
  std::string cov = "estimate";
  MaternParams matern;
  std::vector<double> fixed_sigma2;

  void add(CLI::App* app) {
    app->add_option("--delta", deltas, "window length in hours, one per sensor stream (default 0.5)");
    app->add_option("--m", cfg.m, "window grid points")->capture_default_str();
    app->add_option("--kx", cfg.k_x, "number of eigenfunctions K_x")->capture_default_str();
    app->add_option("--kb", cfg.k_b, "spline basis size K_b")->capture_default_str();
    app->add_option("--features", features, "history features: intercept, time, count, since_last")
        ->capture_default_str();
    app->add_option("--mean", mean, "window mean: estimate or zero")
        ->check(CLI::IsMember({"estimate", "zero"}))
        ->capture_default_str();
    app->add_option("--cov", cov, "window covariance: estimate or matern")
        ->check(CLI::IsMember({"estimate", "matern"}))
        ->capture_default_str();
    app->add_option("--cov-nu", matern.nu, "known Matern smoothness (--cov matern)")->capture_default_str();
    app->add_option("--cov-sigma2", matern.sigma2, "known Matern variance (--cov matern)")->capture_default_str();
    app->add_option("--cov-rho", matern.rho, "known Matern range (--cov matern)")->capture_default_str();
    app->add_flag("--pooled-labels", cfg.pooled_labels, "share one mean and covariance across event and sampled windows");
    app->add_flag("--window-zero-pad", cfg.zero_pad, "windows reaching before the day read as 0");
    app->add_option("--fixed-sigma2", fixed_sigma2, "fixed smoothing variance per stream");
    app->add_option("--max-outer", cfg.fit.max_outer, "alternating fit iterations")->capture_default_str();
  }

  void resolve() {
    if (deltas.empty()) deltas.push_back(cfg.delta);
    cfg.delta = deltas.front();
    cfg.features.clear();
    for (const auto& f : features) cfg.features.push_back(parse_feature(f));
    cfg.fpca.k_x = cfg.k_x;
    cfg.fpca.known_mean_zero = mean == "zero";
    if (cov == "matern") cfg.fpca.known_cov = matern;
    cfg.fit.fixed_sigma2 = fixed_sigma2;
    cfg.validate();
    for (double d : deltas)
      if (!(d > 0)) fail_validation("window lengths must be positive");
  }
};

struct Manifest {
  std::string command;
  std::string config;
  json summary = json::object();

  void write(const std::string& dir) const {
    json j;
    j["command"] = command;
    j["version"] = SUBHAZ_GIT_DESCRIBE;
    j["schemas"] = kSchemas;
    j["config"] = config;
    j["summary"] = summary;
    write_text(path_in(dir, "manifest.json"), j.dump(2) + "\n");
  }
};

void write_timing(const std::string& dir, const json& t) { write_text(path_in(dir, "timing.json"), t.dump(2) + "\n"); }

std::vector<double> curve_grid(double delta, int points) {
  if (points < 2) fail_validation("beta curves need at least 2 points");
  return linspace(0.0, delta, static_cast<std::size_t>(points));
}

std::string curve_csv(const BetaCurve& c, bool with_ci) {
  std::ostringstream os;
  os << "t,estimate,lower,upper,significant\n";
  for (std::size_t i = 0; i < c.t.size(); ++i) {
    os << fmt(c.t[i]) << ',' << fmt(c.est[i]) << ',';
    if (with_ci)
      os << fmt(c.lo[i]) << ',' << fmt(c.hi[i]) << ',' << int(c.significant[i]);
    else
      os << "NA,NA,NA";
    os << '\n';
  }
  return os.str();
}

json streams_json(const std::vector<SplineBasis>& bases, const std::vector<int>& offsets, const Vec& theta) {
  json a = json::array();
  for (std::size_t l = 0; l < bases.size(); ++l) {
    json s;
    s["stream"] = l;
    s["delta"] = bases[l].delta;
    s["k_b"] = bases[l].k_b;
    s["b"] = vec_json(theta.segment(offsets[l], bases[l].k_b));
    a.push_back(s);
  }
  return a;
}

json warnings_json(const std::vector<std::string>& w) { return json(w); }

// Completed copies of every subject; draw m of subject i uses make_rng(seed, i, 5, m)
// and walks the streams in order.
std::vector<std::vector<SubjectData>> impute_all(std::span<const SubjectData> subjects,
                                                 std::span<const StreamModel> models, int M, std::uint64_t seed) {
  std::vector<std::vector<SubjectData>> out(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    auto& done = out[static_cast<std::size_t>(m)];
    done.assign(subjects.begin(), subjects.end());
    for (auto& s : done) {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(s.path.subject_id), 5, static_cast<std::uint64_t>(m));
      for (const auto& sm : models) impute_in_place(s, sm, rng);
    }
  }
  return out;
}

std::vector<StreamModel> observed_models(std::span<const SubjectData> subjects, const ModelArgs& ma,
                                         std::vector<std::string>* warnings) {
  std::vector<StreamModel> models;
  for (std::size_t l = 0; l < ma.deltas.size(); ++l) {
    ModelConfig c = ma.cfg;
    c.delta = ma.deltas[l];
    models.push_back(build_stream_model(subjects, l, c, warnings));
  }
  return models;
}

// ---------------------------------------------------------------------------

struct SimulateCmd {
  SimArgs sim;
  std::uint64_t seed = 1;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("simulate", "simulate user-days with subsampled non-event times");
    sim.add(c);
    c->add_option("--seed", seed, "random seed")->capture_default_str();
    c->add_option("--out", out, "output directory")->required();
  }

  void run(Manifest& man, json& timing) {
    sim.resolve();
    const auto t0 = Clock::now();
    const Dataset ds = simulate_dataset(sim.cfg, seed);
    const StoredDataset st = to_stored(ds);
    write_dataset(out, st);
    const int events = ds.total_events(), samples = ds.total_samples();
    man.summary["user_days"] = ds.subjects.size();
    man.summary["events"] = events;
    man.summary["samples"] = samples;
    man.summary["events_per_day"] = ds.subjects.empty() ? json(nullptr) : json(double(events) / ds.subjects.size());
    man.summary["missing_values"] = st.missing_values();
    man.summary["sensor_values"] = st.sensor_values();
    man.summary["seed"] = seed;
    std::cerr << "simulated " << ds.subjects.size() << " user-days, " << events << " events, " << samples
              << " sampled times\n";
    timing["simulate_secs"] = seconds_since(t0);
  }
};

struct FitCmd {
  ModelArgs model;
  std::string data, design, out;
  std::string multilevel = "none";
  int n_gq = 7;
  int impute = 0;
  bool boot = false;
  int B = 20, M = 2;
  std::string df = "b-1";
  std::uint64_t seed = 1;
  bool export_design = false;
  int points = 101;
  CLI::App* cmd = nullptr;

  void add(CLI::App& app) {
    cmd = app.add_subcommand("fit", "fit the functional hazard model");
    auto* d = cmd->add_option("--data", data, "dataset directory written by simulate");
    auto* x = cmd->add_option("--design", design, "design CSV written by fit --export-design");
    d->excludes(x);
    model.add(cmd);
    cmd->add_option("--multilevel", multilevel, "random effects: none, intercept or functional")
        ->check(CLI::IsMember({"none", "intercept", "functional"}))
        ->capture_default_str();
    cmd->add_option("--n-gq", n_gq, "adaptive Gauss-Hermite nodes per dimension")->capture_default_str();
    cmd->add_option("--impute", impute, "fit M imputed copies and average (0: off)")->capture_default_str();
    cmd->add_flag("--boot-mi", boot, "bootstrap-then-impute inference");
    cmd->add_option("--B", B, "bootstrap replicates")->capture_default_str();
    cmd->add_option("--M", M, "imputations per bootstrap replicate")->capture_default_str();
    cmd->add_option("--df", df, "interval degrees of freedom: b-1 or normal")
        ->check(CLI::IsMember({"b-1", "normal"}))
        ->capture_default_str();
    cmd->add_option("--seed", seed, "random seed for imputation and bootstrap")->capture_default_str();
    cmd->add_flag("--export-design", export_design, "write design.csv");
    cmd->add_option("--points", points, "points per beta curve")->capture_default_str();
    cmd->add_option("--out", out, "output directory")->required();
  }

  void write_curves(const std::vector<SplineBasis>& bases, const std::function<BetaCurve(std::size_t)>& curve,
                    bool with_ci) const {
    for (std::size_t l = 0; l < bases.size(); ++l)
      write_text(path_in(out, "beta_s" + std::to_string(l) + ".csv"), curve_csv(curve(l), with_ci));
  }

  void run(Manifest& man, json& timing) {
    if (data.empty() && design.empty()) fail_validation("fit needs --data or --design");
    model.resolve();
    if (n_gq < 1) fail_validation("--n-gq must be at least 1");
    if (impute < 0) fail_validation("--impute must be nonnegative");
    ensure_dir(out);
    const RandomEffects re = parse_random_effects(multilevel);

    if (!design.empty()) {
      if (impute > 0 || boot) fail_validation("imputation needs the dataset, not a design CSV");
      Design d = read_design_csv(design);
      attach_bases(d);
      const auto t0 = Clock::now();
      if (re == RandomEffects::none) {
        const FitResult f = fit_alternating(d, model.cfg.fit);
        timing["fit_secs"] = seconds_since(t0);
        write_fit(f, d, man);
      } else {
        fit_mixed(d, man);
        timing["fit_secs"] = seconds_since(t0);
      }
      return;
    }

    const StoredDataset st = read_dataset(data);
    const PiAtEvent pi = st.pi();
    man.summary["subjects"] = st.subjects.size();
    man.summary["missing_values"] = st.missing_values();

    if (boot) {
      BootMiOptions opt;
      opt.B = B;
      opt.M = M;
      opt.df_rule = df == "normal" ? DfRule::normal : DfRule::b_minus_1;
      const auto t0 = Clock::now();
      const BootMiResult r = boot_mi(st.subjects, pi, model.cfg, opt, seed, model.deltas);
      timing["boot_mi_secs"] = seconds_since(t0);
      write_text(path_in(out, "bootmi.json"), boot_mi_json(r) + "\n");
      write_curves(
          r.bases,
          [&](std::size_t l) { return boot_mi_beta_curve(r, l, curve_grid(r.bases[l].delta, points)); }, true);
      man.summary["dropped"] = r.dropped;
      man.summary["floored"] = r.floored;
      return;
    }

    if (impute > 0) {
      std::vector<std::string> warnings;
      const auto t0 = Clock::now();
      const auto models = observed_models(st.subjects, model, &warnings);
      const auto copies = impute_all(st.subjects, models, impute, seed);
      std::vector<Vec> thetas;
      PipelineFit first;
      for (int m = 0; m < impute; ++m) {
        PipelineFit pf = fit_dataset(copies[static_cast<std::size_t>(m)], pi, model.cfg, model.deltas);
        thetas.push_back(pf.fit.theta);
        if (m == 0) first = std::move(pf);
      }
      // x1 + mean(x_m - x1) returns x1 exactly when every copy agrees.
      Vec point = thetas.front();
      Vec shift = Vec::Zero(point.size());
      for (const auto& t : thetas) shift += t - thetas.front();
      point += shift / static_cast<double>(impute);
      timing["fit_secs"] = seconds_since(t0);
      FitResult f = first.fit;
      f.theta = point;
      f.warnings.insert(f.warnings.begin(), warnings.begin(), warnings.end());
      json extra;
      extra["imputations"] = impute;
      json per = json::array();
      for (const auto& t : thetas) per.push_back(vec_json(t));
      extra["theta_m"] = per;
      write_fit(f, first.design, man, &extra, impute == 1);
      return;
    }

    const auto t0 = Clock::now();
    const PipelineFit pf = fit_dataset(st.subjects, pi, model.cfg, model.deltas);
    if (export_design) write_design_csv(pf.design, path_in(out, "design.csv"));
    if (re == RandomEffects::none) {
      timing["fit_secs"] = seconds_since(t0);
      write_fit(pf.fit, pf.design, man);
    } else {
      fit_mixed(pf.design, man);
      timing["fit_secs"] = seconds_since(t0);
    }
  }

  // Design CSVs carry no basis; rebuild it from the column count and --delta.
  void attach_bases(Design& d) const {
    const int groups = penalty_groups(d);
    if (static_cast<int>(model.deltas.size()) != groups)
      fail_validation("the design has " + std::to_string(groups) + " basis blocks; give one --delta per block");
    d.bases.clear();
    d.block_offset.clear();
    for (int l = 0; l < groups; ++l) {
      int first = -1, k = 0;
      for (std::size_t j = 0; j < d.names.size(); ++j)
        if (d.names[j].rfind("s" + std::to_string(l) + "_b", 0) == 0) {
          if (first < 0) first = static_cast<int>(j);
          ++k;
        }
      if (first < 0) fail_validation("design has no basis columns for stream " + std::to_string(l));
      d.block_offset.push_back(first);
      d.bases.push_back(build_basis(k, model.deltas[static_cast<std::size_t>(l)]));
    }
  }

  void write_fit(const FitResult& f, const Design& d, Manifest& man, const json* extra = nullptr,
                 bool with_ci = true) const {
    json j;
    j["n_subjects"] = f.n_subjects;
    j["n_rows"] = d.rows();
    j["n_events"] = static_cast<long>(d.y.sum());
    j["names"] = f.names;
    j["theta"] = vec_json(f.theta);
    Vec se = f.cov_theta.size() ? Vec(f.cov_theta.diagonal().cwiseMax(0.0).cwiseSqrt()) : Vec();
    j["se"] = with_ci ? vec_json(se) : json(nullptr);
    j["sigma2"] = f.sigma2;
    j["converged"] = f.converged;
    j["outer_iterations"] = f.outer_iterations;
    j["irls_iterations"] = f.irls_iterations;
    j["grad_norm"] = num(f.grad_norm);
    j["warnings"] = warnings_json(f.warnings);
    j["streams"] = streams_json(f.bases, f.block_offset, f.theta);
    if (extra)
      for (auto it = extra->begin(); it != extra->end(); ++it) j[it.key()] = it.value();
    write_text(path_in(out, "fit.json"), j.dump(2) + "\n");
    write_curves(
        f.bases,
        [&](std::size_t l) { return beta_curve(f, l, curve_grid(f.bases[l].delta, points)); },
        with_ci);
    man.summary["converged"] = f.converged;
    man.summary["parameters"] = f.theta.size();
  }

  void fit_mixed(const Design& d, Manifest& man) const {
    MultilevelOptions opt;
    opt.re = parse_random_effects(multilevel);
    opt.n_gq = n_gq;
    opt.fixed = model.cfg.fit;
    const MultilevelResult r = fit_multilevel(d, opt);
    json j;
    j["names"] = r.names;
    j["theta"] = vec_json(r.theta);
    j["psi"] = mat_json(r.psi);
    j["sigma2"] = r.sigma2;
    j["n_gq"] = r.n_gq;
    j["loglik"] = num(r.loglik);
    j["score_norm"] = num(r.score_norm);
    j["outer_iterations"] = r.outer_iterations;
    j["converged"] = r.converged;
    j["warnings"] = warnings_json(r.warnings);
    j["streams"] = streams_json(d.bases, d.block_offset, r.theta);
    write_text(path_in(out, "fit.json"), j.dump(2) + "\n");
    write_text(path_in(out, "blup.csv"), blup_csv(r));
    write_curves(
        d.bases,
        [&](std::size_t l) {
          const auto& basis = d.bases[l];
          const Vec b = r.theta.segment(d.block_offset[l], basis.k_b);
          return beta_curve(basis, b, Mat::Zero(basis.k_b, basis.k_b), curve_grid(basis.delta, points));
        },
        false);
    man.summary["converged"] = r.converged;
    man.summary["n_gq"] = r.n_gq;
  }
};

ExperimentConfig make_preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "table2-sine") {
    c.sim.beta = {TrueBeta::Kind::sine, 0.0, 16.0, 0.5};
  } else if (name == "table2-exp") {
    c.sim.beta = {TrueBeta::Kind::exp_decay, 2.0, 4.0, 0.5};
  } else if (name == "table3" || name == "appendixC") {
    c.sim.beta = name == "table3" ? TrueBeta{TrueBeta::Kind::sine, 0.0, 16.0, 32.0 / 60.0}
                                  : TrueBeta{TrueBeta::Kind::exp_decay, 2.0, 4.0, 32.0 / 60.0};
    c.deltas = {26.0 / 60.0, 29.0 / 60.0, 32.0 / 60.0, 35.0 / 60.0, 37.0 / 60.0};
  } else {
    fail_validation("unknown preset " + name);
  }
  return c;
}

struct ReplicateCmd {
  std::string preset;
  std::optional<int> replicates, user_days;
  std::vector<double> rates;
  std::uint64_t seed = 1;
  int threads = 1;
  bool full_scale = false;
  bool known_fpca = false;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("replicate", "run a replicate study preset");
    c->add_option("--preset", preset, "table1, table2-sine, table2-exp, table3 or appendixC")
        ->required()
        ->check(CLI::IsMember({"table1", "table2-sine", "table2-exp", "table3", "appendixC"}));
    c->add_option("--replicates", replicates, "replicates (default 100)");
    c->add_option("--user-days", user_days, "user-days per replicate (default 100)");
    c->add_option("--rates", rates, "rate labels: hours between samples (default 0.5 1 2 4)");
    c->add_option("--seed", seed, "random seed")->capture_default_str();
    c->add_option("--threads", threads, "worker threads")->capture_default_str();
    c->add_flag("--full-scale", full_scale, "1000 replicates of 500 user-days");
    c->add_flag("--known-fpca", known_fpca, "use the true mean and covariance instead of estimating them");
    c->add_option("--out", out, "output directory")->required();
  }

  void run(Manifest& man, json& timing) {
    ensure_dir(out);
    const auto t0 = Clock::now();
    if (preset == "table1") {
      const std::vector<double> c{5, 10, 100}, hz{4, 32}, bounds{0.5, 1, 3, 5, 10};
      write_text(path_in(out, "table.csv"), efficiency_csv(efficiency_table(c, hz, bounds), bounds));
      timing["total_secs"] = seconds_since(t0);
      return;
    }
    ExperimentConfig c = make_preset(preset);
    c.replicates = full_scale ? 1000 : 100;
    c.sim.user_days = full_scale ? 500 : 100;
    if (replicates) c.replicates = *replicates;
    if (user_days) c.sim.user_days = *user_days;
    if (!rates.empty()) c.rate_labels = rates;
    if (known_fpca) {
      c.model.fpca.known_mean_zero = true;
      c.model.fpca.known_cov = c.sim.matern;
    }
    c.seed = seed;
    c.threads = threads;
    c.validate();
    const ExperimentResult r = replicate_experiment(c, [](int done, int total) {
      std::cerr << "replicate " << done << '/' << total << '\n';
    });
    write_text(path_in(out, "table.csv"), experiment_csv(r, false));
    std::ostringstream tcsv;
    tcsv << "delta,rate,runtime_secs\n";
    for (const auto& cell : r.cells)
      tcsv << fmt(cell.delta) << ',' << fmt(cell.rate_label) << ',' << fmt(cell.report.runtime_secs) << '\n';
    write_text(path_in(out, "timing.csv"), tcsv.str());
    std::ostringstream fails;
    for (const auto& f : r.failures) fails << f << '\n';
    write_text(path_in(out, "failures.txt"), fails.str());
    if (!r.failures.empty()) std::cerr << r.failures.size() << " fits failed; see failures.txt\n";
    man.summary["replicates"] = r.replicates;
    man.summary["failures"] = r.failures.size();
    man.summary["seed"] = seed;
    timing["total_secs"] = seconds_since(t0);
  }
};

struct EvalCmd {
  SimArgs truth;
  std::string fit;
  std::size_t stream = 0;
  std::optional<double> upper;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "integrated squared error of a fitted beta curve");
    c->add_option("--fit", fit, "fit.json written by fit")->required();
    c->add_option("--stream", stream, "stream index")->capture_default_str();
    truth.add_beta(c);
    c->add_option("--upper", upper, "integration limit (default 1.25 max delta)");
    c->add_option("--out", out, "output directory")->required();
  }

  void run(Manifest& man) {
    truth.resolve_beta();
    truth.cfg.beta.validate();
    json j;
    try {
      j = json::parse(read_text(fit));
    } catch (const json::exception& e) {
      fail_io(fit + ": " + e.what());
    }
    if (!j.contains("streams") || stream >= j["streams"].size())
      fail_validation(fit + " has no stream " + std::to_string(stream));
    const json& s = j["streams"][stream];
    const double delta = s["delta"].get<double>();
    const SplineBasis basis = build_basis(s["k_b"].get<int>(), delta);
    const Vec b = json_vec(s["b"]);
    const TrueBeta& beta = truth.cfg.beta;
    const double lim = upper.value_or(1.25 * std::max(delta, beta.delta));
    std::vector<double> breaks{delta, beta.delta};
    const EvalGrid g = make_eval_grid(breaks, lim);
    const Vec tv = eval_curve([&](double x) { return beta(x); }, g);
    Mat curves(1, static_cast<Eigen::Index>(g.s.size()));
    curves.row(0) = eval_curve(basis, b, g).transpose();
    const double norm = beta.integrated_square();
    const MiseReport rep = mise(curves, tv, g, norm);
    json r;
    r["stream"] = stream;
    r["delta_fit"] = delta;
    r["delta_true"] = beta.delta;
    r["upper"] = lim;
    r["norm"] = norm;
    r["ise"] = rep.mise;
    r["partial_ise"] = partial_mise(curves, tv, g, delta, beta.delta, norm);
    ensure_dir(out);
    write_text(path_in(out, "eval.json"), r.dump(2) + "\n");
    man.summary["ise"] = rep.mise;
  }
};

struct DiagnoseCmd {
  ModelArgs model;
  std::string data, out;
  int M = 1;
  std::uint64_t seed = 1;
  bool write_imputed = false;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("impute-diagnose", "missingness summary and sequential imputation");
    c->add_option("--data", data, "dataset directory")->required();
    model.add(c);
    c->add_option("--M", M, "imputed copies")->capture_default_str();
    c->add_option("--seed", seed, "random seed")->capture_default_str();
    c->add_flag("--write-imputed", write_imputed, "write each completed dataset to imputed_<m>/");
    c->add_option("--out", out, "output directory")->required();
  }

  void run(Manifest& man, json& timing) {
    model.resolve();
    if (M < 1) fail_validation("--M must be at least 1");
    const StoredDataset st = read_dataset(data);
    ensure_dir(out);
    const auto t0 = Clock::now();
    json streams = json::array();
    for (std::size_t l = 0; l < model.deltas.size(); ++l) {
      if (!st.subjects.empty() && l >= st.subjects.front().path.streams())
        fail_validation("dataset has fewer sensor streams than --delta values");
      const WindowGrid grid = make_window_grid(model.deltas[l], model.cfg.m);
      std::size_t missing = 0, total = 0;
      std::size_t win[2] = {0, 0}, partial[2] = {0, 0}, empty[2] = {0, 0};
      for (const auto& s : st.subjects) {
        for (auto v : s.path.mask[l]) missing += v ? 0 : 1;
        total += s.path.mask[l].size();
        for (const auto& w : subject_windows(s, l, grid, model.cfg.zero_pad)) {
          const auto obs = std::count(w.mask.begin(), w.mask.end(), std::uint8_t{1});
          const auto lab = static_cast<std::size_t>(w.label);
          ++win[lab];
          if (obs < static_cast<long>(w.mask.size())) ++partial[lab];
          if (obs == 0) ++empty[lab];
        }
      }
      json sj;
      sj["stream"] = l;
      sj["delta"] = model.deltas[l];
      sj["missing_values"] = missing;
      sj["sensor_values"] = total;
      sj["missing_fraction"] = total ? double(missing) / double(total) : 0.0;
      for (int lab = 0; lab < 2; ++lab)
        sj[lab ? "event_windows" : "sampled_windows"] = {
            {"total", win[lab]}, {"incomplete", partial[lab]}, {"fully_missing", empty[lab]}};
      streams.push_back(sj);
    }
    std::vector<std::string> warnings;
    const auto models = observed_models(st.subjects, model, &warnings);
    const auto copies = impute_all(st.subjects, models, M, seed);
    std::size_t changed = 0;
    for (int m = 0; m < M; ++m) {
      const auto& done = copies[static_cast<std::size_t>(m)];
      for (std::size_t i = 0; i < done.size(); ++i)
        for (std::size_t l = 0; l < models.size(); ++l)
          for (std::size_t k = 0; k < done[i].path.size(); ++k) {
            if (st.subjects[i].path.observed(l, k)) {
              if (done[i].path.values[l][k] != st.subjects[i].path.values[l][k])
                fail_numerical("imputation altered an observed value");
            } else if (done[i].path.observed(l, k)) {
              ++changed;
            }
          }
      if (write_imputed) {
        StoredDataset out_ds;
        out_ds.subjects = done;
        out_ds.event_pi = st.event_pi;
        write_dataset(path_in(out, "imputed_" + std::to_string(m)), out_ds);
      }
    }
    json j;
    j["subjects"] = st.subjects.size();
    j["streams"] = streams;
    j["imputations"] = M;
    j["imputed_values"] = changed;
    j["warnings"] = warnings_json(warnings);
    write_text(path_in(out, "diagnose.json"), j.dump(2) + "\n");
    timing["impute_secs"] = seconds_since(t0);
    man.summary["imputed_values"] = changed;
  }
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation:
      return 2;
    case ErrorKind::numerical:
      return 3;
    case ErrorKind::io:
      return 4;
  }
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subsampled recurrent-event hazard regression with functional sensor covariates"};
  app.set_config("--config", "", "TOML configuration file; command-line flags override it");
  app.set_version_flag("--version", std::string(SUBHAZ_GIT_DESCRIBE));
  app.require_subcommand(1);

  SimulateCmd simulate;
  FitCmd fit;
  ReplicateCmd replicate;
  EvalCmd eval;
  DiagnoseCmd diagnose;
  simulate.add(app);
  fit.add(app);
  replicate.add(app);
  eval.add(app);
  diagnose.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  Manifest man;
  man.command = name;
  man.config = "[" + name + "]\n" + app.get_subcommands().front()->config_to_str(true, false);
  json timing = json::object();
  std::string out;
  try {
    const auto t0 = Clock::now();
    if (name == "simulate") {
      simulate.run(man, timing);
      out = simulate.out;
    } else if (name == "fit") {
      fit.run(man, timing);
      out = fit.out;
    } else if (name == "replicate") {
      replicate.run(man, timing);
      out = replicate.out;
    } else if (name == "eval") {
      eval.run(man);
      out = eval.out;
    } else {
      diagnose.run(man, timing);
      out = diagnose.out;
    }
    man.write(out);
    timing["wall_secs"] = seconds_since(t0);
    write_timing(out, timing);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out of memory\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
