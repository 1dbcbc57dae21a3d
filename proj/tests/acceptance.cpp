// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion; exits nonzero if any
// selected criterion fails. Usage: acceptance [criterion ...]
#include "subhaz/dataset_io.hpp"
#include "subhaz/eval.hpp"
#include "subhaz/fit.hpp"
#include "subhaz/impute.hpp"
#include "subhaz/io.hpp"
#include "subhaz/mixed.hpp"
#include "subhaz/pipeline.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

using namespace subhaz;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

double sample_var(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Standard error of var(a) - var(b) from paired replicates.
double var_diff_se(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) d.push_back((a[i] - ma) * (a[i] - ma) - (b[i] - mb) * (b[i] - mb));
  return std::sqrt(sample_var(d) / n);
}

// ---------------------------------------------------------------------------
// 1

Outcome criterion1() {
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    Rng rng = make_rng(101, static_cast<std::uint64_t>(k));
    NormalSource z;
    const int n = 200, p = 10;
    Design d;
    d.w.resize(n, p);
    d.y.resize(n);
    d.log_pi.resize(n);
    for (int i = 0; i < n; ++i) {
      d.w(i, 0) = 1.0;
      for (int j = 1; j < p; ++j) d.w(i, j) = z(rng);
      d.y[i] = uniform_open(rng) < 0.2 ? 1.0 : 0.0;
      d.log_pi[i] = std::log(0.5 + 4.0 * uniform_open(rng));
      d.subject.push_back(i / 20);
      d.t.push_back(i);
    }
    for (int j = 0; j < p; ++j) {
      d.names.push_back("x" + std::to_string(j));
      d.pen_group.push_back(-1);
    }
    Vec theta(p);
    for (int j = 0; j < p; ++j) theta[j] = 0.3 * z(rng);
    worst = std::max(worst, (approx_score(d, theta) - logistic_score(d, theta)).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-12, "max |approx - logistic| = " + num(worst) + " over 100 designs"};
}

// ---------------------------------------------------------------------------
// Parametric log-linear scenario h(t) = exp(theta0 + theta1 x(t)) per hour, x a Matern
// path linearly interpolated between grid points.

struct Scenario {
  std::vector<SensorPath> days;
  double theta0 = std::log(5.0 / 12.0);
  double theta1 = 0.5;
  double tau = 12.0;

  explicit Scenario(int n_days, std::uint64_t seed) {
    const auto grid = linspace(0.0, tau, 1001);
    GpSampler gp(grid, {0.5, 1.0, 3.6});
    for (int i = 0; i < n_days; ++i) {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
      SensorPath p;
      p.subject_id = i;
      p.grid = grid;
      p.add_stream(gp.draw(rng));
      days.push_back(std::move(p));
    }
  }

  double x(int day, double t) const { return days[static_cast<std::size_t>(day)].value_at(0, t); }
  double h(int day, double t) const { return std::exp(theta0 + theta1 * x(day, t)); }
  double h_max(int day) const {
    const auto& v = days[static_cast<std::size_t>(day)].values[0];
    return std::exp(theta0 + theta1 * *std::max_element(v.begin(), v.end()));
  }
  Vec dh(int day, double t) const {
    Vec g(2);
    g << 1.0, x(day, t);
    return h(day, t) * g;
  }
  // Poisson process with intensity h by thinning a rate-h_max process.
  std::vector<double> events(int day, Rng& rng) const {
    const double hm = h_max(day);
    std::vector<double> out;
    double t = 0.0;
    while (true) {
      t += exponential(rng, hm);
      if (t > tau) break;
      if (uniform_open(rng) * hm < h(day, t)) out.push_back(t);
    }
    return out;
  }
  // int_0^tau dh by composite Simpson, 20 panels per grid interval.
  Vec dh_integral(int day) const {
    const auto& g = days[static_cast<std::size_t>(day)].grid;
    Vec acc = Vec::Zero(2);
    for (std::size_t k = 0; k + 1 < g.size(); ++k) {
      const int n = 20;
      const double a = g[k], step = (g[k + 1] - g[k]) / n;
      for (int j = 0; j <= n; ++j) {
        const double wj = (j == 0 || j == n) ? 1.0 : (j % 2 ? 4.0 : 2.0);
        acc += wj * step / 3.0 * dh(day, std::min(a + j * step, g[k + 1]));
      }
    }
    return acc;
  }
};

Design empty_design() {
  Design d;
  d.w.resize(0, 2);
  d.names = {"intercept", "x"};
  d.pen_group = {-1, -1};
  return d;
}

// Builds rows in bulk (row-by-row resizing is quadratic).
struct RowBuffer {
  std::vector<double> x, y, lp, t;
  std::vector<int> subject;
  void add(int s, double tt, double yy, double xx, double l) {
    subject.push_back(s);
    t.push_back(tt);
    y.push_back(yy);
    x.push_back(xx);
    lp.push_back(l);
  }
  Design design() const {
    Design d = empty_design();
    const auto n = static_cast<Eigen::Index>(x.size());
    d.w.resize(n, 2);
    d.y.resize(n);
    d.log_pi.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      d.w(i, 0) = 1.0;
      d.w(i, 1) = x[static_cast<std::size_t>(i)];
      d.y[i] = y[static_cast<std::size_t>(i)];
      d.log_pi[i] = lp[static_cast<std::size_t>(i)];
    }
    d.subject = subject;
    d.t = t;
    return d;
  }
};

// ---------------------------------------------------------------------------
// 2

Outcome criterion2() {
  const Scenario sc(1, 202);
  const Vec truth = sc.dh_integral(0);
  const SamplingDesign design{SamplingDesign::Kind::constant_rate, 2.0};
  const GradFn dh = [&](double t) { return sc.dh(0, t); };
  const RateFn h = [&](double t) { return sc.h(0, t); };
  const RateFn pi = [](double) { return 2.0; };
  const int reps = 100000;
  Vec s_ht = Vec::Zero(2), q_ht = Vec::Zero(2), s_wp = Vec::Zero(2), q_wp = Vec::Zero(2);
  Rng rng = make_rng(203);
  for (int r = 0; r < reps; ++r) {
    EventSet ev;
    ev.times = sc.events(0, rng);
    ev.tau = sc.tau;
    const SampleSet s = draw_samples(design, 0.0, sc.tau, {}, rng);
    const Vec a = ht_estimator(s, dh, 2);
    const Vec b = wp_estimator(s, ev, dh, h, pi, 2);
    s_ht += a;
    q_ht += a.cwiseProduct(a);
    s_wp += b;
    q_wp += b.cwiseProduct(b);
  }
  bool ok = true;
  std::string msg;
  for (int k = 0; k < 2; ++k) {
    for (int which = 0; which < 2; ++which) {
      const double m = (which ? s_wp[k] : s_ht[k]) / reps;
      const double v = (which ? q_wp[k] : q_ht[k]) / reps - m * m;
      const double se = std::sqrt(v / reps);
      const double z = (m - truth[k]) / se;
      ok = ok && std::abs(z) < 3.0;
      msg += std::string(which ? " WP" : " HT") + "[" + std::to_string(k) + "] z=" + num(z);
    }
  }
  return {ok, "truth (" + num(truth[0]) + ", " + num(truth[1]) + ");" + msg};
}

// ---------------------------------------------------------------------------
// 3

Outcome criterion3() {
  const int n_days = 20, reps = 500;
  const Scenario sc(n_days, 302);
  const SamplingDesign design{SamplingDesign::Kind::constant_rate, 2.0};
  const Vec start = (Vec(2) << sc.theta0, sc.theta1).finished();
  std::vector<double> wp, ht;
  for (int r = 0; r < reps; ++r) {
    Rng rng = make_rng(303, static_cast<std::uint64_t>(r));
    RowBuffer rows;
    for (int i = 0; i < n_days; ++i) {
      for (double t : sc.events(i, rng)) rows.add(i, t, 1.0, sc.x(i, t), std::log(2.0));
      const SampleSet s = draw_samples(design, 0.0, sc.tau, {}, rng);
      for (double t : s.times) rows.add(i, t, 0.0, sc.x(i, t), std::log(2.0));
    }
    const Design d = rows.design();
    wp.push_back(fit_estimating_equation(d, Weighting::wp, start).theta[0]);
    ht.push_back(fit_estimating_equation(d, Weighting::ht, start).theta[0]);
  }
  const double v_wp = sample_var(wp), v_ht = sample_var(ht), se = var_diff_se(wp, ht);
  return {v_wp <= v_ht + 2 * se,
          "var WP " + num(v_wp) + ", var HT " + num(v_ht) + ", MC SE of difference " + num(se)};
}

// ---------------------------------------------------------------------------
// 4

Outcome criterion4() {
  const int n_days = 40, reps = 500;
  const Scenario sc(n_days, 402);
  const double cs[] = {1.0, 5.0, 10.0};
  const Vec start = (Vec(2) << sc.theta0, sc.theta1).finished();
  // Dense-grid rows for the full likelihood: log pi = -log(trapezoid weight).
  RowBuffer grid_rows;
  for (int i = 0; i < n_days; ++i) {
    const auto& p = sc.days[static_cast<std::size_t>(i)];
    const Vec w = trapezoid_weights(p.grid);
    for (std::size_t k = 0; k < p.size(); ++k)
      grid_rows.add(i, p.grid[k], 0.0, p.values[0][k], -std::log(w[static_cast<Eigen::Index>(k)]));
  }
  std::vector<double> full;
  std::vector<std::vector<double>> sub(3);
  for (int r = 0; r < reps; ++r) {
    Rng rng = make_rng(403, static_cast<std::uint64_t>(r));
    std::vector<std::vector<double>> ev(n_days);
    for (int i = 0; i < n_days; ++i) ev[static_cast<std::size_t>(i)] = sc.events(i, rng);
    RowBuffer f = grid_rows;
    for (int i = 0; i < n_days; ++i)
      for (double t : ev[static_cast<std::size_t>(i)]) f.add(i, t, 1.0, sc.x(i, t), 0.0);
    full.push_back(fit_estimating_equation(f.design(), Weighting::ht, start).theta[0]);
    for (int ci = 0; ci < 3; ++ci) {
      const double c = cs[ci];
      RowBuffer rows;
      for (int i = 0; i < n_days; ++i) {
        for (double t : ev[static_cast<std::size_t>(i)]) rows.add(i, t, 1.0, sc.x(i, t), std::log(c * sc.h(i, t)));
        const SamplingDesign design{SamplingDesign::Kind::proportional_to_hazard, c, 1e-12, 1.01 * c * sc.h_max(i)};
        const SampleSet s = draw_samples(design, 0.0, sc.tau, [&](double t) { return sc.h(i, t); }, rng);
        for (std::size_t j = 0; j < s.size(); ++j)
          rows.add(i, s.times[j], 0.0, sc.x(i, s.times[j]), std::log(s.pi_values[j]));
      }
      sub[static_cast<std::size_t>(ci)].push_back(fit_estimating_equation(rows.design(), Weighting::wp, start).theta[0]);
    }
  }
  const double vf = sample_var(full);
  bool ok = true;
  std::string msg = "var full " + num(vf) + ";";
  for (int ci = 0; ci < 3; ++ci) {
    const double ratio = sample_var(sub[static_cast<std::size_t>(ci)]) / vf;
    const double want = (cs[ci] + 1) / cs[ci];
    ok = ok && std::abs(ratio / want - 1.0) <= 0.15;
    msg += " c=" + num(cs[ci]) + " ratio " + num(ratio) + " (expected " + num(want) + ")";
  }
  return {ok, msg};
}

// ---------------------------------------------------------------------------
// 5 and 6

ExperimentConfig sine_study() {
  ExperimentConfig c;
  c.replicates = 100;
  c.sim.user_days = 100;
  c.sim.beta = {TrueBeta::Kind::sine, 0.0, 16.0, 0.5};
  c.seed = 501;
  return c;
}

std::string progress_line(const char* tag, int done, int total) {
  return std::string(tag) + " replicate " + std::to_string(done) + "/" + std::to_string(total);
}

Outcome criterion5() {
  const ExperimentConfig c = sine_study();
  const auto r = replicate_experiment(c, [](int done, int total) {
    if (done % 10 == 0) std::cerr << progress_line("[5]", done, total) << '\n';
  });
  std::cerr << experiment_csv(r);
  const double rates[] = {0.5, 1.0, 2.0, 4.0};
  bool a = true, b = true, cc = true, d = true;
  std::string msg;
  for (int k = 0; k < 4; ++k) {
    const auto& m = r.cell(0.5, rates[k]).report;
    if (k > 0) {
      const double ratio = m.subsampling_variance / m.variance;
      a = a && ratio < 0.05;
      const auto& prev = r.cell(0.5, rates[k - 1]).report;
      cc = cc && m.variance > prev.variance;
      d = d && m.runtime_secs < prev.runtime_secs;
      msg += " ssv/var@" + num(rates[k]) + "=" + num(ratio);
    }
    b = b && m.mise >= 0.079 / 2 && m.mise <= 0.084 * 2;
    msg += " MISE@" + num(rates[k]) + "=" + num(m.mise) + " var=" + num(m.variance) + " t=" + num(m.runtime_secs);
  }
  msg = std::string("(a) ") + (a ? "pass" : "fail") + " (b) " + (b ? "pass" : "fail") + " (c) " +
        (cc ? "pass" : "fail") + " (d) " + (d ? "pass" : "fail") + ";" + msg;
  if (!r.failures.empty()) msg += "; " + std::to_string(r.failures.size()) + " failed fits";
  return {a && b && cc && d, msg};
}

Outcome criterion6() {
  ExperimentConfig c = sine_study();
  const double star = 32.0 / 60.0;
  c.sim.beta.delta = star;
  c.deltas = {26.0 / 60.0, 29.0 / 60.0, star, 35.0 / 60.0, 37.0 / 60.0};
  c.rate_labels = {0.5};
  c.seed = 601;
  const auto r = replicate_experiment(c, [](int done, int total) {
    if (done % 10 == 0) std::cerr << progress_line("[6]", done, total) << '\n';
  });
  std::cerr << experiment_csv(r);
  const auto& at_star = r.cell(star, 0.5).report;
  bool min_ok = true, var_ok = true;
  std::string msg;
  for (std::size_t k = 0; k < c.deltas.size(); ++k) {
    const auto& m = r.cell(c.deltas[k], 0.5).report;
    if (c.deltas[k] != star) min_ok = min_ok && at_star.mise < m.mise;
    if (k > 0) {
      const auto& prev = r.cell(c.deltas[k - 1], 0.5).report;
      const double se = std::sqrt(m.variance_se * m.variance_se + prev.variance_se * prev.variance_se);
      var_ok = var_ok && m.variance <= prev.variance + 2 * se;
    }
    msg += " D=" + num(c.deltas[k] * 60) + ": MISE " + num(m.mise) + " var " + num(m.variance) + " P-MISE " +
           num(m.partial_mise);
  }
  const double gap = std::abs(at_star.partial_mise - at_star.mise);
  const bool pm_ok = gap <= 1e-12 * std::max(1.0, at_star.mise);
  msg = std::string("argmin at 32: ") + (min_ok ? "yes" : "no") + ", |P-MISE - MISE| at 32 = " + num(gap) +
        ", variance nonincreasing within 2 SE: " + (var_ok ? "yes" : "no") + ";" + msg;
  return {min_ok && pm_ok && var_ok, msg};
}

// ---------------------------------------------------------------------------
// 7

Outcome criterion7() {
  const std::vector<double> c{5, 10, 100}, hz{4, 32}, bounds{0.5, 1, 3, 5, 10};
  const long want[6][5] = {{5760, 2880, 960, 576, 288},     {2880, 1440, 480, 288, 144},
                           {288, 144, 48, 29, 14},          {46080, 23040, 7680, 4608, 2304},
                           {23040, 11520, 3840, 2304, 1152}, {2304, 1152, 384, 230, 115}};
  const char* eff[] = {"0.833", "0.909", "0.990"};
  const auto rows = efficiency_table(c, hz, bounds);
  int matched = 0, eff_matched = 0;
  for (std::size_t i = 0; i < rows.size() && i < 6; ++i) {
    for (std::size_t j = 0; j < 5; ++j) matched += rows[i].reduction[j] == want[i][j];
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.3f", rows[i].efficiency);
    eff_matched += std::string(buf) == eff[i % 3];
  }
  const std::string csv = efficiency_csv(rows, bounds);
  const bool csv_ok = csv.find("4,100,288,144,48,29,14,0.990") != std::string::npos &&
                      csv.find("32,5,46080,23040,7680,4608,2304,0.833") != std::string::npos;
  return {rows.size() == 6 && matched == 30 && eff_matched == 6 && csv_ok,
          std::to_string(matched) + "/30 reductions, " + std::to_string(eff_matched) + "/6 efficiencies"};
}

// ---------------------------------------------------------------------------
// 8

Design simulated_design(int user_days, int k_b, std::uint64_t seed) {
  SimConfig sc;
  sc.user_days = user_days;
  sc.beta = {TrueBeta::Kind::sine, 0.0, 16.0, 0.5};
  const Dataset ds = simulate_dataset(sc, seed);
  ModelConfig mc;
  mc.k_b = k_b;
  mc.fpca.known_mean_zero = true;
  mc.fpca.known_cov = sc.matern;
  return fit_dataset(ds.subjects, dataset_pi(ds), mc).design;
}

Outcome criterion8() {
  std::string msg;
  // Gradient of the penalized log-likelihood against central differences.
  const Design d = simulated_design(40, 35, 801);
  const FitResult f = fit_alternating(d);
  const std::vector<double> s2{0.05};
  Vec theta = f.theta;
  for (Eigen::Index j = 0; j < theta.size(); ++j) theta[j] += 0.05 * std::sin(1.0 + static_cast<double>(j));
  const Vec g = penalized_score(d, theta, s2);
  Vec fd(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta[j]));
    Vec a = theta, b = theta;
    a[j] += h;
    b[j] -= h;
    fd[j] = (penalized_loglik(d, a, s2) - penalized_loglik(d, b, s2)) / (2 * h);
  }
  const double grad_err = (fd - g).cwiseAbs().maxCoeff() / g.cwiseAbs().maxCoeff();
  msg += "gradient rel err " + num(grad_err);

  // Xi-hat from w(1 - w) (h'/h)(h'/h)' with w = pi / (pi + h), against the IRLS Hessian.
  Mat xi = Mat::Zero(d.cols(), d.cols());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const double h = std::exp(d.w.row(i).dot(f.theta));
    const double pi = std::exp(d.log_pi[i]);
    const double w = pi / (pi + h);
    xi += w * (1 - w) * d.w.row(i).transpose() * d.w.row(i);
  }
  xi /= static_cast<double>(d.n_subjects());
  const Mat hess = logistic_hessian(d, f.theta);
  const double fisher_err = (xi * d.n_subjects() - hess).cwiseAbs().maxCoeff() / hess.cwiseAbs().maxCoeff();
  const double fisher_err2 = (f.fisher - xi).cwiseAbs().maxCoeff() / xi.cwiseAbs().maxCoeff();
  msg += ", Fisher vs Hessian rel err " + num(std::max(fisher_err, fisher_err2));

  // AGQ with one node against Laplace, random intercept and functional effects.
  const Design small = simulated_design(12, 5, 802);
  const FitResult fs = fit_alternating(small);
  double laplace_err = 0;
  for (auto re : {RandomEffects::intercept, RandomEffects::functional}) {
    const auto subjects = subject_rows(small, re);
    const auto q = subjects.front().z.cols();
    const Mat psi = 0.3 * Mat::Identity(q, q);
    for (const auto& s : subjects)
      laplace_err = std::max(laplace_err, std::abs(agq_marginal_loglik(s, fs.theta, psi, 1) -
                                                   laplace_marginal_loglik(s, fs.theta, psi)));
  }
  msg += ", |AGQ(1) - Laplace| " + num(laplace_err);

  // 30-node AGQ against dense Simpson for q = 1.
  const auto subjects = subject_rows(small, RandomEffects::intercept);
  const Mat psi = Mat::Constant(1, 1, 0.4);
  const Mat pinv = psi.inverse();
  double simpson_err = 0;
  for (const auto& s : subjects) {
    const Blup mode = newton_blup(s, fs.theta, psi);
    const double sd = 1.0 / std::sqrt(mode.curvature(0, 0));
    const double g0 = g_value(s, fs.theta, mode.b, pinv);
    const int n = 40000;
    const double lo = mode.b[0] - 14 * sd, step = 28 * sd / n;
    double acc = 0;
    for (int k = 0; k <= n; ++k) {
      const double wk = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      const Vec b = Vec::Constant(1, lo + k * step);
      acc += wk * std::exp(g_value(s, fs.theta, b, pinv) - g0);
    }
    const double dense = g0 + std::log(acc * step / 3.0) - 0.5 * std::log(2 * M_PI * psi(0, 0));
    const double agq = agq_marginal_loglik(s, fs.theta, psi, 30);
    simpson_err = std::max(simpson_err, std::abs(agq - dense) / std::abs(dense));
  }
  msg += ", AGQ(30) vs Simpson rel err " + num(simpson_err);
  const bool ok = grad_err < 1e-6 && fisher_err < 1e-10 && fisher_err2 < 1e-10 && laplace_err < 1e-8 &&
                  simpson_err < 1e-8;
  return {ok, msg};
}

// ---------------------------------------------------------------------------
// 9

Outcome criterion9() {
  // Conditional law against conditioning through the precision matrix.
  Rng rng = make_rng(901);
  double law_err = 0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> pts;
    for (int i = 0; i < 5; ++i) pts.push_back(uniform_open(rng));
    std::sort(pts.begin(), pts.end());
    const Mat sigma = matern_matrix(pts, pts, {1.5, 0.5 + uniform_open(rng), 0.2 + uniform_open(rng)}) +
                      0.05 * Mat::Identity(5, 5);
    NormalSource z;
    Vec mu(5), x(5);
    for (int i = 0; i < 5; ++i) {
      mu[i] = z(rng);
      x[i] = z(rng);
    }
    std::vector<std::uint8_t> obs(5);
    int n_obs = 0;
    do {
      n_obs = 0;
      for (auto& o : obs) n_obs += (o = uniform_open(rng) < 0.5 ? 1 : 0);
    } while (n_obs == 0 || n_obs == 5);
    const auto law = conditional_law(x, obs, mu, sigma);
    const Mat prec = sigma.inverse();
    std::vector<int> mi, oi;
    for (int i = 0; i < 5; ++i) (obs[static_cast<std::size_t>(i)] ? oi : mi).push_back(i);
    const auto nm = static_cast<Eigen::Index>(mi.size()), no = static_cast<Eigen::Index>(oi.size());
    Mat qmm(nm, nm), qmo(nm, no);
    Vec r(no);
    for (Eigen::Index a = 0; a < nm; ++a) {
      for (Eigen::Index b = 0; b < nm; ++b) qmm(a, b) = prec(mi[a], mi[b]);
      for (Eigen::Index b = 0; b < no; ++b) qmo(a, b) = prec(mi[a], oi[b]);
    }
    for (Eigen::Index b = 0; b < no; ++b) r[b] = x[oi[b]] - mu[oi[b]];
    const Mat cov = qmm.inverse();
    Vec mean = -cov * qmo * r;
    for (Eigen::Index a = 0; a < nm; ++a) mean[a] += mu[mi[a]];
    law_err = std::max({law_err, (law.mean - mean).cwiseAbs().maxCoeff(), (law.cov - cov).cwiseAbs().maxCoeff()});
  }
  std::string msg = "conditional law max err " + num(law_err);

  // Pooling arithmetic on fixed inputs.
  Mat t(6, 2);
  t << 1.0, 2.0, 1.2, 1.9, 0.7, 2.4, 0.9, 2.1, 1.5, 1.6, 1.1, 2.0;
  const auto pooled = pool_boot_mi(t, 3, 2);
  Mat msw(2, 2), msb(2, 2);
  msw << 0.04, -0.04, -0.04, 0.04333333333333333;
  msb << 0.12666666666666667, -0.115, -0.115, 0.105;
  const double pool_err = std::max((pooled.msw - msw).cwiseAbs().maxCoeff(), (pooled.msb - msb).cwiseAbs().maxCoeff());
  msg += ", MSW/MSB max err " + num(pool_err);

  // Coverage of beta(t0) at t0 = delta / 2 under 20% MCAR.
  const int reps = 100;
  const double t0 = 0.25;
  SimConfig sc;
  sc.user_days = 100;
  sc.beta = {TrueBeta::Kind::sine, 0.0, 16.0, 0.5};
  sc.mcar = 0.2;
  const ModelConfig mc;
  BootMiOptions opt;
  opt.B = 10;
  opt.M = 2;
  const std::vector<double> grid{0.05, 0.1, 0.15, 0.2, t0, 0.3, 0.35, 0.4, 0.45};
  std::vector<int> covered(grid.size(), 0);
  int failed = 0;
  for (int r = 0; r < reps; ++r) {
    try {
      const Dataset ds = simulate_dataset(sc, derive_seed(902, static_cast<std::uint64_t>(r)));
      const auto res = boot_mi(ds.subjects, dataset_pi(ds), mc, opt, derive_seed(903, static_cast<std::uint64_t>(r)));
      const BetaCurve c = boot_mi_beta_curve(res, 0, grid);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const double truth = sc.beta(grid[k]);
        covered[k] += c.lo[k] <= truth && truth <= c.hi[k];
      }
    } catch (const Error& e) {
      ++failed;
      std::cerr << "[9] replicate " << r << " failed: " << e.what() << '\n';
    }
    if ((r + 1) % 10 == 0) std::cerr << progress_line("[9]", r + 1, reps) << '\n';
  }
  std::cerr << "[9] pointwise coverage:";
  for (std::size_t k = 0; k < grid.size(); ++k) std::cerr << " t=" << grid[k] << ":" << covered[k];
  std::cerr << '\n';
  const double cov_t0 = covered[4] / static_cast<double>(reps);
  msg += ", coverage at t0=0.25 " + num(cov_t0) + " (" + std::to_string(failed) + " failed replicates)";
  return {law_err < 1e-10 && pool_err < 1e-14 && cov_t0 >= 0.85, msg};
}

// ---------------------------------------------------------------------------
// 10

std::string sha256_file(const fs::path& p) {
  const std::string data = read_text(p.string());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    char b[3];
    std::snprintf(b, sizeof b, "%02x", md[i]);
    os << b;
  }
  return os.str();
}

// SHA-256 of every output file except the timing files.
std::map<std::string, std::string> hash_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.rfind("timing", 0) == 0) continue;
    out[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
  }
  return out;
}

int run(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

Outcome criterion10() {
  const fs::path root = fs::temp_directory_path() / "subhaz_acceptance_cli";
  const std::string cli = SUBHAZ_CLI;
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"simulate", "simulate --seed 7 --out {}/sim"},
      {"simulate-mcar", "simulate --seed 8 --user-days 30 --mcar 0.2 --out {}/simm"},
      {"fit", "fit --data {}/sim --export-design --out {}/fit"},
      {"fit-design", "fit --design {}/fit/design.csv --delta 0.5 --out {}/fitd"},
      {"fit-multilevel", "fit --data {}/simm --multilevel intercept --impute 1 --out {}/fitm"},
      {"fit-boot-mi", "fit --data {}/simm --boot-mi --B 3 --M 2 --seed 4 --out {}/bm"},
      {"replicate-table1", "replicate --preset table1 --out {}/t1"},
      {"replicate", "replicate --preset table2-sine --replicates 2 --user-days 10 --out {}/rep"},
      {"eval", "eval --fit {}/fit/fit.json --out {}/ev"},
      {"impute-diagnose", "impute-diagnose --data {}/simm --M 2 --write-imputed --out {}/diag"},
  };
  std::vector<std::map<std::string, std::string>> hashes(2);
  std::string failed;
  for (int pass = 0; pass < 2; ++pass) {
    const fs::path dir = root / ("run" + std::to_string(pass));
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& [name, args] : steps) {
      std::string a = args;
      for (std::size_t p; (p = a.find("{}")) != std::string::npos;) a.replace(p, 2, dir.string());
      if (run(cli + " " + a) != 0) failed += " " + name;
    }
    // Paths differ between the two runs; manifests record them, so compare data files only.
    for (auto& [k, v] : hash_tree(dir))
      if (k.find("manifest.json") == std::string::npos) hashes[static_cast<std::size_t>(pass)][k] = v;
  }
  int mismatched = 0;
  for (const auto& [k, v] : hashes[0]) {
    const auto it = hashes[1].find(k);
    if (it == hashes[1].end() || it->second != v) {
      ++mismatched;
      failed += " " + k;
    }
  }
  // Same output path twice: manifests must match too.
  std::map<std::string, std::string> same[2];
  for (int pass = 0; pass < 2; ++pass) {
    const fs::path dir = root / "same";
    fs::remove_all(dir);
    run(cli + " simulate --seed 7 --user-days 5 --out " + (dir / "sim").string());
    run(cli + " fit --data " + (dir / "sim").string() + " --out " + (dir / "fit").string());
    same[pass] = hash_tree(dir);
  }
  const bool manifests = same[0] == same[1] && !same[0].empty();
  fs::remove_all(root);
  const bool ok = failed.empty() && mismatched == 0 && hashes[0].size() > 20 && manifests;
  return {ok, std::to_string(hashes[0].size()) + " files hashed, " + std::to_string(mismatched) +
                  " mismatches, manifests " + (manifests ? "identical" : "differ") +
                  (failed.empty() ? "" : "; problems:" + failed)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<std::function<Outcome()>, double>> criteria = {
      {1, {criterion1, 1}},      {2, {criterion2, 120}},   {3, {criterion3, 600}},
      {4, {criterion4, 1200}},   {5, {criterion5, 1800}},  {6, {criterion6, 2700}},
      {7, {criterion7, 1}},      {8, {criterion8, 60}},    {9, {criterion9, 1800}},
      {10, {criterion10, 60}}};
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [k, v] : criteria) selected.push_back(k);
  int failures = 0;
  for (int k : selected) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << k << '\n';
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.first();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double budget = it->second.second;
    if (secs > budget) {
      o.pass = false;
      o.detail += "; over the " + num(budget) + " s budget";
    }
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << " (" << num(secs) << " s) " << o.detail
              << std::endl;
    failures += !o.pass;
  }
  return failures ? 1 : 0;
}
