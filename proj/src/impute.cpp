#include "subhaz/impute.hpp"

#include "subhaz/eval.hpp"
#include "subhaz/io.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace subhaz {

ConditionalLaw conditional_law(const Vec& x, std::span<const std::uint8_t> observed, const Vec& mu,
                               const Mat& sigma) {
  const auto n = x.size();
  if (static_cast<Eigen::Index>(observed.size()) != n || mu.size() != n || sigma.rows() != n || sigma.cols() != n)
    fail_validation("conditional law: dimension mismatch");
  std::vector<int> obs;
  ConditionalLaw law;
  for (Eigen::Index i = 0; i < n; ++i) (observed[static_cast<std::size_t>(i)] ? obs : law.missing).push_back(static_cast<int>(i));
  if (law.missing.empty()) return law;
  if (obs.empty()) fail_validation("window has no observed value; cannot condition a fully missing window");
  const auto no = static_cast<Eigen::Index>(obs.size());
  const auto nm = static_cast<Eigen::Index>(law.missing.size());
  Mat soo(no, no), smo(nm, no), smm(nm, nm);
  Vec r(no);
  for (Eigen::Index a = 0; a < no; ++a) {
    r[a] = x[obs[a]] - mu[obs[a]];
    for (Eigen::Index b = 0; b < no; ++b) soo(a, b) = sigma(obs[a], obs[b]);
  }
  for (Eigen::Index a = 0; a < nm; ++a) {
    for (Eigen::Index b = 0; b < no; ++b) smo(a, b) = sigma(law.missing[a], obs[b]);
    for (Eigen::Index b = 0; b < nm; ++b) smm(a, b) = sigma(law.missing[a], law.missing[b]);
  }
  Eigen::LLT<Mat> llt(soo);
  if (llt.info() != Eigen::Success) {
    Mat ridged = soo;
    ridged.diagonal().array() += 1e-8 * soo.trace() / static_cast<double>(no);
    llt.compute(ridged);
    if (llt.info() != Eigen::Success) fail_numerical("observed covariance block is not positive definite");
  }
  law.mean.resize(nm);
  for (Eigen::Index a = 0; a < nm; ++a) law.mean[a] = mu[law.missing[a]];
  law.mean += smo * llt.solve(r);
  law.cov = smm - smo * llt.solve(smo.transpose());
  law.cov = 0.5 * (law.cov + law.cov.transpose()).eval();
  return law;
}

ConditionalLaw conditional_law(const WindowedHistory& window, const Vec& mu, const Mat& sigma) {
  Vec x = window.values;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!window.mask[static_cast<std::size_t>(i)]) x[i] = 0.0;
  return conditional_law(x, window.mask, mu, sigma);
}

Vec draw_conditional(const ConditionalLaw& law, Rng& rng) {
  const auto nm = static_cast<Eigen::Index>(law.missing.size());
  if (nm == 0) return Vec();
  const Mat l = jittered_cholesky(project_psd(law.cov), "conditional covariance");
  NormalSource normal;
  Vec z(nm);
  for (Eigen::Index i = 0; i < nm; ++i) z[i] = normal(rng);
  return law.mean + l * z;
}

namespace {

// Bilinear read of a covariance matrix tabulated on a regular grid over [0, delta].
double cov_at(const MarginalCov& c, double s1, double s2) {
  const auto m = static_cast<double>(c.s.size() - 1);
  const double delta = c.s.back();
  const auto locate = [&](double s, Eigen::Index* i, double* f) {
    const double u = std::clamp(s / delta, 0.0, 1.0) * m;
    *i = std::min(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(m) - 1);
    *f = u - static_cast<double>(*i);
  };
  Eigen::Index i, j;
  double fi, fj;
  locate(s1, &i, &fi);
  locate(s2, &j, &fj);
  const Mat& a = c.matrix;
  return (1 - fi) * (1 - fj) * a(i, j) + fi * (1 - fj) * a(i + 1, j) + (1 - fi) * fj * a(i, j + 1) +
         fi * fj * a(i + 1, j + 1);
}

}  // namespace

void impute_in_place(SubjectData& subject, const StreamModel& sm, Rng& rng) {
  SensorPath& path = subject.path;
  const std::size_t st = sm.stream;
  if (st >= path.streams()) fail_validation("imputation stream is not present in the sensor path");
  if (path.fully_observed(st)) return;
  std::vector<Anchor> anchors;
  for (double t : subject.events.times) anchors.push_back({t, 1});
  for (double t : subject.samples.times) anchors.push_back({t, 0});
  std::sort(anchors.begin(), anchors.end(), [](const Anchor& a, const Anchor& b) { return a.t < b.t; });

  const double delta = sm.grid.delta;
  const double t0 = path.t0(), dt = path.dt();
  const auto last = static_cast<long>(path.size()) - 1;
  std::vector<std::uint8_t> known = path.mask[st];
  for (const Anchor& a : anchors) {
    // Sensor nodes that enter linear interpolation of x(t - s) for s in [0, delta].
    const long lo = std::max(0L, static_cast<long>(std::floor((a.t - delta - t0) / dt + 1e-9)));
    const long hi = std::min(last, static_cast<long>(std::ceil((a.t - t0) / dt - 1e-9)));
    if (hi < lo) continue;
    bool any_missing = false;
    for (long k = lo; k <= hi; ++k) any_missing |= !known[static_cast<std::size_t>(k)];
    if (!any_missing) continue;
    const LabelFpca& f = sm.fpca[a.label];
    const double nugget = std::max(f.nugget, 1e-3 * f.cov.matrix.diagonal().mean());
    const auto n = static_cast<Eigen::Index>(hi - lo + 1);
    Vec x(n), mu(n);
    Mat sigma(n, n);
    std::vector<std::uint8_t> obs(static_cast<std::size_t>(n));
    std::vector<double> s(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(lo + i);
      s[static_cast<std::size_t>(i)] = std::clamp(a.t - path.grid[k], 0.0, delta);
      obs[static_cast<std::size_t>(i)] = known[k];
      x[i] = known[k] ? path.values[st][k] : 0.0;
      mu[i] = f.mean(a.t, s[static_cast<std::size_t>(i)]);
    }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        sigma(i, j) = cov_at(f.cov, s[static_cast<std::size_t>(i)], s[static_cast<std::size_t>(j)]);
    sigma.diagonal().array() += nugget;
    ConditionalLaw law = conditional_law(x, obs, mu, sigma);
    const Vec draw = draw_conditional(law, rng);
    for (std::size_t q = 0; q < law.missing.size(); ++q) {
      const auto k = static_cast<std::size_t>(lo + law.missing[q]);
      path.values[st][k] = draw[static_cast<Eigen::Index>(q)];
      known[k] = 1;
    }
  }
  path.mask[st] = known;
}

std::vector<SubjectData> impute_sequential(const SubjectData& subject, const StreamModel& sm, int M,
                                           std::uint64_t seed) {
  if (M < 1) fail_validation("number of imputations must be at least 1");
  std::vector<SubjectData> out;
  for (int m = 0; m < M; ++m) {
    SubjectData copy = subject;
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(subject.path.subject_id), 5, static_cast<std::uint64_t>(m));
    impute_in_place(copy, sm, rng);
    out.push_back(std::move(copy));
  }
  return out;
}

BootMiResult pool_boot_mi(const Mat& theta, int B, int M, DfRule df_rule) {
  if (B < 2 || M < 2) fail_validation("bootstrap MI needs B >= 2 and M >= 2");
  if (theta.rows() != static_cast<Eigen::Index>(B) * M) fail_validation("expected B * M estimate rows");
  const auto p = theta.cols();
  BootMiResult r;
  r.B = B;
  r.M = M;
  r.theta_bm = theta;
  Mat tb(B, p);
  for (int b = 0; b < B; ++b) tb.row(b) = theta.middleRows(static_cast<Eigen::Index>(b) * M, M).colwise().mean();
  r.point = tb.colwise().mean().transpose();
  r.msw = Mat::Zero(p, p);
  r.msb = Mat::Zero(p, p);
  for (int b = 0; b < B; ++b) {
    for (int m = 0; m < M; ++m) {
      const Vec d = (theta.row(static_cast<Eigen::Index>(b) * M + m) - tb.row(b)).transpose();
      r.msw += d * d.transpose();
    }
    const Vec e = tb.row(b).transpose() - r.point;
    r.msb += static_cast<double>(M) * e * e.transpose();
  }
  r.msw /= static_cast<double>(B) * (M - 1);
  r.msb /= static_cast<double>(B - 1);
  const Mat raw = (static_cast<double>(B + 1) / (static_cast<double>(B) * M)) * r.msb - r.msw / M;
  const Mat sym = 0.5 * (raw + raw.transpose());
  const Vec ev = Eigen::SelfAdjointEigenSolver<Mat>(sym, Eigen::EigenvaluesOnly).eigenvalues();
  // Rounding-level negative eigenvalues are clipped without raising the flag.
  r.floored = ev.size() > 0 && ev.minCoeff() < -1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  r.sigma_bm = project_psd(sym);
  r.df = df_rule == DfRule::b_minus_1 ? B - 1.0 : INFINITY;
  return r;
}

BootMiResult boot_mi(std::span<const SubjectData> subjects, const PiAtEvent& pi_event, const ModelConfig& cfg,
                     const BootMiOptions& opt, std::uint64_t seed, std::span<const double> deltas) {
  if (opt.B < 2 || opt.M < 2) fail_validation("bootstrap MI needs B >= 2 and M >= 2");
  if (subjects.empty()) fail_validation("bootstrap MI needs at least one subject");
  const auto n = subjects.size();
  std::vector<BootMiReplicate> reps;
  std::vector<Vec> rows;
  FitResult shape;
  for (int b = 0; b < opt.B; ++b) {
    BootMiReplicate rep;
    rep.b = b;
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(b), 6);
    std::vector<SubjectData> boot(n);
    std::vector<int> orig(n);
    for (std::size_t j = 0; j < n; ++j) {
      const auto pick = static_cast<std::size_t>(uniform_open(rng) * static_cast<double>(n));
      boot[j] = subjects[std::min(pick, n - 1)];
      orig[j] = boot[j].path.subject_id;
      boot[j].path.subject_id = boot[j].samples.subject_id = boot[j].events.subject_id = static_cast<int>(j);
    }
    const PiAtEvent pi = [&pi_event, &orig](int id, double t) { return pi_event(orig[static_cast<std::size_t>(id)], t); };
    std::vector<Vec> local;
    try {
      std::vector<StreamModel> models;
      if (deltas.empty()) {
        models.push_back(build_stream_model(boot, 0, cfg));
      } else {
        for (std::size_t l = 0; l < deltas.size(); ++l) {
          ModelConfig c = cfg;
          c.delta = deltas[l];
          models.push_back(build_stream_model(boot, l, c));
        }
      }
      DesignOptions dopt;
      dopt.features = cfg.features;
      const std::uint64_t bs = derive_seed(seed, static_cast<std::uint64_t>(b));
      for (int m = 0; m < opt.M; ++m) {
        std::vector<SubjectData> done = boot;
        for (std::size_t j = 0; j < n; ++j) {
          Rng irng = make_rng(bs, static_cast<std::uint64_t>(m), 7, j);
          for (const auto& sm : models) impute_in_place(done[j], sm, irng);
        }
        const Design d = build_design(done, models, pi, dopt);
        FitResult f = fit_alternating(d, cfg.fit);
        rep.outer_iterations = std::max(rep.outer_iterations, f.outer_iterations);
        rep.converged = f.converged;
        local.push_back(f.theta);
        if (shape.names.empty()) shape = std::move(f);
      }
    } catch (const Error& e) {
      rep.ok = false;
      rep.error = e.what();
    }
    if (rep.ok) rows.insert(rows.end(), local.begin(), local.end());
    reps.push_back(rep);
  }
  const int dropped = static_cast<int>(std::count_if(reps.begin(), reps.end(), [](const auto& r) { return !r.ok; }));
  if (dropped > opt.max_drop * opt.B)
    fail_numerical(std::to_string(dropped) + " of " + std::to_string(opt.B) +
                   " bootstrap replicates failed; first error: " +
                   std::find_if(reps.begin(), reps.end(), [](const auto& r) { return !r.ok; })->error);
  const int kept = opt.B - dropped;
  Mat theta(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) theta.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  BootMiResult r = pool_boot_mi(theta, kept, opt.M, opt.df_rule);
  r.dropped = dropped;
  r.replicates = std::move(reps);
  r.names = shape.names;
  r.block_offset = shape.block_offset;
  r.bases = shape.bases;
  return r;
}

namespace {

// Regularized incomplete beta I_x(a, b) by the Lentz continued fraction.
double incomplete_beta(double a, double b, double x) {
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  if (x > (a + 1) / (a + b + 2)) return 1.0 - incomplete_beta(b, a, 1.0 - x);
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x)) / a;
  const double tiny = 1e-300;
  double f = 1.0, c = 1.0, d = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const int m = i / 2;
    double num;
    if (i == 0) {
      num = 1.0;
    } else if (i % 2 == 0) {
      num = m * (b - m) * x / ((a + 2.0 * m - 1) * (a + 2.0 * m));
    } else {
      num = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1));
    }
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    const double cd = c * d;
    f *= cd;
    if (std::abs(1.0 - cd) < 1e-15) break;
  }
  return front * (f - 1.0);
}

double student_t_cdf(double t, double df) {
  if (std::isinf(df)) return 0.5 * std::erfc(-t / std::sqrt(2.0));
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

}  // namespace

double student_t_quantile(double p, double df) {
  if (!(p > 0 && p < 1)) fail_validation("quantile level must be in (0, 1)");
  if (!(df > 0)) fail_validation("degrees of freedom must be positive");
  double lo = -1.0, hi = 1.0;
  while (student_t_cdf(lo, df) > p) lo *= 2.0;
  while (student_t_cdf(hi, df) < p) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

BetaCurve boot_mi_beta_curve(const BootMiResult& r, std::size_t stream, std::span<const double> t_grid) {
  if (stream >= r.bases.size()) fail_validation("no such functional stream in the bootstrap result");
  const int off = r.block_offset[stream];
  const SplineBasis& basis = r.bases[stream];
  const Vec b = r.point.segment(off, basis.k_b);
  const Mat sbb = r.sigma_bm.block(off, off, basis.k_b, basis.k_b);
  const double q = student_t_quantile(0.975, r.df);
  BetaCurve c;
  for (double t : t_grid) {
    const Vec phi = basis.eval(t);
    const double est = phi.dot(b);
    const double half = q * std::sqrt(std::max(0.0, phi.dot(sbb * phi)));
    c.t.push_back(t);
    c.est.push_back(est);
    c.lo.push_back(est - half);
    c.hi.push_back(est + half);
    c.significant.push_back(est - half > 0 || est + half < 0);
  }
  return c;
}

std::string boot_mi_json(const BootMiResult& r) {
  using nlohmann::json;
  const auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  const auto mat = [&](const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec(m.row(i).transpose()));
    return rows;
  };
  json j;
  j["B"] = r.B;
  j["M"] = r.M;
  j["names"] = r.names;
  j["point"] = vec(r.point);
  j["msw"] = mat(r.msw);
  j["msb"] = mat(r.msb);
  j["sigma_bm"] = mat(r.sigma_bm);
  j["df"] = std::isinf(r.df) ? json("inf") : json(r.df);
  j["floored"] = r.floored;
  j["dropped"] = r.dropped;
  json reps = json::array();
  for (const auto& rep : r.replicates)
    reps.push_back({{"b", rep.b}, {"ok", rep.ok}, {"error", rep.error}, {"outer_iterations", rep.outer_iterations},
                    {"converged", rep.converged}});
  j["replicates"] = reps;
  return j.dump(2) + "\n";
}

}  // namespace subhaz
