#include "subhaz/eval.hpp"

#include "subhaz/io.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

namespace subhaz {

EvalGrid make_eval_grid(std::span<const double> breakpoints, double upper, int per_unit) {
  if (!(upper > 0)) fail_validation("integration limit must be positive");
  std::vector<double> cuts;
  for (double b : breakpoints)
    if (b > 0 && b < upper) cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  cuts.push_back(upper);
  EvalGrid g;
  std::vector<double> w;
  double a = 0.0;
  for (double b : cuts) {
    const int n = std::max(2, static_cast<int>(std::ceil((b - a) * per_unit)));
    const double h = (b - a) / n;
    for (int i = 0; i <= n; ++i) {
      double s = i == n ? b : a + i * h;
      if (i == 0 && a > 0) s = std::nextafter(a, INFINITY);
      g.s.push_back(s);
      w.push_back(i == 0 || i == n ? 0.5 * h : h);
      g.piece_end.push_back(b);
    }
    a = b;
  }
  g.w = Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
  return g;
}

Vec eval_curve(const std::function<double(double)>& f, const EvalGrid& g) {
  Vec v(static_cast<Eigen::Index>(g.s.size()));
  for (std::size_t i = 0; i < g.s.size(); ++i) v[static_cast<Eigen::Index>(i)] = f(g.s[i]);
  return v;
}

Vec eval_curve(const SplineBasis& basis, const Vec& b, const EvalGrid& g) {
  return eval_curve([&](double s) { return basis.eval(s).dot(b); }, g);
}

namespace {

void check_grid(const Mat& curves, const EvalGrid& g) {
  if (curves.cols() != static_cast<Eigen::Index>(g.s.size())) fail_validation("curves and evaluation grid differ");
}

double mean_and_se(const Vec& v, double* se) {
  const auto n = static_cast<double>(v.size());
  const double m = v.mean();
  if (se) *se = v.size() > 1 ? std::sqrt((v.array() - m).square().sum() / (n - 1) / n) : 0.0;
  return m;
}

}  // namespace

MiseReport mise(const Mat& curves, const Vec& truth, const EvalGrid& g, double norm) {
  check_grid(curves, g);
  if (truth.size() != curves.cols()) fail_validation("truth and evaluation grid differ");
  MiseReport r;
  r.replicates = static_cast<int>(curves.rows());
  if (curves.rows() == 0) return r;
  const Vec mean = curves.colwise().mean().transpose();
  Vec ise(curves.rows()), dev(curves.rows());
  for (Eigen::Index i = 0; i < curves.rows(); ++i) {
    const Vec e = curves.row(i).transpose() - truth;
    const Vec d = curves.row(i).transpose() - mean;
    ise[i] = g.w.dot(e.cwiseProduct(e)) / norm;
    dev[i] = g.w.dot(d.cwiseProduct(d)) / norm;
  }
  r.mise = mean_and_se(ise, &r.mise_se);
  r.variance = mean_and_se(dev, &r.variance_se);
  const Vec b = mean - truth;
  r.squared_bias = g.w.dot(b.cwiseProduct(b)) / norm;
  return r;
}

double subsampling_variance(const Mat& curves, const Mat& base, const EvalGrid& g, double norm) {
  check_grid(curves, g);
  if (curves.rows() != base.rows() || curves.cols() != base.cols()) fail_validation("unpaired curve sets");
  if (curves.rows() == 0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < curves.rows(); ++i) {
    const Vec d = (curves.row(i) - base.row(i)).transpose();
    acc += g.w.dot(d.cwiseProduct(d));
  }
  return acc / static_cast<double>(curves.rows()) / norm;
}

double partial_mise(const Mat& curves, const Vec& truth, const EvalGrid& g, double delta_fit, double delta_true,
                    double norm) {
  check_grid(curves, g);
  const double d = std::min(delta_fit, delta_true);
  if (std::none_of(g.piece_end.begin(), g.piece_end.end(), [&](double e) { return e == d; }))
    fail_validation("partial MISE limit is not a breakpoint of the evaluation grid");
  if (curves.rows() == 0) return 0.0;
  Vec wp = g.w;
  for (std::size_t k = 0; k < g.s.size(); ++k)
    if (g.piece_end[k] > d) wp[static_cast<Eigen::Index>(k)] = 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < curves.rows(); ++i) {
    const Vec e = curves.row(i).transpose() - truth;
    acc += wp.dot(e.cwiseProduct(e));
  }
  return (delta_fit / d) * acc / static_cast<double>(curves.rows()) / norm;
}

std::vector<EfficiencyRow> efficiency_table(std::span<const double> c_values, std::span<const double> sensor_hz,
                                            std::span<const double> bounds) {
  std::vector<EfficiencyRow> rows;
  for (double hz : sensor_hz) {
    if (!(hz > 0)) fail_validation("sensor rate must be positive");
    for (double c : c_values) {
      if (!(c > 0)) fail_validation("subsampling constant must be positive");
      EfficiencyRow r;
      r.sensor_hz = hz;
      r.c = c;
      for (double h : bounds) {
        if (!(h > 0)) fail_validation("intensity bound must be positive");
        r.reduction.push_back(std::lround(hz * 3600.0 / (c * h)));
      }
      r.efficiency = c / (c + 1.0);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

std::string efficiency_csv(const std::vector<EfficiencyRow>& rows, std::span<const double> bounds) {
  std::ostringstream out;
  out << "sensor_hz,c";
  for (double h : bounds) out << ",H=" << fmt(h);
  out << ",efficiency\n";
  for (const auto& r : rows) {
    out << fmt(r.sensor_hz) << ',' << fmt(r.c);
    for (long v : r.reduction) out << ',' << v;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", r.efficiency);
    out << ',' << buf << '\n';
  }
  return out.str();
}

void ExperimentConfig::validate() const {
  sim.validate();
  model.validate();
  if (replicates < 0) fail_validation("replicates must be nonnegative");
  if (rate_labels.empty()) fail_validation("at least one sampling-rate label is required");
  for (double r : rate_labels)
    if (!(r > 0)) fail_validation("sampling-rate labels must be positive");
  for (double d : deltas)
    if (!(d > 0)) fail_validation("window lengths must be positive");
  if (threads < 1) fail_validation("thread count must be at least 1");
}

const ExperimentCell& ExperimentResult::cell(double delta, double rate_label) const {
  for (const auto& c : cells)
    if (std::abs(c.delta - delta) < 1e-12 && std::abs(c.rate_label - rate_label) < 1e-12) return c;
  fail_validation("no experiment cell for the requested delta and rate");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

ExperimentResult replicate_experiment(const ExperimentConfig& cfg, const Progress& progress) {
  cfg.validate();
  std::vector<double> labels = cfg.rate_labels;
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  std::vector<double> deltas = cfg.deltas.empty() ? std::vector<double>{cfg.model.delta} : cfg.deltas;
  const double max_delta = *std::max_element(deltas.begin(), deltas.end());
  const double upper = std::isnan(cfg.upper) ? 1.25 * std::max(max_delta, cfg.sim.beta.delta) : cfg.upper;
  std::vector<double> cuts = deltas;
  cuts.push_back(cfg.sim.beta.delta);
  const EvalGrid grid = make_eval_grid(cuts, upper);
  const Vec truth = eval_curve([&](double s) { return cfg.sim.beta(s); }, grid);
  const double norm = cfg.sim.beta.integrated_square();
  if (!(norm > 0)) fail_validation("true beta has zero norm; MISE normalization undefined");

  SimConfig sim = cfg.sim;
  sim.design.rate_or_c = cfg.sim.design.kind == SamplingDesign::Kind::constant_rate ? 1.0 / labels.front()
                                                                                     : cfg.sim.design.rate_or_c;
  if (std::isnan(sim.entry)) sim.entry = std::max(max_delta, sim.beta.delta);
  const auto day = linspace(0.0, sim.day_length, static_cast<std::size_t>(sim.steps) + 1);
  const GpSampler sampler(day, sim.matern);

  const std::size_t n_cells = deltas.size() * labels.size();
  const auto R = static_cast<std::size_t>(cfg.replicates);
  // curves[cell][replicate]; empty vector marks a failed fit.
  std::vector<std::vector<Vec>> curves(n_cells, std::vector<Vec>(R));
  std::vector<std::vector<double>> secs(n_cells, std::vector<double>(R, 0.0));
  std::vector<std::vector<std::string>> errors(R);

  const auto run_one = [&](std::size_t r) {
    const std::uint64_t rs = derive_seed(cfg.seed, r);
    const Dataset ds = simulate_dataset(sim, rs, &sampler);
    std::vector<std::vector<SubjectData>> stages;
    stages.push_back(ds.subjects);
    for (std::size_t k = 1; k < labels.size(); ++k)
      stages.push_back(thin_subjects(stages.back(), labels[k - 1] / labels[k], rs, k));
    for (std::size_t di = 0; di < deltas.size(); ++di) {
      ModelConfig mc = cfg.model;
      mc.delta = deltas[di];
      for (std::size_t k = 0; k < labels.size(); ++k) {
        const std::size_t cell = di * labels.size() + k;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          const PipelineFit pf = fit_dataset(stages[k], dataset_pi(ds, labels.front() / labels[k]), mc);
          curves[cell][r] = eval_curve(pf.fit.bases[0], pf.fit.b(0), grid);
        } catch (const Error& e) {
          errors[r].push_back("replicate " + std::to_string(r) + " delta " + fmt(deltas[di]) + " rate " +
                              fmt(labels[k]) + ": " + e.what());
        }
        secs[cell][r] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    }
  };

  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0};
  std::mutex progress_mu;
  const auto worker = [&] {
    for (std::size_t r; (r = next.fetch_add(1)) < R;) {
      run_one(r);
      const int d = ++done;
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mu);
        progress(d, static_cast<int>(R));
      }
    }
  };
  const int n_threads = std::min<int>(cfg.threads, std::max<int>(1, cfg.replicates));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ExperimentResult out;
  out.replicates = cfg.replicates;
  for (const auto& e : errors) out.failures.insert(out.failures.end(), e.begin(), e.end());
  const auto stack = [&](std::size_t cell, const std::vector<std::size_t>& rows) {
    Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(grid.s.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = curves[cell][rows[i]].transpose();
    return m;
  };
  for (std::size_t di = 0; di < deltas.size(); ++di) {
    const std::size_t base_cell = di * labels.size();
    for (std::size_t k = 0; k < labels.size(); ++k) {
      const std::size_t cell = base_cell + k;
      std::vector<std::size_t> ok, paired;
      double t_sum = 0.0;
      for (std::size_t r = 0; r < R; ++r) {
        t_sum += secs[cell][r];
        if (curves[cell][r].size() == 0) continue;
        ok.push_back(r);
        if (curves[base_cell][r].size() != 0) paired.push_back(r);
      }
      ExperimentCell c;
      c.delta = deltas[di];
      c.rate_label = labels[k];
      const Mat cm = stack(cell, ok);
      c.report = mise(cm, truth, grid, norm);
      c.report.partial_mise = partial_mise(cm, truth, grid, deltas[di], cfg.sim.beta.delta, norm);
      c.report.subsampling_variance =
          k == 0 ? 0.0 : subsampling_variance(stack(cell, paired), stack(base_cell, paired), grid, norm);
      c.report.runtime_secs = R > 0 ? t_sum / static_cast<double>(R) : 0.0;
      c.report.failures = static_cast<int>(R - ok.size());
      out.cells.push_back(c);
    }
  }
  return out;
}

std::string experiment_csv(const ExperimentResult& r, bool with_runtime) {
  std::ostringstream out;
  out << "delta,rate,mise,mise_se,variance,variance_se,squared_bias,subsampling_variance,partial_mise,"
      << (with_runtime ? "runtime_secs," : "") << "replicates,failures\n";
  for (const auto& c : r.cells) {
    const auto& m = c.report;
    out << fmt(c.delta) << ',' << fmt(c.rate_label) << ',' << fmt(m.mise) << ',' << fmt(m.mise_se) << ','
        << fmt(m.variance) << ',' << fmt(m.variance_se) << ',' << fmt(m.squared_bias) << ','
        << fmt(m.subsampling_variance) << ',' << fmt(m.partial_mise) << ',';
    if (with_runtime) out << fmt(m.runtime_secs) << ',';
    out << m.replicates << ',' << m.failures << '\n';
  }
  return out.str();
}

}  // namespace subhaz
