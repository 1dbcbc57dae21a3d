#include "subhaz/gp_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace subhaz {

namespace {

// 4-point Gauss-Legendre on [-1, 1].
constexpr std::array<double, 4> kGlNodes = {-0.8611363115940526, -0.3399810435848563,
                                            0.3399810435848563, 0.8611363115940526};
constexpr std::array<double, 4> kGlWeights = {0.3478548451374538, 0.6521451548625461,
                                              0.6521451548625461, 0.3478548451374538};

template <class F>
double gauss_legendre(F&& f, double a, double b) {
  if (b <= a) return 0.0;
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  double s = 0.0;
  for (std::size_t i = 0; i < kGlNodes.size(); ++i) s += kGlWeights[i] * f(mid + half * kGlNodes[i]);
  return s * half;
}

}  // namespace

void MaternParams::validate() const {
  if (!(nu > 0) || !(sigma2 > 0) || !(rho > 0))
    fail_validation("Matern parameters must satisfy nu > 0, sigma2 > 0, rho > 0");
}

double matern_cov(double t1, double t2, const MaternParams& p) {
  const double r = std::abs(t1 - t2);
  if (r == 0.0) return p.sigma2;
  const double x = std::sqrt(2.0 * p.nu) * r / p.rho;
  if (x > 700.0) return 0.0;
  const double c = std::pow(2.0, 1.0 - p.nu) / std::tgamma(p.nu);
  return p.sigma2 * c * std::pow(x, p.nu) * std::cyl_bessel_k(p.nu, x);
}

Mat matern_matrix(const std::vector<double>& a, const std::vector<double>& b, const MaternParams& p) {
  Mat m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = matern_cov(a[i], b[j], p);
  return m;
}

void SensorPath::validate() const {
  if (grid.size() < 2) fail_validation("sensor grid needs at least 2 points");
  const double h = grid[1] - grid[0];
  if (!(h > 0)) fail_validation("sensor grid must be strictly increasing");
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double d = grid[k] - grid[k - 1];
    if (!(d > 0) || std::abs(d - h) > 1e-12 * std::max(1.0, std::abs(h)) * 1e3)
      fail_validation("sensor grid spacing must be constant");
  }
  if (mask.size() != values.size()) fail_validation("sensor mask/value stream count mismatch");
  for (std::size_t l = 0; l < values.size(); ++l) {
    if (values[l].size() != grid.size() || mask[l].size() != grid.size())
      fail_validation("sensor stream length differs from grid length");
  }
}

bool SensorPath::fully_observed(std::size_t stream) const {
  return std::all_of(mask[stream].begin(), mask[stream].end(), [](std::uint8_t m) { return m != 0; });
}

void SensorPath::add_stream(std::vector<double> v) {
  mask.emplace_back(v.size(), std::uint8_t{1});
  values.push_back(std::move(v));
}

double SensorPath::value_at(std::size_t stream, double t, bool zero_pad) const {
  const double h = dt();
  const double u = (t - t0()) / h;
  const double n_last = static_cast<double>(grid.size() - 1);
  if (u < -1e-9 || u > n_last + 1e-9) {
    if (zero_pad) return 0.0;
    fail_validation("time " + std::to_string(t) + " outside sensor path support");
  }
  const double nearest = std::round(u);
  const auto& v = values[stream];
  const auto& m = mask[stream];
  if (std::abs(u - nearest) < 1e-9) {
    const auto k = static_cast<std::size_t>(std::clamp(nearest, 0.0, n_last));
    return m[k] ? v[k] : std::numeric_limits<double>::quiet_NaN();
  }
  const auto k = static_cast<std::size_t>(std::floor(u));
  const double f = u - static_cast<double>(k);
  if (!m[k] || !m[k + 1]) return std::numeric_limits<double>::quiet_NaN();
  return (1.0 - f) * v[k] + f * v[k + 1];
}

void TrueBeta::validate() const {
  if (!(delta > 0)) fail_validation("beta window delta must be positive");
}

double TrueBeta::operator()(double s) const {
  if (s > delta || s < 0) return 0.0;
  switch (kind) {
    case Kind::exp_decay:
      return beta0 + std::exp(-beta1 * s);
    case Kind::sine:
      return beta1 * std::sin(2.0 * M_PI * s / delta - M_PI / 2.0);
  }
  return 0.0;
}

double TrueBeta::integrated_square() const {
  constexpr int pieces = 256;
  double acc = 0.0;
  for (int i = 0; i < pieces; ++i) {
    const double a = delta * i / pieces;
    const double b = delta * (i + 1) / pieces;
    acc += gauss_legendre([this](double s) { return (*this)(s) * (*this)(s); }, a, b);
  }
  return acc;
}

double true_beta_eval(const TrueBeta& beta, double s) { return beta(s); }

void EventSet::validate() const {
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (j > 0 && !(times[j] > times[j - 1])) fail_validation("event times must be strictly increasing");
    if (!(times[j] > 0.0) || times[j] > tau) fail_validation("event time outside (0, tau]");
  }
}

int EventSet::count_before(double t) const {
  return static_cast<int>(std::lower_bound(times.begin(), times.end(), t) - times.begin());
}

double EventSet::last_before(double t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return std::numeric_limits<double>::quiet_NaN();
  return *(it - 1);
}

GpSampler::GpSampler(std::vector<double> grid, const MaternParams& p) : grid_(std::move(grid)) {
  p.validate();
  if (grid_.size() < 2) fail_validation("GP grid needs at least 2 points");
  for (std::size_t k = 1; k < grid_.size(); ++k)
    if (!(grid_[k] > grid_[k - 1])) fail_validation("GP grid must be strictly increasing");
  chol_ = jittered_cholesky(matern_matrix(grid_, grid_, p), "Matern GP");
}

std::vector<double> GpSampler::draw(Rng& rng) const {
  const auto n = static_cast<Eigen::Index>(grid_.size());
  NormalSource normal;
  Vec z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
  const Vec x = chol_.triangularView<Eigen::Lower>() * z;
  return {x.data(), x.data() + n};
}

SensorPath sample_gp(const std::vector<double>& grid, const MaternParams& p, std::uint64_t seed) {
  GpSampler sampler(grid, p);
  Rng rng = make_rng(seed);
  SensorPath path;
  path.grid = grid;
  path.add_stream(sampler.draw(rng));
  return path;
}

std::vector<double> lag_weights(const TrueBeta& beta, double dt, double frac) {
  // Node j (j = -1, 0, 1, ...) sits at lag l_j = (frac + j) * dt; its hat function in s
  // is supported on [l_j - dt, l_j + dt].
  std::vector<double> w;
  for (int j = -1;; ++j) {
    const double lag = (frac + j) * dt;
    if (lag - dt >= beta.delta) break;
    const auto hat = [&](double s) { return std::max(0.0, 1.0 - std::abs(s - lag) / dt); };
    const auto f = [&](double s) { return beta(s) * hat(s); };
    const double lo = std::max(0.0, lag - dt);
    const double hi = std::min(beta.delta, lag + dt);
    double acc = 0.0;
    if (hi > lo) {
      const double mid = std::clamp(lag, lo, hi);
      acc = gauss_legendre(f, lo, mid) + gauss_legendre(f, mid, hi);
    }
    w.push_back(acc);
  }
  return w;
}

double functional_term(const SensorPath& path, std::size_t stream, const TrueBeta& beta, double t,
                       bool zero_pad) {
  const double h = path.dt();
  const double last = static_cast<double>(path.size() - 1);
  const double u = (t - path.t0()) / h;
  if (u > last + 1e-9 || u < -1e-9) fail_validation("hazard time outside sensor path support");
  if (!zero_pad && (t - beta.delta) < path.t0() - 1e-9 * h)
    fail_validation("window before path start; restrict risk to t >= delta or enable zero padding");
  double k0 = std::floor(u + 1e-9);
  double frac = u - k0;
  if (frac < 1e-9) frac = 0.0;
  const auto w = lag_weights(beta, h, frac);
  const auto& v = path.values[stream];
  const auto& m = path.mask[stream];
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    const long k = static_cast<long>(k0) + 1 - static_cast<long>(i);
    if (k < 0 || k > static_cast<long>(last)) {
      if (zero_pad) continue;
      fail_validation("window node outside sensor path support");
    }
    const auto ku = static_cast<std::size_t>(k);
    if (!m[ku]) fail_validation("hazard evaluation touches a masked sensor value");
    acc += w[i] * v[ku];
  }
  return acc;
}

double hazard_eval(const SensorPath& path, const TrueBeta& beta, double theta0, double t,
                   bool zero_pad) {
  return std::exp(theta0 + functional_term(path, 0, beta, t, zero_pad));
}

EventSet generate_events(const SensorPath& path, const TrueBeta& beta, double theta0, Rng& rng,
                         const EventOptions& opt) {
  path.validate();
  beta.validate();
  EventSet ev;
  ev.subject_id = path.subject_id;
  ev.tau = path.t1();
  ev.entry = std::isnan(opt.entry) ? (opt.zero_pad ? path.t0() : path.t0() + beta.delta) : opt.entry;
  if (std::isinf(theta0) && theta0 < 0) return ev;

  const double h = path.dt();
  // Every midpoint has fractional position 1/2, so one kernel serves the whole path.
  const auto w = lag_weights(beta, h, 0.5);
  const auto& v = path.values[opt.stream];
  const auto& m = path.mask[opt.stream];
  const long n = static_cast<long>(path.size());
  for (long k = 0; k + 1 < n; ++k) {
    const double mid = path.grid[static_cast<std::size_t>(k)] + 0.5 * h;
    if (mid < ev.entry) continue;
    double f = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const long node = k + 1 - static_cast<long>(i);
      if (node < 0 || node >= n) {
        if (opt.zero_pad || w[i] == 0.0) continue;
        fail_validation("window before path start; restrict risk to t >= delta or enable zero padding");
      }
      if (!m[static_cast<std::size_t>(node)]) fail_validation("event simulation touches a masked value");
      f += w[i] * v[static_cast<std::size_t>(node)];
    }
    const double p = std::exp(theta0 + f);
    if (p > 1.0) fail_numerical("hazard too large for the grid discretization (step probability > 1)");
    if (uniform_open(rng) < p) ev.times.push_back(mid);
  }
  return ev;
}

EventSet generate_events(const SensorPath& path, const TrueBeta& beta, double theta0,
                         std::uint64_t seed, const EventOptions& opt) {
  Rng rng = make_rng(seed);
  return generate_events(path, beta, theta0, rng, opt);
}

}  // namespace subhaz
