// Synthetic sensor trajectories and recurrent events.
//
// Time is measured in study-time units (hours in the shipped presets: a 12 hour
// day on a 1000-step grid). The event hazard is a per-grid-step probability:
//   p(t) = exp(theta0 + int_0^delta x(t - s) beta(s) ds),
// so theta0 = log(5/1000) gives about five events per 1000-step day.
#pragma once

#include "subhaz/common.hpp"

#include <cstdint>
#include <limits>
#include <vector>

namespace subhaz {

struct MaternParams {
  double nu = 0.5;
  double sigma2 = 1.0;
  double rho = 3.6;

  void validate() const;
};

/// Dense per-subject trajectory on a regular grid, one or more streams.
struct SensorPath {
  int subject_id = 0;
  std::vector<double> grid;
  std::vector<std::vector<double>> values;        // [stream][grid index]
  std::vector<std::vector<std::uint8_t>> mask;    // 1 = observed

  void validate() const;
  std::size_t streams() const { return values.size(); }
  std::size_t size() const { return grid.size(); }
  double t0() const { return grid.front(); }
  double t1() const { return grid.back(); }
  double dt() const { return grid[1] - grid[0]; }
  bool observed(std::size_t stream, std::size_t k) const { return mask[stream][k] != 0; }
  bool fully_observed(std::size_t stream) const;

  /// Linear interpolation of stream at time t. Exact grid value when t is grid aligned.
  /// Returns NaN when a contributing grid value is masked. Outside the grid: 0 when
  /// zero_pad, otherwise an out-of-range error.
  double value_at(std::size_t stream, double t, bool zero_pad = false) const;

  /// Add a fully observed stream.
  void add_stream(std::vector<double> v);
};

struct TrueBeta {
  enum class Kind { exp_decay, sine };
  Kind kind = Kind::sine;
  double beta0 = 0.0;
  double beta1 = 1.0;
  double delta = 0.5;

  void validate() const;
  double operator()(double s) const;
  /// int_0^inf beta(s)^2 ds, by quadrature.
  double integrated_square() const;
};

double true_beta_eval(const TrueBeta& beta, double s);

/// Ordered event times for one subject, at risk on (entry, tau].
struct EventSet {
  int subject_id = 0;
  std::vector<double> times;
  double entry = 0.0;
  double tau = 0.0;

  void validate() const;
  /// N(t-): events strictly before t.
  int count_before(double t) const;
  /// Most recent event strictly before t, or NaN.
  double last_before(double t) const;
};

double matern_cov(double t1, double t2, const MaternParams& p);
Mat matern_matrix(const std::vector<double>& a, const std::vector<double>& b, const MaternParams& p);

/// Caches the covariance factor for a grid, so repeated draws cost one
/// triangular matrix-vector product.
class GpSampler {
 public:
  GpSampler(std::vector<double> grid, const MaternParams& p);
  std::vector<double> draw(Rng& rng) const;
  const std::vector<double>& grid() const { return grid_; }
  const Mat& factor() const { return chol_; }

 private:
  std::vector<double> grid_;
  Mat chol_;
};

SensorPath sample_gp(const std::vector<double>& grid, const MaternParams& p, std::uint64_t seed);

/// Weight of each grid node in int_0^delta x(t - s) beta(s) ds when x is the linear
/// interpolant of the grid values. Node lags are (frac + j) * dt for j = -1, 0, 1, ...
/// where frac in [0,1) is the anchor's fractional grid position. Element 0 is the
/// node at lag (frac - 1) * dt, i.e. the grid point just after the anchor.
std::vector<double> lag_weights(const TrueBeta& beta, double dt, double frac);

/// int_0^delta x(t - s) beta(s) ds on the interpolated path.
double functional_term(const SensorPath& path, std::size_t stream, const TrueBeta& beta, double t,
                       bool zero_pad = false);

/// Per-grid-step hazard exp(theta0 + functional term).
double hazard_eval(const SensorPath& path, const TrueBeta& beta, double theta0, double t,
                   bool zero_pad = false);

struct EventOptions {
  /// Start of the at-risk period; NaN means beta.delta (full window available).
  double entry = std::numeric_limits<double>::quiet_NaN();
  /// Zero-pad windows reaching before the first grid point instead of restricting risk.
  bool zero_pad = false;
  std::size_t stream = 0;
};

/// Bernoulli draw per grid step with probability hazard_eval at the step midpoint;
/// events are placed at that midpoint.
EventSet generate_events(const SensorPath& path, const TrueBeta& beta, double theta0, Rng& rng,
                         const EventOptions& opt = {});
EventSet generate_events(const SensorPath& path, const TrueBeta& beta, double theta0,
                         std::uint64_t seed, const EventOptions& opt = {});

}  // namespace subhaz
