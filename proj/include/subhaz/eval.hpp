// Accuracy metrics for estimated beta curves and the replicate-study driver.
//
// Sampling-rate labels are expected hours between sampled non-event times
// (0.5 means pi = 2 per hour); a larger label means fewer samples.
#pragma once

#include "subhaz/common.hpp"
#include "subhaz/pipeline.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace subhaz {

/// Composite trapezoid grid on [0, upper] split at breakpoints. Each breakpoint appears
/// twice: once as the right end of the piece before it (evaluated at the point itself,
/// the left limit for the window-truncated curves used here) and once as the left end of
/// the next piece (evaluated just above it, the right limit).
struct EvalGrid {
  std::vector<double> s;     // evaluation positions
  Vec w;                     // trapezoid weights
  std::vector<double> piece_end;  // right end of the piece owning each node
};
EvalGrid make_eval_grid(std::span<const double> breakpoints, double upper, int per_unit = 2000);

/// Values of a curve at the grid nodes.
Vec eval_curve(const std::function<double(double)>& f, const EvalGrid& g);
Vec eval_curve(const SplineBasis& basis, const Vec& b, const EvalGrid& g);

struct MiseReport {
  double mise = 0, variance = 0, squared_bias = 0, subsampling_variance = 0, partial_mise = 0;
  double mise_se = 0, variance_se = 0;
  double runtime_secs = 0;
  int replicates = 0;
  int failures = 0;
};

/// Rows of `curves` are replicates. All quantities are divided by `norm` (int beta^2).
MiseReport mise(const Mat& curves, const Vec& truth, const EvalGrid& g, double norm);
/// Mean over paired rows of the integrated squared difference, divided by norm.
double subsampling_variance(const Mat& curves, const Mat& base, const EvalGrid& g, double norm);
/// (delta_fit / d) int_0^d (curve - truth)^2 averaged over rows, d = min(delta_fit, delta_true),
/// divided by norm. `d` must be a breakpoint of the grid.
double partial_mise(const Mat& curves, const Vec& truth, const EvalGrid& g, double delta_fit, double delta_true,
                    double norm);

struct EfficiencyRow {
  double sensor_hz = 0;
  double c = 0;
  std::vector<long> reduction;  // one per intensity bound
  double efficiency = 0;
};
/// Data reduction hz*3600 / (c*H) rounded to the nearest integer, and efficiency c/(c+1).
std::vector<EfficiencyRow> efficiency_table(std::span<const double> c_values, std::span<const double> sensor_hz,
                                            std::span<const double> bounds);
std::string efficiency_csv(const std::vector<EfficiencyRow>& rows, std::span<const double> bounds);

struct ExperimentConfig {
  SimConfig sim;
  ModelConfig model;
  int replicates = 100;
  /// Rate labels; the smallest is the base design, the others nested thinnings of it.
  std::vector<double> rate_labels{0.5, 1.0, 2.0, 4.0};
  /// Fitted window lengths (empty: model.delta).
  std::vector<double> deltas;
  std::uint64_t seed = 1;
  /// MISE integration limit; NaN means 1.25 * max(delta).
  double upper = std::numeric_limits<double>::quiet_NaN();
  int threads = 1;

  void validate() const;
};

struct ExperimentCell {
  double delta = 0;
  double rate_label = 0;
  MiseReport report;
};

struct ExperimentResult {
  std::vector<ExperimentCell> cells;  // ordered by (delta, rate_label)
  int replicates = 0;
  std::vector<std::string> failures;

  const ExperimentCell& cell(double delta, double rate_label) const;
};

using Progress = std::function<void(int done, int total)>;

/// simulate -> sample at the base rate -> nested thinning -> fit each (delta, rate) -> metrics.
/// Replicate r uses seed derive_seed(seed, r). Failed fits are excluded and listed.
ExperimentResult replicate_experiment(const ExperimentConfig& cfg, const Progress& progress = {});

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// delta,rate,mise,mise_se,variance,variance_se,squared_bias,subsampling_variance,partial_mise,
/// [runtime_secs,]replicates,failures. Runtimes are left out for byte-reproducible tables.
std::string experiment_csv(const ExperimentResult& r, bool with_runtime = true);

}  // namespace subhaz
