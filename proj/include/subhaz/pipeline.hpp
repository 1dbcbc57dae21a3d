// End-to-end helpers: simulate user-days, estimate the functional model, fit.
#pragma once

#include "subhaz/common.hpp"
#include "subhaz/design.hpp"
#include "subhaz/fit.hpp"
#include "subhaz/fpca.hpp"
#include "subhaz/gp_sim.hpp"
#include "subhaz/subsample.hpp"

#include <optional>
#include <vector>

namespace subhaz {

struct SimConfig {
  int user_days = 100;
  int steps = 1000;
  double day_length = 12.0;  // hours
  MaternParams matern{0.5, 1.0, 3.6};
  TrueBeta beta{TrueBeta::Kind::sine, 0.0, 1.0, 0.5};
  double theta0 = std::log(5.0 / 1000.0);
  SamplingDesign design{SamplingDesign::Kind::constant_rate, 2.0};
  /// Start of the at-risk period; NaN means beta.delta.
  double entry = std::numeric_limits<double>::quiet_NaN();
  bool zero_pad = false;
  /// Independent per-grid-point missingness applied after events are generated.
  double mcar = 0.0;

  void validate() const;
  double step() const { return day_length / steps; }
};

/// Simulated subjects plus what is needed to evaluate pi at event times.
struct Dataset {
  std::vector<SubjectData> subjects;
  SamplingDesign design;
  TrueBeta beta;
  double theta0 = 0.0;
  double step = 1.0;

  double pi_at(int subject, double t) const;
  int total_events() const;
  int total_samples() const;
};

/// Hazard in per-study-time units at t (per-step probability divided by the step).
double hazard_per_unit(const SensorPath& path, const TrueBeta& beta, double theta0, double step, double t,
                       bool zero_pad = false);

/// Stream 0 of subject i is drawn from make_rng(seed, i, 0), events from (seed, i, 1),
/// samples from (seed, i, 2) and missingness from (seed, i, 3).
Dataset simulate_dataset(const SimConfig& cfg, std::uint64_t seed, const GpSampler* sampler = nullptr);

struct ModelConfig {
  double delta = 0.5;
  int m = 64;
  int k_x = 35;
  int k_b = 35;
  std::vector<Feature> features{Feature::intercept};
  FpcaOptions fpca;
  /// Share one mean/eigensystem across labels.
  bool pooled_labels = false;
  bool zero_pad = false;
  FitOptions fit;

  void validate() const;
};

/// Functional model for stream `stream` estimated from all subjects' windows.
StreamModel build_stream_model(std::span<const SubjectData> subjects, std::size_t stream, const ModelConfig& cfg,
                               std::vector<std::string>* warnings = nullptr);

struct PipelineFit {
  FitResult fit;
  Design design;
  std::vector<StreamModel> models;
};

/// One stream per entry of `deltas` (empty: a single stream with cfg.delta).
PipelineFit fit_dataset(std::span<const SubjectData> subjects, const PiAtEvent& pi_event, const ModelConfig& cfg,
                        std::span<const double> deltas = {});

/// pi at event times for a dataset, scaled by the cumulative thinning probability.
PiAtEvent dataset_pi(const Dataset& ds, double keep_scale = 1.0);

/// Replaces each subject's samples by an independent thinning with keep_prob, drawn from
/// make_rng(seed, subject_id, 4, stage).
std::vector<SubjectData> thin_subjects(std::span<const SubjectData> subjects, double keep_prob, std::uint64_t seed,
                                       std::uint64_t stage);

}  // namespace subhaz
