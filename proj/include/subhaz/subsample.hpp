// Poisson subsampling of non-event times and the design-unbiased estimators of
// the derivative of the cumulative hazard built from it.
#pragma once

#include "subhaz/common.hpp"
#include "subhaz/gp_sim.hpp"

#include <functional>
#include <span>
#include <vector>

namespace subhaz {

using RateFn = std::function<double(double)>;
using GradFn = std::function<Vec(double)>;

struct SamplingDesign {
  enum class Kind { constant_rate, proportional_to_hazard };
  Kind kind = Kind::constant_rate;
  /// Rate per study-time unit, or the constant c in pi(t) = c * h(t).
  double rate_or_c = 2.0;
  /// Admissible intensity bounds (L, U).
  double lower = 1e-12;
  double upper = 1e12;

  void validate() const;
};

/// Sampled non-event times with the intensity in force when each was drawn.
struct SampleSet {
  int subject_id = 0;
  std::vector<double> times;
  std::vector<double> pi_values;

  std::size_t size() const { return times.size(); }
  void validate() const;
};

/// Draw a Poisson process on (entry, tau]. Constant designs use exponential gaps;
/// proportional designs thin a rate-U process against pi(t) = c * hazard(t).
/// Points within 1e-12 of an entry in `avoid` are discarded.
SampleSet draw_samples(const SamplingDesign& design, double entry, double tau, const RateFn& hazard,
                       Rng& rng, std::span<const double> avoid = {});
SampleSet draw_samples(const SamplingDesign& design, double entry, double tau, const RateFn& hazard,
                       std::uint64_t seed, std::span<const double> avoid = {});

/// Independent Bernoulli(keep_prob) retention; pi is rescaled by keep_prob.
SampleSet thin(const SampleSet& s, double keep_prob, Rng& rng);
SampleSet thin(const SampleSet& s, double keep_prob, std::uint64_t seed);

/// pi / (pi + h).
double weight(double pi, double h);

/// Horvitz-Thompson: sum over sampled u of dh(u) / pi(u).
Vec ht_estimator(const SampleSet& samples, const GradFn& dh, Eigen::Index dim);

/// Superposition estimator: sum over events and samples of dh(u) / (pi(u) + h(u)).
/// `pi` supplies the design intensity at event times.
Vec wp_estimator(const SampleSet& samples, const EventSet& events, const GradFn& dh,
                 const RateFn& h, const RateFn& pi, Eigen::Index dim);

}  // namespace subhaz
