#include "subhaz/subsample.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace subhaz {

void SamplingDesign::validate() const {
  if (!(rate_or_c >= 0)) fail_validation("sampling rate must be nonnegative");
  if (!(lower > 0) || !(upper < INFINITY) || !(lower <= upper))
    fail_validation("sampling bounds must satisfy 0 < L <= U < inf");
}

void SampleSet::validate() const {
  if (pi_values.size() != times.size()) fail_validation("sample times/pi length mismatch");
  for (std::size_t j = 1; j < times.size(); ++j)
    if (!(times[j] > times[j - 1])) fail_validation("sample times must be strictly increasing");
  for (double p : pi_values)
    if (!(p > 0)) fail_validation("sampling intensity must be positive");
}

namespace {

bool near_any(double t, std::span<const double> avoid) {
  const auto it = std::lower_bound(avoid.begin(), avoid.end(), t - 1e-12);
  return it != avoid.end() && std::abs(*it - t) <= 1e-12;
}

}  // namespace

SampleSet draw_samples(const SamplingDesign& design, double entry, double tau, const RateFn& hazard,
                       Rng& rng, std::span<const double> avoid) {
  design.validate();
  SampleSet out;
  if (!(tau > entry) || design.rate_or_c == 0.0) return out;

  if (design.kind == SamplingDesign::Kind::constant_rate) {
    const double rate = design.rate_or_c;
    if (rate > design.upper || rate < design.lower)
      fail_validation("constant sampling rate outside admissible bounds");
    double t = entry;
    while (true) {
      t += exponential(rng, rate);
      if (t > tau) break;
      if (near_any(t, avoid)) continue;
      out.times.push_back(t);
      out.pi_values.push_back(rate);
    }
    return out;
  }

  if (!hazard) fail_validation("proportional sampling design needs a pilot hazard");
  const double bound = design.upper;
  double t = entry;
  while (true) {
    t += exponential(rng, bound);
    if (t > tau) break;
    const double pi = design.rate_or_c * hazard(t);
    if (pi > bound)
      fail_numerical("sampling intensity " + std::to_string(pi) + " exceeds upper bound U");
    if (pi < design.lower) fail_numerical("sampling intensity below lower bound L");
    if (uniform_open(rng) * bound < pi && !near_any(t, avoid)) {
      out.times.push_back(t);
      out.pi_values.push_back(pi);
    }
  }
  return out;
}

SampleSet draw_samples(const SamplingDesign& design, double entry, double tau, const RateFn& hazard,
                       std::uint64_t seed, std::span<const double> avoid) {
  Rng rng = make_rng(seed);
  return draw_samples(design, entry, tau, hazard, rng, avoid);
}

SampleSet thin(const SampleSet& s, double keep_prob, Rng& rng) {
  if (!(keep_prob > 0.0) || keep_prob > 1.0) fail_validation("thinning probability must be in (0,1]");
  SampleSet out;
  out.subject_id = s.subject_id;
  for (std::size_t j = 0; j < s.size(); ++j) {
    // One draw per point even at keep_prob = 1 keeps nested thinning streams aligned.
    const bool keep = uniform_open(rng) < keep_prob;
    if (keep) {
      out.times.push_back(s.times[j]);
      out.pi_values.push_back(s.pi_values[j] * keep_prob);
    }
  }
  return out;
}

SampleSet thin(const SampleSet& s, double keep_prob, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return thin(s, keep_prob, rng);
}

double weight(double pi, double h) { return pi / (pi + h); }

Vec ht_estimator(const SampleSet& samples, const GradFn& dh, Eigen::Index dim) {
  Vec acc = Vec::Zero(dim);
  for (std::size_t j = 0; j < samples.size(); ++j) acc += dh(samples.times[j]) / samples.pi_values[j];
  return acc;
}

Vec wp_estimator(const SampleSet& samples, const EventSet& events, const GradFn& dh,
                 const RateFn& h, const RateFn& pi, Eigen::Index dim) {
  Vec acc = Vec::Zero(dim);
  for (double u : events.times) acc += dh(u) / (pi(u) + h(u));
  for (std::size_t j = 0; j < samples.size(); ++j) {
    const double u = samples.times[j];
    acc += dh(u) / (samples.pi_values[j] + h(u));
  }
  return acc;
}

}  // namespace subhaz
