// Penalized logistic regression with offset, and the alternating variance update.
//
// Rows with y = 1 are events and y = 0 sampled non-event times. The linear predictor
// is eta = w'theta - log pi, so P(y = 1) = h / (h + pi) with h = exp(w'theta).
// Penalized coefficients (one group per functional stream) carry a N(0, sigma2_g) prior.
#pragma once

#include "subhaz/common.hpp"
#include "subhaz/design.hpp"

#include <span>
#include <string>
#include <vector>

namespace subhaz {

/// Approximate score: sum_events w pi/(pi+h) - sum_samples w h/(pi+h), computed from h and pi.
Vec approx_score(const Design& d, const Vec& theta);
/// sum (y - expit(w'theta - log pi)) w.
Vec logistic_score(const Design& d, const Vec& theta);
/// Unpenalized log-likelihood of the logistic model.
double logistic_loglik(const Design& d, const Vec& theta);

/// Diagonal penalty B/sigma2 (zero for unpenalized columns; sigma2 = inf disables a group).
Vec penalty_diag(const Design& d, std::span<const double> sigma2);
double penalized_loglik(const Design& d, const Vec& theta, std::span<const double> sigma2);
Vec penalized_score(const Design& d, const Vec& theta, std::span<const double> sigma2);

/// n^-1 sum p(1-p) w w' with n the number of subjects.
Mat fisher_info(const Design& d, const Vec& theta);
/// sum p(1-p) w w' (the unpenalized Newton Hessian, sign flipped).
Mat logistic_hessian(const Design& d, const Vec& theta);

struct IrlsOptions {
  int max_iter = 100;
  double grad_tol = 1e-8;
  double step_tol = 1e-10;
  int max_halvings = 20;
};

struct IrlsResult {
  Vec theta;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
  bool separation = false;
  std::vector<std::string> warnings;
  /// Penalized log-likelihood after each accepted step.
  std::vector<double> trace;
};

/// Newton-Raphson on the penalized log-likelihood with step halving. Non-convergence
/// throws a numerical error unless separation was detected (then a warning is returned).
IrlsResult irls_fit(const Design& d, std::span<const double> sigma2, const Vec& start,
                    const IrlsOptions& opt = {});

/// theta_g' theta_g / |g| over the penalized entries, floored at 1e-10.
double update_sigma2(const Vec& theta, std::span<const int> penalized_idx);

struct FitOptions {
  IrlsOptions irls;
  double sigma2_init = 1.0;
  int max_outer = 50;
  double sigma2_tol = 1e-6;
  /// Fixed per-group sigma2 (skips the alternating update) when nonempty.
  std::vector<double> fixed_sigma2;
};

struct FitResult {
  Vec theta;
  std::vector<double> sigma2;
  Mat fisher;
  Mat cov_theta;
  int n_subjects = 0;
  std::vector<std::string> names;
  std::vector<int> pen_group;
  std::vector<int> block_offset;
  std::vector<SplineBasis> bases;
  int outer_iterations = 0;
  int irls_iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
  std::vector<std::string> warnings;

  Mat sigma_bb(std::size_t stream) const;
  Vec b(std::size_t stream) const;
};

/// Number of penalty groups (streams) in a design.
int penalty_groups(const Design& d);

/// Alternates irls_fit and update_sigma2 until the relative sigma2 change is below tol.
/// Rejects designs without events or without sampled times.
FitResult fit_alternating(const Design& d, const FitOptions& opt = {});

struct BetaCurve {
  std::vector<double> t, est, lo, hi;
  std::vector<std::uint8_t> significant;
};

BetaCurve beta_curve(const FitResult& fit, std::size_t stream, std::span<const double> t_grid);
BetaCurve beta_curve(const SplineBasis& basis, const Vec& b, const Mat& sigma_bb, std::span<const double> t_grid);

/// Unpenalized weighted estimating equations for theta.
///   wp: the logistic score (weights pi/(pi+h)).
///   ht: sum_events w - sum_samples w h/pi (unit weights, Horvitz-Thompson plug-in).
/// With y = 0 rows on a deterministic quadrature grid and log pi = -log(quadrature weight),
/// ht is the full Poisson-process likelihood score.
enum class Weighting { wp, ht };
IrlsResult fit_estimating_equation(const Design& d, Weighting weighting, const Vec& start,
                                   const IrlsOptions& opt = {});

}  // namespace subhaz
