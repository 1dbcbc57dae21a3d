// Conditional-Gaussian imputation of masked sensor values and bootstrap-then-impute
// inference for the fitted coefficients.
#pragma once

#include "subhaz/common.hpp"
#include "subhaz/design.hpp"
#include "subhaz/fit.hpp"
#include "subhaz/fpca.hpp"
#include "subhaz/pipeline.hpp"

#include <span>
#include <string>
#include <vector>

namespace subhaz {

/// Law of the missing coordinates given the observed ones.
struct ConditionalLaw {
  std::vector<int> missing;
  Vec mean;
  Mat cov;
};

/// Gaussian conditioning of x ~ N(mu, sigma) on the coordinates with observed[i] != 0.
/// A singular observed block gets a ridge of 1e-8 * trace / n. No observed coordinate
/// is a validation error.
ConditionalLaw conditional_law(const Vec& x, std::span<const std::uint8_t> observed, const Vec& mu,
                               const Mat& sigma);
/// Window form: mu is the label mean on the window grid, sigma the marginal covariance.
ConditionalLaw conditional_law(const WindowedHistory& window, const Vec& mu, const Mat& sigma);

/// One draw from the law (empty when nothing is missing).
Vec draw_conditional(const ConditionalLaw& law, Rng& rng);

/// One completed copy of `subject`'s stream sm.stream (see impute_sequential).
void impute_in_place(SubjectData& subject, const StreamModel& sm, Rng& rng);

/// Fills masked values of `stream` by walking the subject's anchors in time order. Each
/// anchor conditions the not-yet-imputed sensor-grid values inside its window on the
/// observed and previously imputed ones, using its label's mean and covariance
/// (the covariance is read off the window grid by bilinear interpolation, plus a nugget
/// of max(LabelFpca::nugget, 1e-3 * mean variance) on the diagonal). Returns
/// M completed copies; draw m uses make_rng(seed, subject_id, 5, m). Observed values
/// are copied unchanged.
std::vector<SubjectData> impute_sequential(const SubjectData& subject, const StreamModel& sm, int M,
                                           std::uint64_t seed);

enum class DfRule { b_minus_1, normal };

struct BootMiOptions {
  int B = 20;
  int M = 2;
  DfRule df_rule = DfRule::b_minus_1;
  /// Largest dropped fraction of bootstrap replicates before the run fails.
  double max_drop = 0.1;
};

struct BootMiReplicate {
  int b = 0;
  bool ok = true;
  std::string error;
  int outer_iterations = 0;
  bool converged = false;
};

struct BootMiResult {
  int B = 0;
  int M = 0;
  Vec point;
  Mat msw, msb, sigma_bm;
  double df = 0.0;
  bool floored = false;
  int dropped = 0;
  /// Row b * M + m holds the estimate from bootstrap b, imputation m (kept rows only).
  Mat theta_bm;
  std::vector<BootMiReplicate> replicates;
  std::vector<std::string> names;
  std::vector<int> block_offset;
  std::vector<SplineBasis> bases;
};

/// Pools estimates: rows of theta are (b, m) pairs in b-major order.
///   MSW = sum (theta_bm - theta_b)(.)' / (B (M - 1))
///   MSB = M sum (theta_b - theta_bar)(.)' / (B - 1)
///   Sigma = (B + 1) / (B M) MSB - MSW / M, floored to PSD.
BootMiResult pool_boot_mi(const Mat& theta, int B, int M, DfRule df_rule = DfRule::b_minus_1);

/// Subject bootstrap (draw b uses make_rng(seed, b, 6)) with resampled subjects renumbered
/// 0..n-1, FPCA re-estimated on each resample, M imputations each fit with
/// fit_alternating. A failing inner fit drops the whole bootstrap replicate; more than
/// max_drop of them dropped is a numerical error. `deltas` selects streams as in fit_dataset.
BootMiResult boot_mi(std::span<const SubjectData> subjects, const PiAtEvent& pi_event, const ModelConfig& cfg,
                     const BootMiOptions& opt, std::uint64_t seed, std::span<const double> deltas = {});

/// Pointwise beta(t) with intervals est +- q sqrt(phi Sigma phi'), q the 97.5% point of
/// t(df) (normal when df is infinite).
BetaCurve boot_mi_beta_curve(const BootMiResult& r, std::size_t stream, std::span<const double> t_grid);

/// Quantile of Student's t (p in (0, 1)); df = inf gives the normal quantile.
double student_t_quantile(double p, double df);

std::string boot_mi_json(const BootMiResult& r);

}  // namespace subhaz
