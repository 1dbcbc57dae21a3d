// Windowed covariate histories and their marginal-covariance FPCA.
//
// Each anchor t (an event or a sampled non-event time) carries the window
// X(t, s) = x(t - s) for s on a regular grid over [0, delta]. Mean, covariance and
// eigensystem are estimated separately for each label (y = 1 events, y = 0 samples).
#pragma once

#include "subhaz/common.hpp"
#include "subhaz/gp_sim.hpp"
#include "subhaz/pspline.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace subhaz {

/// s-grid on [0, delta] with trapezoid weights.
struct WindowGrid {
  double delta = 0.5;
  std::vector<double> s;
  Vec w;

  std::size_t size() const { return s.size(); }
};
WindowGrid make_window_grid(double delta, int m = 64);

struct Anchor {
  double t = 0.0;
  int label = 0;
};

struct WindowedHistory {
  int subject_id = 0;
  double anchor_t = 0.0;
  int label = 0;
  Vec values;
  std::vector<std::uint8_t> mask;

  bool complete() const;
};

/// Reads x(t - s) by linear interpolation of the sensor grid (exact on grid-aligned
/// points). Entries touching masked sensor values are masked.
std::vector<WindowedHistory> extract_windows(const SensorPath& path, std::span<const Anchor> anchors,
                                             const WindowGrid& grid, std::size_t stream = 0,
                                             bool zero_pad = false);

/// mu_y(t, s): identically zero (known mean), a constant, or a tensor P-spline surface.
class MeanSurface {
 public:
  enum class Kind { zero, constant, tensor };

  MeanSurface() = default;
  static MeanSurface zero() { return {}; }
  static MeanSurface constant(double c);
  static MeanSurface tensor(TensorSurface s);

  Kind kind() const { return kind_; }
  double operator()(double t, double s) const;
  Vec on_grid(double t, std::span<const double> s_grid) const;
  const TensorSurface& surface() const { return surface_; }
  double constant_value() const { return c_; }

 private:
  Kind kind_ = Kind::zero;
  double c_ = 0.0;
  TensorSurface surface_;
};

struct MeanOptions {
  int k_t = 8;
  int k_s = 12;
  std::vector<double> lambdas = default_lambda_grid();
};

struct MeanFit {
  MeanSurface mean;
  int k_t_used = 0;
  double lambda_t = 0, lambda_s = 0;
  std::vector<std::string> warnings;
};

/// Tensor-product penalized fit to all windows with the given label. Rank
/// deficiency drops to a coarser t-basis (halving k_t down to a constant in t).
MeanFit estimate_mean(std::span<const WindowedHistory> windows, int label, const WindowGrid& grid,
                      const MeanOptions& opt = {});

struct MarginalCov {
  std::vector<double> s;
  Mat matrix;
  int label = 0;
  std::size_t n_windows = 0;
};

/// Pooled second moment of centered windows with the given label. Pairs where either
/// point is masked are skipped; each entry is divided by its own pair count.
/// Accumulation runs in (subject_id, anchor_t) order regardless of input order.
MarginalCov pooled_cov(std::span<const WindowedHistory> windows, int label, const MeanSurface& mean,
                       const WindowGrid& grid);

/// Matern covariance on the s-grid (the known-covariance mode used in simulations).
MarginalCov matern_marginal(const WindowGrid& grid, const MaternParams& p, int label = 0);

struct SmoothOptions {
  /// Empty: GCV over default_lambda_grid(). A single entry fixes the penalty.
  std::vector<double> lambdas;
};

/// Sandwich-smooths the whole matrix, then clips negative eigenvalues to zero.
MarginalCov smooth_and_project(const MarginalCov& cov, const SmoothOptions& opt = {},
                               double* lambda_used = nullptr);

struct EigenSystem {
  std::vector<double> s;
  Vec w;
  Mat psi;  // m x K_x, orthonormal in the weighted inner product
  Vec lambda;

  int k_x() const { return static_cast<int>(psi.cols()); }
};

/// Top-k_x eigenpairs of the integral operator with kernel cov on the weighted grid.
/// Eigenvalues below 1e-10 of the largest are set to zero.
EigenSystem eigensystem(const MarginalCov& cov, const Vec& quad_w, int k_x);

/// c_k = int (X(t, s) - mu(t, s)) psi_k(s) ds. Refuses windows with masked points.
Vec scores(const WindowedHistory& window, const EigenSystem& es, const MeanSurface& mean);

/// Mean, covariance and eigensystem for one label.
struct LabelFpca {
  MeanSurface mean;
  MarginalCov cov;
  EigenSystem es;
  /// Mean excess of the raw pooled diagonal over the smoothed one (0 for a known covariance).
  double nugget = 0.0;
};

struct FpcaOptions {
  int k_x = 35;
  bool known_mean_zero = false;
  /// Known covariance replaces the pooled estimate when set.
  std::optional<MaternParams> known_cov;
  MeanOptions mean;
  SmoothOptions smooth;
};

LabelFpca fit_label_fpca(std::span<const WindowedHistory> windows, int label, const WindowGrid& grid,
                         const FpcaOptions& opt, std::vector<std::string>* warnings = nullptr);

}  // namespace subhaz
