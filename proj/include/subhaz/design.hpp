// Spline basis for beta, cross matrices J and M_t, and the logistic design matrix.
//
// With X(t, s) = mu(t, s) + sum_k c_k(t) psi_k(s) and beta(s) = sum_j b_j phi_j(s),
//   int X(t, s) beta(s) ds = (M_t + J' c(t))' b,
// where J_kl = int psi_k phi_l and M_t,l = int mu(t, s) phi_l(s) ds.
#pragma once

#include "subhaz/common.hpp"
#include "subhaz/fpca.hpp"
#include "subhaz/gp_sim.hpp"
#include "subhaz/subsample.hpp"

#include <span>
#include <string>
#include <vector>

namespace subhaz {

/// Truncated-power basis 1, u, u^2, (u - kappa_j)^3_+ in u = s / delta, with K_b - 3
/// equally spaced interior knots. Coefficients 3..K_b-1 are penalized.
struct SplineBasis {
  int k_b = 0;
  double delta = 0.5;
  std::vector<double> knots;  // in s units

  Vec eval(double s) const;
  Mat on_grid(std::span<const double> s) const;
  std::vector<int> penalized() const;
};

/// K_b >= 4. When k_x > 0 is given, K_b > k_x is an identifiability error.
SplineBasis build_basis(int k_b, double delta, int k_x = 0);

/// Diagonal selector of the penalized entries inside a parameter vector of length p,
/// where the basis block starts at column `offset`.
Mat penalty_selector(const SplineBasis& basis, int p, int offset);

struct CrossMatrix {
  Mat j;    // K_x x K_b
  Mat phi;  // m x K_b, basis on the s-grid
  Vec w;    // quadrature weights

  /// M_t = int mu(t, s) phi(s) ds.
  Vec m_t(const MeanSurface& mean, double t, std::span<const double> s_grid) const;
};

CrossMatrix cross_matrix(const EigenSystem& es, const SplineBasis& basis);

/// History features g_t(H^N).
enum class Feature { intercept, time, count, since_last };
Feature parse_feature(const std::string& name);
std::string feature_name(Feature f);

/// One covariate stream's functional model.
struct StreamModel {
  std::size_t stream = 0;
  WindowGrid grid;
  SplineBasis basis;
  /// Indexed by label (0 = sampled, 1 = event). In pooled mode both entries coincide.
  LabelFpca fpca[2];
  CrossMatrix cross[2];
  bool zero_pad = false;
};

/// Per-subject inputs.
struct SubjectData {
  SensorPath path;
  EventSet events;
  SampleSet samples;
};

/// Rows of the logistic regression: response y, covariates w, and log pi.
struct Design {
  Mat w;
  Vec y;
  Vec log_pi;
  std::vector<int> subject;
  std::vector<double> t;
  std::vector<std::string> names;
  /// Penalty group per column: -1 unpenalized, otherwise the stream index.
  std::vector<int> pen_group;
  /// Column where each stream's basis block starts (empty for designs read from CSV).
  std::vector<int> block_offset;
  std::vector<SplineBasis> bases;

  Eigen::Index rows() const { return w.rows(); }
  Eigen::Index cols() const { return w.cols(); }
  int n_subjects() const;
  void validate() const;
};

/// pi at an event time for the given design. Proportional designs need the pilot hazard.
using PiAtEvent = std::function<double(int subject, double t)>;

struct DesignOptions {
  std::vector<Feature> features{Feature::intercept};
  /// Bound on |w_j|; larger entries are rejected.
  double max_abs_w = 1e6;
};

/// One row per event (y = 1) and per sampled time (y = 0), ordered by (subject, t).
/// `pi_event` supplies log pi at event anchors; sampled anchors carry their stored pi.
Design build_design(std::span<const SubjectData> subjects, std::span<const StreamModel> streams,
                    const PiAtEvent& pi_event, const DesignOptions& opt = {});

/// Windows for every anchor of a subject (events and samples) for one stream.
std::vector<WindowedHistory> subject_windows(const SubjectData& subject, const StreamModel& sm);
std::vector<WindowedHistory> subject_windows(const SubjectData& subject, std::size_t stream,
                                             const WindowGrid& grid, bool zero_pad);

/// Design CSV: subject_id,t,y,log_pi,<column names>. Basis columns are named
/// s<stream>_b<j>; penalty groups are recovered from those names on reading.
void write_design_csv(const Design& d, const std::string& path);
Design read_design_csv(const std::string& path);

}  // namespace subhaz
