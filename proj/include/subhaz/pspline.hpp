// Penalized B-spline smoothers (second-order difference penalties, GCV).
#pragma once

#include "subhaz/common.hpp"

#include <span>
#include <string>
#include <vector>

namespace subhaz {

/// Cubic B-splines with uniform knots on [lo, hi]. A single-function basis
/// (n_basis == 1) is the constant function.
class BSplineBasis {
 public:
  BSplineBasis() = default;
  BSplineBasis(double lo, double hi, int n_basis, int degree = 3);

  int size() const { return n_basis_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  int degree() const { return degree_; }

  Vec eval(double x) const;
  Mat design(std::span<const double> x) const;
  /// D'D for the difference operator of the given order (zero matrix if too few bases).
  Mat penalty(int order = 2) const;

 private:
  double lo_ = 0.0, hi_ = 1.0;
  int n_basis_ = 1;
  int degree_ = 3;
  std::vector<double> knots_;
};

/// Default log10 grid for GCV smoothing-parameter search.
std::vector<double> default_lambda_grid();

/// Symmetric sandwich smoother S Y S with S = B (B'B + lambda P)^-1 B' on a shared grid.
struct MatrixSmoothResult {
  Mat smoothed;
  double lambda = 0.0;
  double gcv = 0.0;
};
MatrixSmoothResult sandwich_smooth(const Mat& y, std::span<const double> grid, int n_basis,
                                   std::span<const double> lambdas);

/// Tensor-product penalized B-spline surface f(t, s) = b_t(t)' C b_s(s).
class TensorSurface {
 public:
  TensorSurface() = default;
  TensorSurface(BSplineBasis bt, BSplineBasis bs, Mat coef)
      : bt_(std::move(bt)), bs_(std::move(bs)), coef_(std::move(coef)) {}

  double operator()(double t, double s) const;
  const BSplineBasis& t_basis() const { return bt_; }
  const BSplineBasis& s_basis() const { return bs_; }
  const Mat& coef() const { return coef_; }

 private:
  BSplineBasis bt_, bs_;
  Mat coef_;
};

/// Accumulates sufficient statistics for a tensor-product fit on data observed at
/// (t_i, s_r) for a shared s-grid, then selects (lambda_t, lambda_s) by GCV.
class TensorSmoother {
 public:
  TensorSmoother(BSplineBasis bt, BSplineBasis bs, std::span<const double> s_grid);

  /// One row of observations at time t; mask[r] == 0 drops s_grid[r].
  void add(double t, std::span<const double> y, std::span<const std::uint8_t> mask);

  struct Result {
    TensorSurface surface;
    double lambda_t = 0, lambda_s = 0, gcv = 0, edf = 0;
    bool well_posed = true;
  };
  Result fit(std::span<const double> lambdas) const;
  double n_obs() const { return n_; }

 private:
  BSplineBasis bt_, bs_;
  Mat bs_grid_;  // n_s x k_s
  Mat gram_s_full_;
  Mat gram_;
  Vec rhs_;
  double yy_ = 0, n_ = 0;
};

}  // namespace subhaz
