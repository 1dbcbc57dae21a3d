#include "subhaz/pspline.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>

namespace subhaz {

namespace {

Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

}  // namespace

BSplineBasis::BSplineBasis(double lo, double hi, int n_basis, int degree)
    : lo_(lo), hi_(hi), n_basis_(n_basis), degree_(std::min(degree, n_basis - 1)) {
  if (n_basis < 1) fail_validation("B-spline basis needs at least one function");
  if (!(hi > lo)) fail_validation("B-spline range must be nonempty");
  if (n_basis_ == 1) return;
  const int intervals = n_basis_ - degree_;
  const double h = (hi_ - lo_) / intervals;
  knots_.resize(static_cast<std::size_t>(n_basis_ + degree_ + 1));
  for (std::size_t i = 0; i < knots_.size(); ++i)
    knots_[i] = lo_ + (static_cast<double>(i) - degree_) * h;
}

Vec BSplineBasis::eval(double x) const {
  Vec out = Vec::Zero(n_basis_);
  if (n_basis_ == 1) {
    out[0] = 1.0;
    return out;
  }
  x = std::clamp(x, lo_, hi_);
  const int intervals = n_basis_ - degree_;
  const double h = (hi_ - lo_) / intervals;
  int span = degree_ + std::min(intervals - 1, static_cast<int>(std::floor((x - lo_) / h)));
  // Cox-de Boor triangular evaluation of the degree_+1 nonzero functions.
  std::vector<double> n(static_cast<std::size_t>(degree_ + 1), 0.0), left(n.size()), right(n.size());
  n[0] = 1.0;
  for (int j = 1; j <= degree_; ++j) {
    left[static_cast<std::size_t>(j)] = x - knots_[static_cast<std::size_t>(span + 1 - j)];
    right[static_cast<std::size_t>(j)] = knots_[static_cast<std::size_t>(span + j)] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
      const double temp = n[static_cast<std::size_t>(r)] / denom;
      n[static_cast<std::size_t>(r)] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
      saved = left[static_cast<std::size_t>(j - r)] * temp;
    }
    n[static_cast<std::size_t>(j)] = saved;
  }
  for (int r = 0; r <= degree_; ++r) out[span - degree_ + r] = n[static_cast<std::size_t>(r)];
  return out;
}

Mat BSplineBasis::design(std::span<const double> x) const {
  Mat b(static_cast<Eigen::Index>(x.size()), n_basis_);
  for (std::size_t i = 0; i < x.size(); ++i) b.row(static_cast<Eigen::Index>(i)) = eval(x[i]).transpose();
  return b;
}

Mat BSplineBasis::penalty(int order) const {
  const int n = n_basis_;
  if (n <= order) return Mat::Zero(n, n);
  Mat d = Mat::Identity(n, n);
  for (int o = 0; o < order; ++o) {
    Mat next(d.rows() - 1, n);
    for (Eigen::Index r = 0; r + 1 < d.rows(); ++r) next.row(r) = d.row(r + 1) - d.row(r);
    d = next;
  }
  return d.transpose() * d;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> out;
  for (int e = -8; e <= 6; ++e) out.push_back(std::pow(10.0, e));
  return out;
}

MatrixSmoothResult sandwich_smooth(const Mat& y, std::span<const double> grid, int n_basis,
                                   std::span<const double> lambdas) {
  const auto m = static_cast<double>(y.rows());
  BSplineBasis basis(grid.front(), grid.back(), n_basis);
  const Mat b = basis.design(grid);
  const Mat btb = b.transpose() * b;
  const Mat pen = basis.penalty(2);
  MatrixSmoothResult best;
  best.gcv = std::numeric_limits<double>::infinity();
  for (double lam : lambdas) {
    const Mat a = btb + lam * pen;
    const Mat s = b * a.ldlt().solve(b.transpose());
    const Mat fitted = s * y * s;
    const double tr = s.trace();
    const double denom = 1.0 - tr * tr / (m * m);
    double gcv;
    if (lam == 0.0 || denom <= 1e-12) {
      gcv = std::numeric_limits<double>::infinity();
    } else {
      gcv = (y - fitted).squaredNorm() / (m * m) / (denom * denom);
    }
    if (lambdas.size() == 1 || gcv < best.gcv) {
      best.smoothed = 0.5 * (fitted + fitted.transpose());
      best.lambda = lam;
      best.gcv = gcv;
    }
  }
  return best;
}

double TensorSurface::operator()(double t, double s) const {
  return bt_.eval(t).dot(coef_ * bs_.eval(s));
}

TensorSmoother::TensorSmoother(BSplineBasis bt, BSplineBasis bs, std::span<const double> s_grid)
    : bt_(std::move(bt)), bs_(std::move(bs)) {
  bs_grid_ = bs_.design(s_grid);
  gram_s_full_ = bs_grid_.transpose() * bs_grid_;
  const int k = bt_.size() * bs_.size();
  gram_ = Mat::Zero(k, k);
  rhs_ = Vec::Zero(k);
}

void TensorSmoother::add(double t, std::span<const double> y, std::span<const std::uint8_t> mask) {
  const Vec bt = bt_.eval(t);
  const int kt = bt_.size(), ks = bs_.size();
  const bool complete = std::all_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
  Mat gs;
  Vec rs = Vec::Zero(ks);
  if (complete) {
    gs = gram_s_full_;
  } else {
    gs = Mat::Zero(ks, ks);
  }
  for (std::size_t r = 0; r < y.size(); ++r) {
    if (!mask[r]) continue;
    const auto row = bs_grid_.row(static_cast<Eigen::Index>(r));
    if (!complete) gs.noalias() += row.transpose() * row;
    rs += y[r] * row.transpose();
    yy_ += y[r] * y[r];
    n_ += 1.0;
  }
  for (int i = 0; i < kt; ++i) {
    if (bt[i] == 0.0) continue;
    rhs_.segment(i * ks, ks) += bt[i] * rs;
    for (int j = 0; j < kt; ++j) {
      if (bt[j] == 0.0) continue;
      gram_.block(i * ks, j * ks, ks, ks) += (bt[i] * bt[j]) * gs;
    }
  }
}

TensorSmoother::Result TensorSmoother::fit(std::span<const double> lambdas) const {
  const int kt = bt_.size(), ks = bs_.size();
  const Mat pt = kron(bt_.penalty(2), Mat::Identity(ks, ks));
  const Mat ps = kron(Mat::Identity(kt, kt), bs_.penalty(2));
  Result best;
  best.gcv = std::numeric_limits<double>::infinity();
  bool found = false;
  for (double lt : lambdas) {
    for (double ls : lambdas) {
      const Mat a = gram_ + lt * pt + ls * ps;
      Eigen::LDLT<Mat> ldlt(a);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13) continue;
      const Vec c = ldlt.solve(rhs_);
      const double edf = ldlt.solve(gram_).trace();
      const double rss = std::max(0.0, yy_ - 2.0 * c.dot(rhs_) + c.dot(gram_ * c));
      const double denom = n_ - edf;
      const double gcv = denom > 1e-9 ? n_ * rss / (denom * denom) : std::numeric_limits<double>::infinity();
      if (!found || gcv < best.gcv) {
        found = true;
        Mat coef(kt, ks);
        for (int i = 0; i < kt; ++i) coef.row(i) = c.segment(i * ks, ks).transpose();
        best.surface = TensorSurface(bt_, bs_, coef);
        best.lambda_t = lt;
        best.lambda_s = ls;
        best.gcv = gcv;
        best.edf = edf;
      }
    }
  }
  best.well_posed = found;
  return best;
}

}  // namespace subhaz
