#include "subhaz/fpca.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace subhaz {

WindowGrid make_window_grid(double delta, int m) {
  if (!(delta > 0)) fail_validation("window length delta must be positive");
  if (m < 2) fail_validation("window grid needs at least 2 points");
  WindowGrid g;
  g.delta = delta;
  g.s = linspace(0.0, delta, static_cast<std::size_t>(m));
  g.w = trapezoid_weights(g.s);
  return g;
}

bool WindowedHistory::complete() const {
  return std::all_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
}

std::vector<WindowedHistory> extract_windows(const SensorPath& path, std::span<const Anchor> anchors,
                                             const WindowGrid& grid, std::size_t stream,
                                             bool zero_pad) {
  if (stream >= path.streams()) fail_validation("stream index out of range");
  std::vector<WindowedHistory> out;
  out.reserve(anchors.size());
  const auto m = static_cast<Eigen::Index>(grid.size());
  for (const Anchor& a : anchors) {
    if (a.t > path.t1() + 1e-9 * path.dt() || (!zero_pad && a.t - grid.delta < path.t0() - 1e-9 * path.dt()))
      fail_validation("anchor " + std::to_string(a.t) + " outside sensor path support");
    WindowedHistory w;
    w.subject_id = path.subject_id;
    w.anchor_t = a.t;
    w.label = a.label;
    w.values.resize(m);
    w.mask.assign(static_cast<std::size_t>(m), 1);
    for (Eigen::Index r = 0; r < m; ++r) {
      const double v = path.value_at(stream, a.t - grid.s[static_cast<std::size_t>(r)], zero_pad);
      if (std::isnan(v)) {
        w.values[r] = 0.0;
        w.mask[static_cast<std::size_t>(r)] = 0;
      } else {
        w.values[r] = v;
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

MeanSurface MeanSurface::constant(double c) {
  MeanSurface m;
  m.kind_ = Kind::constant;
  m.c_ = c;
  return m;
}

MeanSurface MeanSurface::tensor(TensorSurface s) {
  MeanSurface m;
  m.kind_ = Kind::tensor;
  m.surface_ = std::move(s);
  return m;
}

double MeanSurface::operator()(double t, double s) const {
  switch (kind_) {
    case Kind::zero:
      return 0.0;
    case Kind::constant:
      return c_;
    case Kind::tensor:
      return surface_(t, s);
  }
  return 0.0;
}

Vec MeanSurface::on_grid(double t, std::span<const double> s_grid) const {
  const auto m = static_cast<Eigen::Index>(s_grid.size());
  if (kind_ == Kind::zero) return Vec::Zero(m);
  if (kind_ == Kind::constant) return Vec::Constant(m, c_);
  const Vec bt = surface_.t_basis().eval(t);
  const Vec row = surface_.coef().transpose() * bt;
  Vec out(m);
  for (Eigen::Index r = 0; r < m; ++r) out[r] = surface_.s_basis().eval(s_grid[static_cast<std::size_t>(r)]).dot(row);
  return out;
}

MeanFit estimate_mean(std::span<const WindowedHistory> windows, int label, const WindowGrid& grid,
                      const MeanOptions& opt) {
  std::vector<const WindowedHistory*> use;
  double t_lo = INFINITY, t_hi = -INFINITY;
  for (const auto& w : windows) {
    if (w.label != label) continue;
    use.push_back(&w);
    t_lo = std::min(t_lo, w.anchor_t);
    t_hi = std::max(t_hi, w.anchor_t);
  }
  if (use.size() < 2) fail_validation("mean estimation needs at least 2 windows of the label");
  MeanFit out;
  if (!(t_hi > t_lo)) t_hi = t_lo + 1.0;
  const BSplineBasis bs(0.0, grid.delta, std::min<int>(opt.k_s, static_cast<int>(grid.size())));
  std::vector<int> levels;
  for (int kt = opt.k_t; kt >= 4; kt /= 2) levels.push_back(kt);
  levels.push_back(1);
  for (int kt : levels) {
    TensorSmoother sm(BSplineBasis(t_lo, t_hi, kt), bs, grid.s);
    for (const auto* w : use)
      sm.add(w->anchor_t, std::span<const double>(w->values.data(), static_cast<std::size_t>(w->values.size())),
             w->mask);
    auto res = sm.fit(opt.lambdas);
    if (res.well_posed) {
      out.mean = MeanSurface::tensor(res.surface);
      out.k_t_used = kt;
      out.lambda_t = res.lambda_t;
      out.lambda_s = res.lambda_s;
      return out;
    }
    out.warnings.push_back("mean surface rank deficient with k_t = " + std::to_string(kt) +
                           "; retrying with a coarser time basis");
  }
  fail_numerical("mean surface fit is rank deficient even with a constant time basis");
}

MarginalCov pooled_cov(std::span<const WindowedHistory> windows, int label, const MeanSurface& mean,
                       const WindowGrid& grid) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < windows.size(); ++i)
    if (windows[i].label == label) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& wa = windows[a];
    const auto& wb = windows[b];
    if (wa.subject_id != wb.subject_id) return wa.subject_id < wb.subject_id;
    if (wa.anchor_t != wb.anchor_t) return wa.anchor_t < wb.anchor_t;
    return std::lexicographical_compare(wa.values.data(), wa.values.data() + wa.values.size(),
                                        wb.values.data(), wb.values.data() + wb.values.size());
  });
  const auto m = static_cast<Eigen::Index>(grid.size());
  MarginalCov out;
  out.s = grid.s;
  out.label = label;
  out.n_windows = order.size();
  Mat acc = Mat::Zero(m, m);
  Mat cnt = Mat::Zero(m, m);
  for (std::size_t i : order) {
    const auto& w = windows[i];
    const Vec mu = mean.on_grid(w.anchor_t, grid.s);
    Vec xc = w.values - mu;
    Vec obs(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      obs[r] = w.mask[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
      if (!w.mask[static_cast<std::size_t>(r)]) xc[r] = 0.0;
    }
    acc.noalias() += xc * xc.transpose();
    cnt.noalias() += obs * obs.transpose();
  }
  out.matrix = Mat::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (cnt(i, j) > 0) out.matrix(i, j) = acc(i, j) / cnt(i, j);
  return out;
}

MarginalCov matern_marginal(const WindowGrid& grid, const MaternParams& p, int label) {
  p.validate();
  MarginalCov out;
  out.s = grid.s;
  out.label = label;
  out.matrix = matern_matrix(grid.s, grid.s, p);
  return out;
}

MarginalCov smooth_and_project(const MarginalCov& cov, const SmoothOptions& opt, double* lambda_used) {
  const Mat sym = 0.5 * (cov.matrix + cov.matrix.transpose());
  const std::vector<double> lambdas = opt.lambdas.empty() ? default_lambda_grid() : opt.lambdas;
  const auto res = sandwich_smooth(sym, cov.s, static_cast<int>(cov.s.size()), lambdas);
  if (lambda_used) *lambda_used = res.lambda;
  MarginalCov out = cov;
  out.matrix = project_psd(res.smoothed);
  return out;
}

EigenSystem eigensystem(const MarginalCov& cov, const Vec& quad_w, int k_x) {
  const auto m = cov.matrix.rows();
  if (quad_w.size() != m || static_cast<Eigen::Index>(cov.s.size()) != m)
    fail_validation("covariance and quadrature grids differ");
  if (k_x < 1 || k_x > m) fail_validation("K_x = " + std::to_string(k_x) + " exceeds the window grid size");
  const Vec sw = quad_w.array().sqrt();
  Mat a = sw.asDiagonal() * (0.5 * (cov.matrix + cov.matrix.transpose())) * sw.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Mat> solver(a);
  if (solver.info() != Eigen::Success) fail_numerical("covariance eigendecomposition failed");
  EigenSystem es;
  es.s = cov.s;
  es.w = quad_w;
  es.psi.resize(m, k_x);
  es.lambda.resize(k_x);
  const double top = std::max(0.0, solver.eigenvalues()[m - 1]);
  for (int k = 0; k < k_x; ++k) {
    const Eigen::Index src = m - 1 - k;
    double lam = solver.eigenvalues()[src];
    if (lam < 1e-10 * top) lam = 0.0;
    es.lambda[k] = lam;
    Vec v = solver.eigenvectors().col(src);
    // Fix the sign so the largest-magnitude entry is positive.
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0) v = -v;
    es.psi.col(k) = v.cwiseQuotient(sw);
  }
  return es;
}

Vec scores(const WindowedHistory& window, const EigenSystem& es, const MeanSurface& mean) {
  if (!window.complete())
    fail_validation("window at t = " + std::to_string(window.anchor_t) +
                    " has missing values; impute before computing scores");
  if (window.values.size() != es.psi.rows()) fail_validation("window and eigenfunction grids differ");
  const Vec xc = window.values - mean.on_grid(window.anchor_t, es.s);
  return es.psi.transpose() * es.w.cwiseProduct(xc);
}

LabelFpca fit_label_fpca(std::span<const WindowedHistory> windows, int label, const WindowGrid& grid,
                         const FpcaOptions& opt, std::vector<std::string>* warnings) {
  LabelFpca out;
  const int k_x = std::min(opt.k_x, static_cast<int>(grid.size()) - 1);
  if (k_x < 1) fail_validation("K_x must be at least 1");
  if (opt.known_mean_zero) {
    out.mean = MeanSurface::zero();
  } else {
    auto mf = estimate_mean(windows, label, grid, opt.mean);
    if (warnings) warnings->insert(warnings->end(), mf.warnings.begin(), mf.warnings.end());
    out.mean = std::move(mf.mean);
  }
  if (opt.known_cov) {
    out.cov = matern_marginal(grid, *opt.known_cov, label);
  } else {
    const MarginalCov raw = pooled_cov(windows, label, out.mean, grid);
    out.cov = smooth_and_project(raw, opt.smooth);
    if (out.cov.n_windows < 2) fail_validation("covariance estimation needs at least 2 windows of the label");
    out.nugget = std::max(0.0, (raw.matrix.diagonal() - out.cov.matrix.diagonal()).mean());
  }
  out.es = eigensystem(out.cov, grid.w, k_x);
  return out;
}

}  // namespace subhaz
