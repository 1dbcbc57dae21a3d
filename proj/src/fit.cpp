#include "subhaz/fit.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace subhaz {

namespace {

Vec linear_predictor(const Design& d, const Vec& theta) { return d.w * theta - d.log_pi; }

// Objective, gradient and negative Hessian of a concave criterion.
struct Local {
  double obj = 0.0;
  Vec grad;
  Mat neg_hess;
  double max_abs_eta = 0.0;
};
using LocalFn = std::function<Local(const Vec&, bool with_hessian)>;

IrlsResult newton_ascent(const LocalFn& f, const Vec& start, const IrlsOptions& opt, const char* what,
                         const std::function<void()>& on_separation = {}) {
  IrlsResult res;
  res.theta = start;
  Local cur = f(res.theta, true);
  double prev_eta = cur.max_abs_eta;
  for (int it = 0; it < opt.max_iter; ++it) {
    res.grad_norm = cur.grad.cwiseAbs().maxCoeff();
    if (res.grad_norm < opt.grad_tol) {
      res.converged = true;
      break;
    }
    Mat h = cur.neg_hess;
    Eigen::LDLT<Mat> ldlt(h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      h.diagonal().array() += 1e-10 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
      ldlt.compute(h);
    }
    const Vec delta = ldlt.solve(cur.grad);
    if (!delta.allFinite()) fail_numerical(std::string(what) + ": Newton direction is not finite");
    double step = 1.0;
    bool accepted = false;
    Local next;
    Vec cand;
    for (int k = 0; k <= opt.max_halvings; ++k) {
      cand = res.theta + step * delta;
      next = f(cand, false);
      if (std::isfinite(next.obj) && next.obj >= cur.obj - 1e-12 * std::abs(cur.obj)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    const double rel = (step * delta).cwiseAbs().maxCoeff() / (1.0 + res.theta.cwiseAbs().maxCoeff());
    if (!accepted) {
      if (rel < 1e-8) {
        res.converged = true;
        break;
      }
      fail_numerical(std::string(what) + ": step halving failed to increase the objective (gradient norm " +
                     std::to_string(res.grad_norm) + ")");
    }
    res.theta = cand;
    res.iterations = it + 1;
    cur = f(res.theta, true);
    res.trace.push_back(cur.obj);
    if (cur.max_abs_eta > 30.0 && cur.max_abs_eta > prev_eta && !res.separation) {
      res.separation = true;
      res.warnings.push_back(std::string(what) +
                             ": linear predictor diverging (possible separation); applying a ridge floor");
    }
    if (res.separation && on_separation && cur.max_abs_eta > prev_eta) {
      on_separation();
      cur = f(res.theta, true);
    }
    prev_eta = cur.max_abs_eta;
    if (rel < opt.step_tol) {
      res.grad_norm = cur.grad.cwiseAbs().maxCoeff();
      res.converged = true;
      break;
    }
  }
  if (!res.converged) {
    res.grad_norm = cur.grad.cwiseAbs().maxCoeff();
    const std::string msg = std::string(what) + ": no convergence after " + std::to_string(opt.max_iter) +
                            " iterations (gradient norm " + std::to_string(res.grad_norm) + ")";
    if (!res.separation) fail_numerical(msg);
    res.warnings.push_back(msg);
  }
  return res;
}

}  // namespace

Vec approx_score(const Design& d, const Vec& theta) {
  const Vec lin = d.w * theta;
  Vec coef(d.rows());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    // Ratios computed in log space: pi/(pi+h) = 1/(1+h/pi).
    const double log_ratio = lin[i] - d.log_pi[i];
    const double w = 1.0 / (1.0 + std::exp(log_ratio));
    coef[i] = d.y[i] > 0.5 ? w : -(1.0 - w);
  }
  return d.w.transpose() * coef;
}

Vec logistic_score(const Design& d, const Vec& theta) {
  const Vec eta = linear_predictor(d, theta);
  Vec r(d.rows());
  for (Eigen::Index i = 0; i < d.rows(); ++i) r[i] = d.y[i] - expit(eta[i]);
  return d.w.transpose() * r;
}

double logistic_loglik(const Design& d, const Vec& theta) {
  const Vec eta = linear_predictor(d, theta);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) acc += d.y[i] * eta[i] - log1pexp(eta[i]);
  return acc;
}

int penalty_groups(const Design& d) {
  int g = 0;
  for (int v : d.pen_group) g = std::max(g, v + 1);
  return g;
}

Vec penalty_diag(const Design& d, std::span<const double> sigma2) {
  Vec out = Vec::Zero(d.cols());
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    const int g = d.pen_group[static_cast<std::size_t>(j)];
    if (g < 0) continue;
    if (static_cast<std::size_t>(g) >= sigma2.size()) fail_validation("missing sigma2 for a penalty group");
    const double s2 = sigma2[static_cast<std::size_t>(g)];
    out[j] = std::isinf(s2) ? 0.0 : 1.0 / s2;
  }
  return out;
}

double penalized_loglik(const Design& d, const Vec& theta, std::span<const double> sigma2) {
  const Vec pd = penalty_diag(d, sigma2);
  return logistic_loglik(d, theta) - 0.5 * theta.dot(pd.cwiseProduct(theta));
}

Vec penalized_score(const Design& d, const Vec& theta, std::span<const double> sigma2) {
  return logistic_score(d, theta) - penalty_diag(d, sigma2).cwiseProduct(theta);
}

Mat logistic_hessian(const Design& d, const Vec& theta) {
  const Vec eta = linear_predictor(d, theta);
  Mat sw(d.rows(), d.cols());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const double p = expit(eta[i]);
    sw.row(i) = std::sqrt(p * (1.0 - p)) * d.w.row(i);
  }
  Mat h = Mat::Zero(d.cols(), d.cols());
  h.selfadjointView<Eigen::Lower>().rankUpdate(sw.transpose());
  return h.selfadjointView<Eigen::Lower>();
}

Mat fisher_info(const Design& d, const Vec& theta) {
  const int n = d.n_subjects();
  if (n == 0) fail_validation("Fisher information needs at least one subject");
  return logistic_hessian(d, theta) / static_cast<double>(n);
}

IrlsResult irls_fit(const Design& d, std::span<const double> sigma2, const Vec& start, const IrlsOptions& opt) {
  d.validate();
  if (start.size() != d.cols()) fail_validation("starting value has the wrong length");
  Vec pd = penalty_diag(d, sigma2);
  const LocalFn f = [&](const Vec& theta, bool with_h) {
    Local l;
    const Vec eta = linear_predictor(d, theta);
    Vec r(d.rows());
    double ll = 0.0;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      ll += d.y[i] * eta[i] - log1pexp(eta[i]);
      r[i] = d.y[i] - expit(eta[i]);
    }
    l.obj = ll - 0.5 * theta.dot(pd.cwiseProduct(theta));
    l.max_abs_eta = eta.size() ? eta.cwiseAbs().maxCoeff() : 0.0;
    if (with_h) {
      l.grad = d.w.transpose() * r - pd.cwiseProduct(theta);
      l.neg_hess = logistic_hessian(d, theta);
      l.neg_hess.diagonal() += pd;
    }
    return l;
  };
  const auto floor = [&] {
    for (Eigen::Index j = 0; j < pd.size(); ++j) pd[j] = std::max(pd[j], 1e-8);
  };
  return newton_ascent(f, start, opt, "penalized IRLS", floor);
}

double update_sigma2(const Vec& theta, std::span<const int> penalized_idx) {
  if (penalized_idx.empty()) fail_validation("no penalized coefficients");
  double acc = 0.0;
  for (int j : penalized_idx) acc += theta[j] * theta[j];
  return std::max(1e-10, acc / static_cast<double>(penalized_idx.size()));
}

Mat FitResult::sigma_bb(std::size_t stream) const {
  const int off = block_offset.at(stream);
  const int k = bases.at(stream).k_b;
  return cov_theta.block(off, off, k, k);
}

Vec FitResult::b(std::size_t stream) const {
  return theta.segment(block_offset.at(stream), bases.at(stream).k_b);
}

FitResult fit_alternating(const Design& d, const FitOptions& opt) {
  d.validate();
  const double n_events = d.y.sum();
  if (n_events < 0.5) fail_validation("design has no event rows; cannot fit the hazard");
  if (n_events > static_cast<double>(d.rows()) - 0.5) fail_validation("design has no sampled non-event rows");
  const int groups = penalty_groups(d);
  std::vector<std::vector<int>> idx(static_cast<std::size_t>(groups));
  for (Eigen::Index j = 0; j < d.cols(); ++j)
    if (d.pen_group[static_cast<std::size_t>(j)] >= 0) idx[static_cast<std::size_t>(d.pen_group[static_cast<std::size_t>(j)])].push_back(static_cast<int>(j));

  const bool fixed = !opt.fixed_sigma2.empty();
  if (fixed && static_cast<int>(opt.fixed_sigma2.size()) != groups)
    fail_validation("fixed sigma2 needs one value per penalty group");
  std::vector<double> s2 = fixed ? opt.fixed_sigma2 : std::vector<double>(static_cast<std::size_t>(groups), opt.sigma2_init);

  FitResult out;
  Vec theta = Vec::Zero(d.cols());
  IrlsResult r = irls_fit(d, s2, theta, opt.irls);
  theta = r.theta;
  out.irls_iterations += r.iterations;
  out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
  bool sigma_converged = fixed || groups == 0;
  for (int outer = 0; !sigma_converged && outer < opt.max_outer; ++outer) {
    double rel = 0.0;
    for (int g = 0; g < groups; ++g) {
      const double next = update_sigma2(theta, idx[static_cast<std::size_t>(g)]);
      rel = std::max(rel, std::abs(next - s2[static_cast<std::size_t>(g)]) / s2[static_cast<std::size_t>(g)]);
      s2[static_cast<std::size_t>(g)] = next;
    }
    r = irls_fit(d, s2, theta, opt.irls);
    theta = r.theta;
    out.irls_iterations += r.iterations;
    out.outer_iterations = outer + 1;
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
    if (rel < opt.sigma2_tol) sigma_converged = true;
  }
  if (!sigma_converged)
    out.warnings.push_back("sigma2 alternation stopped after " + std::to_string(opt.max_outer) +
                           " outer iterations without reaching tolerance");

  out.theta = theta;
  out.sigma2 = s2;
  out.n_subjects = d.n_subjects();
  out.fisher = fisher_info(d, theta);
  Mat info = out.fisher * static_cast<double>(out.n_subjects);
  info.diagonal() += penalty_diag(d, s2);
  Eigen::LDLT<Mat> ldlt(info);
  if (ldlt.info() != Eigen::Success) fail_numerical("penalized information is singular");
  out.cov_theta = ldlt.solve(Mat::Identity(d.cols(), d.cols()));
  out.cov_theta = 0.5 * (out.cov_theta + out.cov_theta.transpose()).eval();
  out.names = d.names;
  out.pen_group = d.pen_group;
  out.block_offset = d.block_offset;
  out.bases = d.bases;
  out.grad_norm = r.grad_norm;
  out.converged = r.converged && sigma_converged;
  return out;
}

BetaCurve beta_curve(const SplineBasis& basis, const Vec& b, const Mat& sigma_bb, std::span<const double> t_grid) {
  BetaCurve c;
  for (double t : t_grid) {
    const Vec phi = basis.eval(t);
    const double est = phi.dot(b);
    const double var = std::max(0.0, phi.dot(sigma_bb * phi));
    const double half = 1.96 * std::sqrt(var);
    c.t.push_back(t);
    c.est.push_back(est);
    c.lo.push_back(est - half);
    c.hi.push_back(est + half);
    c.significant.push_back((est - half > 0.0 || est + half < 0.0) ? 1 : 0);
  }
  return c;
}

BetaCurve beta_curve(const FitResult& fit, std::size_t stream, std::span<const double> t_grid) {
  return beta_curve(fit.bases.at(stream), fit.b(stream), fit.sigma_bb(stream), t_grid);
}

IrlsResult fit_estimating_equation(const Design& d, Weighting weighting, const Vec& start, const IrlsOptions& opt) {
  d.validate();
  if (weighting == Weighting::wp) {
    const std::vector<double> none(static_cast<std::size_t>(penalty_groups(d)), INFINITY);
    return irls_fit(d, none, start, opt);
  }
  // Concave criterion sum_events w'theta - sum_samples exp(w'theta - log pi).
  const LocalFn f = [&](const Vec& theta, bool with_h) {
    Local l;
    const Vec eta = linear_predictor(d, theta);
    Vec r(d.rows());
    Mat sw(d.rows(), d.cols());
    double obj = 0.0;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      if (d.y[i] > 0.5) {
        obj += eta[i] + d.log_pi[i];
        r[i] = 1.0;
        sw.row(i).setZero();
      } else {
        const double e = std::exp(eta[i]);
        obj -= e;
        r[i] = -e;
        if (with_h) sw.row(i) = std::sqrt(e) * d.w.row(i);
      }
    }
    l.obj = obj;
    l.max_abs_eta = 0.0;
    if (with_h) {
      l.grad = d.w.transpose() * r;
      Mat h = Mat::Zero(d.cols(), d.cols());
      h.selfadjointView<Eigen::Lower>().rankUpdate(sw.transpose());
      l.neg_hess = h.selfadjointView<Eigen::Lower>();
    }
    return l;
  };
  return newton_ascent(f, start, opt, "Horvitz-Thompson estimating equation");
}

}  // namespace subhaz
