#include "subhaz/mixed.hpp"

#include "subhaz/io.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace subhaz {

GaussHermite gauss_hermite(int n) {
  if (n < 1) fail_validation("Gauss-Hermite rule needs at least one node");
  Mat jac = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) jac(k, k - 1) = jac(k - 1, k) = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<Mat> es(jac);
  GaussHermite gh;
  gh.nodes = es.eigenvalues();
  gh.weights = std::sqrt(M_PI) * es.eigenvectors().row(0).transpose().array().square();
  // Symmetrize so the rule is exactly even, which keeps n = 1 at the origin.
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double z = 0.5 * (gh.nodes[j] - gh.nodes[i]);
    const double w = 0.5 * (gh.weights[i] + gh.weights[j]);
    gh.nodes[i] = -z;
    gh.nodes[j] = z;
    gh.weights[i] = gh.weights[j] = w;
  }
  if (n % 2 == 1) gh.nodes[n / 2] = 0.0;
  return gh;
}

namespace {

Vec fixed_part(const SubjectRows& s, const Vec& theta) { return s.w * theta - s.log_pi; }

double g_from_eta(const SubjectRows& s, const Vec& eta, const Vec& b, const Mat& psi_inv) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < eta.size(); ++j) acc += s.y[j] * eta[j] - log1pexp(eta[j]);
  return acc - 0.5 * b.dot(psi_inv * b);
}

Mat inverse_spd(const Mat& a, const char* what) {
  Eigen::LDLT<Mat> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0).any())
    fail_numerical(std::string(what) + " is not positive definite");
  return ldlt.solve(Mat::Identity(a.rows(), a.cols()));
}

double log_det_spd(const Mat& a, const char* what) {
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) fail_numerical(std::string(what) + " is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// b_k = b_hat + sqrt(2) R^-1 z_k with R'R = curvature; log_w includes log(2^{q/2} |R|^-1).
QuadNodes nodes_at_mode(const Blup& m, int n_gq) {
  const auto q = m.b.size();
  const GaussHermite gh = gauss_hermite(n_gq);
  Eigen::LLT<Mat> llt(m.curvature);
  if (llt.info() != Eigen::Success) fail_numerical("curvature at the mode is not positive definite");
  const Mat r = llt.matrixU();
  const double log_jac = 0.5 * static_cast<double>(q) * std::log(2.0) - r.diagonal().array().log().sum();
  QuadNodes ns;
  long total = 1;
  for (Eigen::Index l = 0; l < q; ++l) total *= n_gq;
  for (long k = 0; k < total; ++k) {
    Vec z(q);
    double lw = log_jac;
    long rem = k;
    for (Eigen::Index l = 0; l < q; ++l) {
      const int j = static_cast<int>(rem % n_gq);
      rem /= n_gq;
      z[l] = gh.nodes[j];
      lw += std::log(gh.weights[j]) + z[l] * z[l];
    }
    ns.b.push_back(m.b + std::sqrt(2.0) * r.triangularView<Eigen::Upper>().solve(z));
    ns.log_w.push_back(lw);
  }
  return ns;
}

double log_sum_exp(const std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

Mat floor_psi(const Mat& psi, double floor, bool* floored) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (psi + psi.transpose()));
  Vec ev = es.eigenvalues();
  *floored = false;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (!(ev[i] >= floor)) {
      ev[i] = floor;
      *floored = true;
    }
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double g_value(const SubjectRows& s, const Vec& theta, const Vec& b, const Mat& psi_inv) {
  return g_from_eta(s, fixed_part(s, theta) + s.z * b, b, psi_inv);
}

Blup newton_blup(const SubjectRows& s, const Vec& theta, const Mat& psi) {
  const Mat psi_inv = inverse_spd(psi, "random-effect covariance");
  const Vec base = fixed_part(s, theta);
  const auto q = s.z.cols();
  Blup out;
  out.b = Vec::Zero(q);
  Vec eta = base;
  double g = g_from_eta(s, eta, out.b, psi_inv);
  for (int it = 0; it < 100; ++it) {
    Vec r(eta.size());
    Mat sz(s.z.rows(), q);
    for (Eigen::Index j = 0; j < eta.size(); ++j) {
      const double p = expit(eta[j]);
      r[j] = s.y[j] - p;
      sz.row(j) = std::sqrt(p * (1.0 - p)) * s.z.row(j);
    }
    const Vec grad = s.z.transpose() * r - psi_inv * out.b;
    out.curvature = sz.transpose() * sz + psi_inv;
    out.iterations = it;
    if (grad.cwiseAbs().maxCoeff() < 1e-10) return out;
    const Vec step = out.curvature.ldlt().solve(grad);
    double a = 1.0;
    for (int h = 0; h < 30; ++h, a *= 0.5) {
      const Vec cand = out.b + a * step;
      const Vec ceta = base + s.z * cand;
      const double cg = g_from_eta(s, ceta, cand, psi_inv);
      if (cg >= g - 1e-14 * std::abs(g)) {
        out.b = cand;
        eta = ceta;
        g = cg;
        break;
      }
    }
    // Gradient can stall above 1e-10 from rounding when Psi^-1 is large; a negligible
    // Newton step means the mode is found to working precision.
    if (step.cwiseAbs().maxCoeff() <= 1e-13 * (1.0 + out.b.cwiseAbs().maxCoeff())) {
      out.iterations = it + 1;
      return out;
    }
  }
  fail_numerical("random-effect mode search did not converge in 100 iterations (subject " +
                 std::to_string(s.subject) + ")");
}

double agq_marginal_loglik(const SubjectRows& s, const Vec& theta, const Mat& psi, int n_gq) {
  const Blup m = newton_blup(s, theta, psi);
  const Mat psi_inv = inverse_spd(psi, "random-effect covariance");
  const QuadNodes ns = nodes_at_mode(m, n_gq);
  std::vector<double> terms(ns.b.size());
  for (std::size_t k = 0; k < ns.b.size(); ++k) terms[k] = ns.log_w[k] + g_value(s, theta, ns.b[k], psi_inv);
  const double q = static_cast<double>(s.z.cols());
  return log_sum_exp(terms) - 0.5 * q * std::log(2.0 * M_PI) - 0.5 * log_det_spd(psi, "random-effect covariance");
}

double laplace_marginal_loglik(const SubjectRows& s, const Vec& theta, const Mat& psi) {
  const Blup m = newton_blup(s, theta, psi);
  const Mat psi_inv = inverse_spd(psi, "random-effect covariance");
  return g_value(s, theta, m.b, psi_inv) - 0.5 * log_det_spd(m.curvature, "curvature at the mode") -
         0.5 * log_det_spd(psi, "random-effect covariance");
}

RandomEffects parse_random_effects(const std::string& s) {
  if (s == "none") return RandomEffects::none;
  if (s == "intercept") return RandomEffects::intercept;
  if (s == "functional") return RandomEffects::functional;
  fail_validation("unknown random-effects structure '" + s + "' (none, intercept, functional)");
}

std::vector<SubjectRows> subject_rows(const Design& d, RandomEffects re) {
  d.validate();
  std::vector<int> zcols;
  if (re == RandomEffects::functional) {
    for (std::size_t l = 0; l < d.bases.size(); ++l)
      for (int j = 0; j < d.bases[l].k_b; ++j) zcols.push_back(d.block_offset[l] + j);
    if (zcols.empty()) fail_validation("functional random effects need a functional block in the design");
  }
  const Eigen::Index q = re == RandomEffects::intercept ? 1 : static_cast<Eigen::Index>(zcols.size());
  std::map<int, std::vector<Eigen::Index>> groups;
  for (Eigen::Index i = 0; i < d.rows(); ++i) groups[d.subject[static_cast<std::size_t>(i)]].push_back(i);
  std::vector<SubjectRows> out;
  for (const auto& [id, rows] : groups) {
    SubjectRows s;
    s.subject = id;
    const auto n = static_cast<Eigen::Index>(rows.size());
    s.w.resize(n, d.cols());
    s.z.resize(n, q);
    s.y.resize(n);
    s.log_pi.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const Eigen::Index i = rows[static_cast<std::size_t>(k)];
      s.w.row(k) = d.w.row(i);
      s.y[k] = d.y[i];
      s.log_pi[k] = d.log_pi[i];
      if (re == RandomEffects::intercept) s.z(k, 0) = 1.0;
      for (std::size_t c = 0; c < zcols.size(); ++c) s.z(k, static_cast<Eigen::Index>(c)) = d.w(i, zcols[c]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<QuadNodes> agq_nodes(std::span<const SubjectRows> subjects, const Vec& theta, const Mat& psi, int n_gq) {
  std::vector<QuadNodes> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(nodes_at_mode(newton_blup(s, theta, psi), n_gq));
  return out;
}

AgqDerivs agq_derivs(std::span<const SubjectRows> subjects, std::span<const QuadNodes> nodes, const Vec& theta,
                     const Mat& psi) {
  if (nodes.size() != subjects.size()) fail_validation("one node set per subject is required");
  const Mat psi_inv = inverse_spd(psi, "random-effect covariance");
  const double q = subjects.empty() ? 0.0 : static_cast<double>(subjects[0].z.cols());
  const double log_const = -0.5 * q * std::log(2.0 * M_PI) - 0.5 * log_det_spd(psi, "random-effect covariance");
  AgqDerivs out;
  out.score = Vec::Zero(theta.size());
  out.neg_hessian = Mat::Zero(theta.size(), theta.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const SubjectRows& s = subjects[i];
    const QuadNodes& ns = nodes[i];
    const Vec base = fixed_part(s, theta);
    const std::size_t nk = ns.b.size();
    std::vector<double> lt(nk);
    std::vector<Vec> sc(nk);
    std::vector<Mat> info(nk);
    for (std::size_t k = 0; k < nk; ++k) {
      const Vec eta = base + s.z * ns.b[k];
      lt[k] = ns.log_w[k] + g_from_eta(s, eta, ns.b[k], psi_inv);
      Vec r(eta.size());
      Mat sw(s.w.rows(), s.w.cols());
      for (Eigen::Index j = 0; j < eta.size(); ++j) {
        const double p = expit(eta[j]);
        r[j] = s.y[j] - p;
        sw.row(j) = std::sqrt(p * (1.0 - p)) * s.w.row(j);
      }
      sc[k] = s.w.transpose() * r;
      info[k] = sw.transpose() * sw;
    }
    const double lse = log_sum_exp(lt);
    out.loglik += lse + log_const;
    Vec mean = Vec::Zero(theta.size());
    Mat second = Mat::Zero(theta.size(), theta.size());
    for (std::size_t k = 0; k < nk; ++k) {
      const double om = std::exp(lt[k] - lse);
      mean += om * sc[k];
      second += om * (sc[k] * sc[k].transpose() - info[k]);
    }
    out.score += mean;
    out.neg_hessian -= second - mean * mean.transpose();
  }
  return out;
}

AgqDerivs agq_derivs(std::span<const SubjectRows> subjects, const Vec& theta, const Mat& psi, int n_gq) {
  const auto nodes = agq_nodes(subjects, theta, psi, n_gq);
  return agq_derivs(subjects, nodes, theta, psi);
}

MultilevelResult fit_multilevel(const Design& d, const MultilevelOptions& opt) {
  if (opt.n_gq < 1) fail_validation("n_gq must be at least 1");
  const FitResult base = fit_alternating(d, opt.fixed);
  MultilevelResult out;
  out.names = d.names;
  out.theta = base.theta;
  out.sigma2 = base.sigma2;
  out.warnings = base.warnings;
  if (opt.re == RandomEffects::none) {
    out.psi = Mat(0, 0);
    out.converged = base.converged;
    out.outer_iterations = base.outer_iterations;
    out.score_norm = base.grad_norm;
    out.loglik = penalized_loglik(d, base.theta, base.sigma2);
    for (int id : d.subject)
      if (out.subjects.empty() || out.subjects.back() != id) out.subjects.push_back(id);
    out.b_hat = Mat(static_cast<Eigen::Index>(out.subjects.size()), 0);
    return out;
  }

  const std::vector<SubjectRows> subjects = subject_rows(d, opt.re);
  if (subjects.size() < 2) fail_validation("multilevel fit needs at least 2 subjects");
  const Eigen::Index q = subjects[0].z.cols();
  out.n_gq = opt.n_gq;
  if (q > 2 && opt.n_gq > 1) {
    out.n_gq = 1;
    out.warnings.push_back("random-effect dimension " + std::to_string(q) +
                           " > 2: using n_gq = 1 (Laplace) instead of " + std::to_string(opt.n_gq));
  }
  if (!(opt.sigma_b2 > 0)) fail_validation("initial random-effect variance must be positive");

  const int groups = penalty_groups(d);
  std::vector<std::vector<int>> idx(static_cast<std::size_t>(groups));
  for (Eigen::Index j = 0; j < d.cols(); ++j)
    if (d.pen_group[static_cast<std::size_t>(j)] >= 0)
      idx[static_cast<std::size_t>(d.pen_group[static_cast<std::size_t>(j)])].push_back(static_cast<int>(j));
  const bool fixed_s2 = !opt.fixed.fixed_sigma2.empty();

  Mat psi = opt.sigma_b2 * Mat::Identity(q, q);
  Vec theta = out.theta;
  bool warned_floor = false;
  bool newton_ok = false;
  for (int outer = 0; outer < opt.max_outer; ++outer) {
    const Vec pd = penalty_diag(d, out.sigma2);
    const auto objective = [&](const AgqDerivs& a, const Vec& th) { return a.loglik - 0.5 * th.dot(pd.cwiseProduct(th)); };
    newton_ok = false;
    AgqDerivs cur;
    for (int it = 0; it < opt.max_newton; ++it) {
      // Nodes follow the modes at the current theta and stay fixed within the step.
      const auto nodes = agq_nodes(subjects, theta, psi, out.n_gq);
      cur = agq_derivs(subjects, nodes, theta, psi);
      const double obj = objective(cur, theta);
      const Vec score = cur.score - pd.cwiseProduct(theta);
      out.score_norm = score.cwiseAbs().maxCoeff();
      if (out.score_norm < opt.score_tol) {
        newton_ok = true;
        break;
      }
      Mat h = cur.neg_hessian;
      h.diagonal() += pd;
      Eigen::LDLT<Mat> ldlt(h);
      if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0).any()) {
        h.diagonal().array() += 1e-8 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
        ldlt.compute(h);
      }
      const Vec step = ldlt.solve(score);
      double a = 1.0;
      bool moved = false;
      for (int k = 0; k < 30; ++k, a *= 0.5) {
        const Vec cand = theta + a * step;
        if (objective(agq_derivs(subjects, nodes, cand, psi), cand) >= obj - 1e-12 * std::abs(obj)) {
          theta = cand;
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    out.loglik = cur.loglik;

    Mat next_psi = Mat::Zero(q, q);
    for (const auto& s : subjects) {
      const Blup m = newton_blup(s, theta, psi);
      next_psi += m.b * m.b.transpose() + inverse_spd(m.curvature, "curvature at the mode");
    }
    next_psi /= static_cast<double>(subjects.size());
    bool floored = false;
    next_psi = floor_psi(next_psi, opt.psi_floor, &floored);
    if (floored && !warned_floor) {
      out.warnings.push_back("random-effect covariance is degenerate; eigenvalues raised to " +
                             fmt(opt.psi_floor));
      warned_floor = true;
    }
    double rel = (next_psi - psi).norm() / std::max(psi.norm(), 1e-300);
    psi = next_psi;
    if (!fixed_s2) {
      for (int g = 0; g < groups; ++g) {
        auto& s2 = out.sigma2[static_cast<std::size_t>(g)];
        const double nv = update_sigma2(theta, idx[static_cast<std::size_t>(g)]);
        rel = std::max(rel, std::abs(nv - s2) / s2);
        s2 = nv;
      }
    }
    out.outer_iterations = outer + 1;
    if (rel < opt.tol && newton_ok) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged)
    out.warnings.push_back("multilevel fit stopped after " + std::to_string(out.outer_iterations) +
                           " outer iterations (score " + fmt(out.score_norm) + ")");

  out.theta = theta;
  out.psi = psi;
  out.b_hat.resize(static_cast<Eigen::Index>(subjects.size()), q);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    out.subjects.push_back(subjects[i].subject);
    out.b_hat.row(static_cast<Eigen::Index>(i)) = newton_blup(subjects[i], theta, psi).b.transpose();
  }
  return out;
}

std::string blup_csv(const MultilevelResult& r) {
  std::ostringstream out;
  out << "subject_id";
  for (Eigen::Index j = 0; j < r.b_hat.cols(); ++j) out << ",b" << j;
  out << '\n';
  for (std::size_t i = 0; i < r.subjects.size(); ++i) {
    out << r.subjects[i];
    for (Eigen::Index j = 0; j < r.b_hat.cols(); ++j) out << ',' << fmt(r.b_hat(static_cast<Eigen::Index>(i), j));
    out << '\n';
  }
  return out.str();
}

}  // namespace subhaz
