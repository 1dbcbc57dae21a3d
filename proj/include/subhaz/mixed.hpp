// Penalized logistic mixed model: subject-level random effects b_i ~ N(0, Psi) entering
// the linear predictor as Z_{i,t}'b_i, fit by adaptive Gauss-Hermite quadrature.
//
// g(theta, b) = sum_j [y_j eta_j - log(1 + exp(eta_j))] - b'Psi^-1 b / 2 with
// eta_j = W_j'theta + Z_j'b - log pi_j.
#pragma once

#include "subhaz/common.hpp"
#include "subhaz/design.hpp"
#include "subhaz/fit.hpp"

#include <string>
#include <vector>

namespace subhaz {

/// Physicists' Gauss-Hermite rule (weight exp(-z^2)), Golub-Welsch.
struct GaussHermite {
  Vec nodes;
  Vec weights;
};
GaussHermite gauss_hermite(int n);

/// Rows of one subject with the random-effect covariates attached.
struct SubjectRows {
  int subject = 0;
  Mat w;
  Mat z;
  Vec y;
  Vec log_pi;
};

double g_value(const SubjectRows& s, const Vec& theta, const Vec& b, const Mat& psi_inv);

struct Blup {
  Vec b;
  /// Z'VZ + Psi^-1 at the mode.
  Mat curvature;
  int iterations = 0;
};
/// Newton-Raphson for the mode of g in b. Throws a numerical error after 100 iterations.
Blup newton_blup(const SubjectRows& s, const Vec& theta, const Mat& psi);

/// log of (2 pi)^{-q/2} |Psi|^{-1/2} int exp(g) db by adaptive quadrature with n_gq nodes
/// per dimension, nodes b = b_hat + sqrt(2) R^-1 z where R'R is the curvature at the mode.
double agq_marginal_loglik(const SubjectRows& s, const Vec& theta, const Mat& psi, int n_gq);
/// Same quantity by the Laplace approximation at the mode.
double laplace_marginal_loglik(const SubjectRows& s, const Vec& theta, const Mat& psi);

enum class RandomEffects {
  none,        // q = 0: ordinary penalized fit
  intercept,   // q = 1, Z = 1
  functional,  // q = sum K_b, Z = functional block columns
};
RandomEffects parse_random_effects(const std::string& s);

/// Splits a design by subject and attaches Z.
std::vector<SubjectRows> subject_rows(const Design& d, RandomEffects re);

struct MultilevelOptions {
  RandomEffects re = RandomEffects::functional;
  int n_gq = 7;
  /// Psi starts at sigma_b2 * I.
  double sigma_b2 = 1.0;
  int max_outer = 50;
  double tol = 1e-6;
  int max_newton = 100;
  double score_tol = 1e-6;
  /// Smallest allowed Psi eigenvalue; smaller ones are raised with a warning.
  double psi_floor = 1e-10;
  FitOptions fixed;
};

struct MultilevelResult {
  Vec theta;
  Mat psi;
  std::vector<double> sigma2;
  std::vector<int> subjects;
  /// One row of mode estimates per subject.
  Mat b_hat;
  int n_gq = 0;
  int outer_iterations = 0;
  double score_norm = 0.0;
  double loglik = 0.0;
  bool converged = false;
  std::vector<std::string> names;
  std::vector<std::string> warnings;
};

/// Quadrature nodes b_k of one subject and log(W_k) including the 2^{q/2} |R|^-1 factor.
struct QuadNodes {
  std::vector<Vec> b;
  std::vector<double> log_w;
};
/// Nodes adapted to the mode and curvature at theta.
std::vector<QuadNodes> agq_nodes(std::span<const SubjectRows> subjects, const Vec& theta, const Mat& psi, int n_gq);

/// Quadrature log-likelihood summed over subjects with its omega-weighted score and
/// negative Hessian in theta. With the nodes held fixed these are exact derivatives.
struct AgqDerivs {
  double loglik = 0.0;
  Vec score;
  Mat neg_hessian;
};
AgqDerivs agq_derivs(std::span<const SubjectRows> subjects, std::span<const QuadNodes> nodes, const Vec& theta,
                     const Mat& psi);
AgqDerivs agq_derivs(std::span<const SubjectRows> subjects, const Vec& theta, const Mat& psi, int n_gq);

/// Alternates Newton steps on theta (quadrature score and Hessian plus the b-block
/// penalty, nodes re-adapted after every step), the EM update
/// Psi <- n^-1 sum (b b' + curvature^-1) and the sigma2 update.
/// q > 2 forces n_gq = 1 with a warning. re = none returns fit_alternating unchanged.
MultilevelResult fit_multilevel(const Design& d, const MultilevelOptions& opt = {});

/// subject_id,b0,b1,...
std::string blup_csv(const MultilevelResult& r);

}  // namespace subhaz
