#include "subhaz/common.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace subhaz {

Mat project_psd(const Mat& a, double rel_threshold, bool* clipped) {
  const Mat sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  Vec lam = es.eigenvalues();
  const double top = lam.size() > 0 ? lam.maxCoeff() : 0.0;
  const double cut = top > 0 ? rel_threshold * top : 0.0;
  bool any = false;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < 0.0 || lam[i] < cut) {
      if (lam[i] < 0.0) any = true;
      lam[i] = 0.0;
    }
  }
  if (clipped) *clipped = any;
  Mat out = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

Mat jittered_cholesky(const Mat& a, const char* what) {
  const auto n = a.rows();
  Eigen::LLT<Mat> llt(a);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const double scale = n > 0 ? std::abs(a.trace()) / static_cast<double>(n) : 1.0;
  for (double jitter = 1e-12; jitter <= 1.0000001e-6; jitter *= 10.0) {
    Mat b = a;
    b.diagonal().array() += jitter * (scale > 0 ? scale : 1.0);
    llt.compute(b);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  fail_numerical(std::string("ill-conditioned covariance: Cholesky failed after jitter escalation (") +
                 what + ")");
}

}  // namespace subhaz
