#include "helpers.hpp"
#include "subhaz/fpca.hpp"

#include <Eigen/Eigenvalues>
#include <doctest.h>

#include <algorithm>

using namespace subhaz;

namespace {

SensorPath linear_path(double slope, int n = 1001) {
  SensorPath p;
  p.grid = linspace(0.0, 10.0, static_cast<std::size_t>(n));
  std::vector<double> v;
  for (double t : p.grid) v.push_back(slope * t);
  p.add_stream(v);
  return p;
}

}  // namespace

TEST_SUITE("fpca") {
  TEST_CASE("window grid") {
    const auto g = make_window_grid(0.5, 64);
    CHECK(g.size() == 64);
    CHECK(g.s.front() == 0.0);
    CHECK(g.s.back() == 0.5);
    CHECK(g.w.sum() == doctest::Approx(0.5));
    CHECK_THROWS_AS(make_window_grid(0.0, 10), Error);
    CHECK_THROWS_AS(make_window_grid(0.5, 1), Error);
  }

  TEST_CASE("windows read the interpolated path backwards in time") {
    const auto path = linear_path(2.0);
    const auto g = make_window_grid(0.5, 11);
    const std::vector<Anchor> anchors{{3.0037, 1}, {7.5, 0}};
    const auto w = extract_windows(path, anchors, g);
    REQUIRE(w.size() == 2);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t r = 0; r < g.size(); ++r)
        CHECK(w[i].values[static_cast<Eigen::Index>(r)] == doctest::Approx(2.0 * (anchors[i].t - g.s[r])));
    CHECK(w[0].label == 1);
    const std::vector<Anchor> early{{0.2, 0}};
    CHECK_THROWS_AS(extract_windows(path, early, g), Error);
    const auto padded = extract_windows(path, early, g, 0, true);
    CHECK(padded[0].values[10] == 0.0);
  }

  TEST_CASE("masked sensor values mask the window entries they touch") {
    auto path = linear_path(1.0, 101);
    path.mask[0][50] = 0;  // t = 5.0
    const auto g = make_window_grid(0.5, 6);
    const std::vector<Anchor> a{{5.2, 0}};
    const auto w = extract_windows(path, a, g);
    CHECK(!w[0].complete());
    const EigenSystem es = eigensystem(matern_marginal(g, {0.5, 1.0, 3.6}), g.w, 3);
    CHECK_THROWS_AS(scores(w[0], es, MeanSurface::zero()), Error);
  }

  TEST_CASE("eigenvalues of the exponential kernel") {
    // Reference: 2c / (w^2 + c^2) with w from the even/odd transcendental equations.
    const double want[] = {0.47768297490140091131, 0.013307727381211504084, 0.0034677793708400030307,
                           0.0015535603484880275413};
    const auto g = make_window_grid(0.5, 401);
    const EigenSystem es = eigensystem(matern_marginal(g, {0.5, 1.0, 3.6}), g.w, 4);
    for (int k = 0; k < 4; ++k) CHECK(testing::rel_err(es.lambda[k], want[k]) < 2e-3);
    const Mat gram = es.psi.transpose() * g.w.asDiagonal() * es.psi;
    CHECK((gram - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
  }

  TEST_CASE("PSD projection zeroes the negative direction") {
    Rng rng = make_rng(3);
    NormalSource z;
    Mat a(3, 3);
    for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = z(rng);
    const Mat q = Eigen::HouseholderQR<Mat>(a).householderQ();
    const Vec lam = (Vec(3) << 1.0, 0.5, -0.1).finished();
    const Mat m = q * lam.asDiagonal() * q.transpose();
    const Mat p = project_psd(m);
    Eigen::SelfAdjointEigenSolver<Mat> es(p);
    CHECK(es.eigenvalues().minCoeff() > -1e-12);
    CHECK((p * q.col(2)).norm() < 1e-12);
    CHECK((p * q.col(0) - q.col(0)).norm() < 1e-12);

    MarginalCov c;
    c.s = linspace(0.0, 1.0, 3);
    c.matrix = m;
    const auto sm = smooth_and_project(c);
    Eigen::SelfAdjointEigenSolver<Mat> es2(sm.matrix);
    CHECK(es2.eigenvalues().minCoeff() > -1e-12);
  }

  TEST_CASE("pooled covariance ignores input order and masked pairs") {
    const auto g = make_window_grid(0.5, 5);
    std::vector<WindowedHistory> w;
    Rng rng = make_rng(7);
    NormalSource z;
    for (int i = 0; i < 40; ++i) {
      WindowedHistory h;
      h.subject_id = i % 7;
      h.anchor_t = 1.0 + i;
      h.values = Vec::NullaryExpr(5, [&]() { return z(rng); });
      h.mask.assign(5, 1);
      if (i % 5 == 0) {
        h.mask[2] = 0;
        h.values[2] = 0.0;
      }
      w.push_back(h);
    }
    const auto a = pooled_cov(w, 0, MeanSurface::zero(), g);
    std::reverse(w.begin(), w.end());
    const auto b = pooled_cov(w, 0, MeanSurface::zero(), g);
    CHECK(a.matrix == b.matrix);
    double s = 0;
    int n = 0;
    for (const auto& h : w)
      if (h.mask[2]) {
        s += h.values[2] * h.values[2];
        ++n;
      }
    CHECK(a.matrix(2, 2) == doctest::Approx(s / n));
  }

  TEST_CASE("scores are the weighted inner products with the eigenfunctions") {
    const auto g = make_window_grid(0.5, 33);
    const EigenSystem es = eigensystem(matern_marginal(g, {0.5, 1.0, 3.6}), g.w, 5);
    WindowedHistory h;
    h.values = 2.0 * es.psi.col(1) - 0.5 * es.psi.col(3);
    h.mask.assign(33, 1);
    const Vec c = scores(h, es, MeanSurface::zero());
    CHECK(c[1] == doctest::Approx(2.0));
    CHECK(c[3] == doctest::Approx(-0.5));
    CHECK(std::abs(c[0]) < 1e-10);
    const Vec c2 = scores(h, es, MeanSurface::constant(0.0));
    CHECK((c - c2).norm() == 0.0);
  }

  TEST_CASE("estimated mean of shifted windows recovers the shift") {
    const auto g = make_window_grid(0.5, 17);
    std::vector<WindowedHistory> w;
    Rng rng = make_rng(2);
    NormalSource z;
    for (int i = 0; i < 200; ++i) {
      WindowedHistory h;
      h.anchor_t = 0.05 * i;
      h.values = Vec::Constant(17, 1.5) + 0.1 * Vec::NullaryExpr(17, [&]() { return z(rng); });
      h.mask.assign(17, 1);
      w.push_back(h);
    }
    const auto m = estimate_mean(w, 0, g);
    CHECK(std::abs(m.mean(3.0, 0.2) - 1.5) < 0.05);
    CHECK_THROWS_AS(estimate_mean(w, 1, g), Error);
  }

  TEST_CASE("known-covariance FPCA has no nugget") {
    const auto g = make_window_grid(0.5, 17);
    std::vector<WindowedHistory> none;
    FpcaOptions opt;
    opt.k_x = 5;
    opt.known_mean_zero = true;
    opt.known_cov = MaternParams{0.5, 1.0, 3.6};
    const auto f = fit_label_fpca(none, 0, g, opt);
    CHECK(f.nugget == 0.0);
    CHECK(f.es.k_x() == 5);
  }
}
