#include "helpers.hpp"
#include "subhaz/design.hpp"
#include "subhaz/io.hpp"
#include "subhaz/pipeline.hpp"

#include <doctest.h>

#include <filesystem>

using namespace subhaz;

TEST_SUITE("design") {
  TEST_CASE("truncated power basis") {
    const auto b = build_basis(8, 0.5);
    CHECK(b.knots.size() == 5);
    CHECK(b.knots.front() == doctest::Approx(0.5 / 6));
    CHECK(b.penalized() == std::vector<int>{3, 4, 5, 6, 7});
    const Vec v0 = b.eval(0.0);
    CHECK(v0[0] == 1.0);
    CHECK(v0.tail(7).norm() == 0.0);
    const Vec v1 = b.eval(0.5);
    CHECK(v1[1] == 1.0);
    CHECK(v1[7] == doctest::Approx(std::pow(1.0 / 6, 3)));
    CHECK(b.eval(0.6).norm() == 0.0);
    CHECK_THROWS_AS(build_basis(3, 0.5), Error);
    CHECK_THROWS_AS(build_basis(36, 0.5, 35), Error);
    CHECK_NOTHROW(build_basis(35, 0.5, 35));
  }

  TEST_CASE("cross matrix with a complete eigenbasis reproduces the quadrature") {
    const auto g = make_window_grid(0.5, 21);
    const EigenSystem es = eigensystem(matern_marginal(g, {1.5, 1.0, 0.3}), g.w, 21);
    const auto basis = build_basis(10, 0.5);
    const CrossMatrix cm = cross_matrix(es, basis);
    const Vec x = Vec::LinSpaced(21, -1.0, 2.0).array().sin();
    const Vec c = es.psi.transpose() * g.w.asDiagonal() * x;
    const Vec want = cm.phi.transpose() * g.w.asDiagonal() * x;
    CHECK((cm.j.transpose() * c - want).cwiseAbs().maxCoeff() < 1e-9);
    const auto other = build_basis(10, 0.6);
    CHECK_THROWS_AS(cross_matrix(es, other), Error);
  }

  TEST_CASE("features") {
    CHECK(parse_feature("since_last") == Feature::since_last);
    CHECK(feature_name(Feature::count) == "count");
    CHECK_THROWS_AS(parse_feature("bogus"), Error);
  }

  TEST_CASE("design rows follow events and samples") {
    SimConfig sc;
    sc.user_days = 6;
    const Dataset ds = simulate_dataset(sc, 5);
    ModelConfig mc;
    mc.m = 32;
    mc.k_x = 12;
    mc.k_b = 8;
    mc.features = {Feature::intercept, Feature::count};
    mc.fpca.known_mean_zero = true;
    mc.fpca.known_cov = sc.matern;
    const StreamModel sm = build_stream_model(ds.subjects, 0, mc);
    DesignOptions opt;
    opt.features = mc.features;
    const std::vector<StreamModel> models{sm};
    const Design d = build_design(ds.subjects, models, dataset_pi(ds), opt);
    CHECK(d.rows() == ds.total_events() + ds.total_samples());
    CHECK(d.y.sum() == ds.total_events());
    CHECK(d.cols() == 2 + 8);
    CHECK(d.names[1] == "count");
    CHECK(d.names[2] == "s0_b0");
    CHECK(d.pen_group[4] == -1);
    CHECK(d.pen_group[5] == 0);
    CHECK(d.block_offset == std::vector<int>{2});
    CHECK((d.log_pi.array() - std::log(2.0)).abs().maxCoeff() < 1e-15);
    for (Eigen::Index i = 1; i < d.rows(); ++i)
      CHECK((d.subject[i] > d.subject[i - 1] || (d.subject[i] == d.subject[i - 1] && d.t[i] >= d.t[i - 1])));

    SUBCASE("csv round trip") {
      const auto path = (std::filesystem::temp_directory_path() / "subhaz_design_rt.csv").string();
      write_design_csv(d, path);
      const Design r = read_design_csv(path);
      CHECK(r.names == d.names);
      CHECK(r.pen_group == d.pen_group);
      CHECK(r.w == d.w);
      CHECK(r.y == d.y);
      CHECK(r.log_pi == d.log_pi);
      CHECK(r.subject == d.subject);
      write_design_csv(r, path + ".2");
      CHECK(read_text(path) == read_text(path + ".2"));
      std::filesystem::remove(path);
      std::filesystem::remove(path + ".2");
    }
  }

  TEST_CASE("design csv errors") {
    const auto path = (std::filesystem::temp_directory_path() / "subhaz_bad_design.csv").string();
    write_text(path, "subject_id,t,y\n0,1,1\n");
    CHECK_THROWS_AS(read_design_csv(path), Error);
    std::filesystem::remove(path);
    try {
      read_design_csv("/nonexistent/design.csv");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::io);
    }
  }
}
