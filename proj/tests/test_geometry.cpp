#include <cmath>

#include "doctest.h"
#include "wahkit/errors.hpp"
#include "wahkit/geometry.hpp"

using namespace wahkit;

TEST_CASE("collar chart grids") {
  GridSpec res;
  res.points = 64;
  auto c1 = make_collar_chart(1, 1.0, res);
  CHECK(c1.rho(0) == doctest::Approx(1.0));
  CHECK(c1.rho(c1.points() - 1) == doctest::Approx(std::exp(-c1.t_max)));

  res.points = 128;
  auto c2 = make_collar_chart(2, 0.5, res);
  CHECK(c2.t_min == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  res.t_max = 12.0;
  auto c3 = make_collar_chart(3, 1.0, res);
  CHECK(c3.rho(c3.points() - 1) == doctest::Approx(6.144212353e-6).epsilon(1e-9));

  for (int i = 1; i < c2.points(); ++i) CHECK(c2.rho(i) < c2.rho(i - 1));
  CHECK(c2.theta_grid.size() == res.theta_points);
  CHECK(c2.theta_grid(res.theta_points - 1) < kTwoPi);
}

TEST_CASE("collar chart rejects bad resolution") {
  GridSpec bad;
  bad.points = 0;
  CHECK_THROWS_AS(make_collar_chart(2, 1.0, bad), Error);
  try {
    make_collar_chart(2, 1.0, bad);
  } catch (const Error& e) {
    CHECK(e.exit_code() == 2);
  }
  CHECK_THROWS_AS(make_collar_chart(0, 1.0), Error);
  CHECK_THROWS_AS(make_collar_chart(2, 1.5), Error);
}

TEST_CASE("mobius parametrization") {
  auto chart = make_collar_chart(1, 1.0);
  Vec p0(2);
  p0 << 0.0, 1.0;
  auto m = mobius_param(chart, p0);
  Vec z(2);
  z << 0.0, 1.0;
  CHECK((m.forward(z) - p0).norm() == doctest::Approx(0.0));

  p0 << 2.0, 0.5;
  m = mobius_param(chart, p0);
  z << 1.0, 1.0;
  Vec w = m.forward(z);
  CHECK(w(0) == doctest::Approx(2.5));
  CHECK(w(1) == doctest::Approx(0.5));
  z << 0.3, 1.7;
  CHECK(m.forward(z)(1) == doctest::Approx(0.5 * 1.7));

  Vec bad(2);
  bad << 0.0, 0.0;
  CHECK_THROWS_AS(mobius_param(chart, bad), Error);
}

TEST_CASE("mobius jacobian matches finite differences and pulls back the hyperbolic metric") {
  auto chart = make_collar_chart(2, 1.0);
  auto hyp = catalog_metric("hyperbolic", {}, chart);
  Vec p0(3);
  p0 << 0.4, -1.1, 0.03;
  auto m = mobius_param(chart, p0);
  Vec z(3);
  z << 0.2, -0.4, 1.3;
  const double h = 1e-6;
  Mat fd(3, 3);
  for (int k = 0; k < 3; ++k) {
    Vec e = Vec::Zero(3);
    e(k) = h;
    fd.col(k) = (m.forward(z + e) - m.forward(z - e)) / (2 * h);
  }
  CHECK((fd - m.jacobian(z)).norm() < 1e-9);

  Vec q = m.forward(z);
  Mat J = m.jacobian(z);
  Mat pulled = J.transpose() * (hyp.jet(q).g / (q(2) * q(2))) * J;
  Mat expect = Mat::Identity(3, 3) / (z(2) * z(2));
  CHECK((pulled - expect).norm() <= 1e-14 * expect.norm());
}

TEST_CASE("boundary mobius parametrization") {
  auto chart = make_collar_chart(1, 1.0);
  Vec ph(2);
  ph << 0.0, 0.0;
  auto m = boundary_mobius_param(chart, ph, 0.1);
  Vec z(2);
  z << 0.0, 0.5;
  Vec w = m.forward(z);
  CHECK(w(0) == doctest::Approx(0.0));
  CHECK(w(1) == doctest::Approx(0.05));
  z << 0.9, 0.99;
  CHECK(m.forward(z)(1) < 0.1);

  auto shallow = make_collar_chart(1, 0.2);
  CHECK_THROWS_AS(boundary_mobius_param(shallow, ph, 0.2), Error);
}

TEST_CASE("boundary mobius recentering makes gbar the identity at p_hat") {
  auto chart = make_collar_chart(2, 1.0);
  auto g = catalog_metric("angle_dependent", {{"a", 1.0}, {"kappa", 0.5}}, chart);
  Vec ph(3);
  ph << 0.7, 0.2, 0.0;
  auto m = boundary_mobius_param(chart, ph, 0.1, &g);
  Vec q = ph;
  q(2) = 1e-14;
  Mat J = m.jacobian(Vec::Zero(3)) / 0.1;
  Mat pulled = J.transpose() * g.jet(q).g * J;
  CHECK((pulled - Mat::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("boundary mobius pullback deviates from the model by O(r)") {
  auto chart = make_collar_chart(2, 1.0);
  auto g = catalog_metric("angle_dependent", {{"a", 1.0}, {"b", 0.5}}, chart);
  Vec ph(3);
  ph << 1.1, 0.0, 0.0;
  std::vector<double> C;
  for (double r : {0.2, 0.1, 0.05, 0.025}) {
    auto m = boundary_mobius_param(chart, ph, r, &g);
    Mat J = m.jacobian(Vec::Zero(3)) / r;
    Vec q0 = ph;
    q0(2) = 1e-14;
    Mat g0 = g.jet(q0).g;
    double sup = 0;
    for (int a = 0; a <= 8; ++a)
      for (int b = 0; b <= 8; ++b)
        for (int c = 1; c <= 8; ++c) {
          Vec z(3);
          z << -0.95 + 1.9 * a / 8, -0.95 + 1.9 * b / 8, c / 8.0 - 0.01;
          // y^2 (Psi^* g - model) = J^T (gbar(Psi z) - gbar(p_hat)) J
          Mat d = J.transpose() * (g.jet(m.forward(z)).g - g0) * J;
          sup = std::max(sup, d.norm());
        }
    C.push_back(sup / r);
  }
  for (double c : C) {
    CHECK(c > 0.0);
    CHECK(c / C.front() < 1.5);
    CHECK(c / C.front() > 1.0 / 1.5);
  }
}

TEST_CASE("hyperbolic distance") {
  Vec p(2), q(2);
  p << 0.0, 1.0;
  q << 0.0, std::exp(1.0);
  CHECK(hyperbolic_distance(p, q) == doctest::Approx(1.0));
  CHECK(hyperbolic_distance(p, p) == doctest::Approx(0.0));
}

TEST_CASE("catalog metrics") {
  auto chart = make_collar_chart(2, 1.0);
  auto hyp = catalog_metric("hyperbolic", {}, chart);
  Vec x = chart.point(0.3, 0.2);
  auto j = hyp.jet(x);
  CHECK((j.g - Mat::Identity(3, 3)).norm() == 0.0);
  for (int k = 0; k < 3; ++k) {
    CHECK(j.dg[k].norm() == 0.0);
    for (int l = 0; l < 3; ++l) CHECK(j.ddg[k][l].norm() == 0.0);
  }
  CHECK(hyp.wah_flag());

  auto poly = catalog_metric("poly_perturbed", {{"a", 1.0}, {"b", 0.0}}, chart);
  for (double rho : {0.5, 0.1, 1e-3}) {
    CHECK(poly.component(chart.point(0.0, rho), {})(0, 0) == doctest::Approx(1.0 + rho));
    CHECK(poly.component(chart.point(0.0, rho), {2})(0, 0) == doctest::Approx(1.0));
  }

  CHECK_THROWS_AS(catalog_metric("no_such_metric", {}, chart), Error);
  CHECK_THROWS_AS(catalog_metric("poly_perturbed", {{"a", -5.0}}, chart), Error);
  CHECK_THROWS_AS(catalog_metric("poly_perturbed", {{"bogus", 1.0}}, chart), Error);

  auto scaled = catalog_metric("hyperbolic", {{"rho_scale", 4.0}}, chart);
  CHECK_FALSE(scaled.wah_flag());
}

TEST_CASE("catalog derivatives agree with finite differences") {
  auto chart = make_collar_chart(2, 0.5);
  for (const auto& name : catalog_names()) {
    auto g = catalog_metric(name, {}, chart);
    for (double rho : {0.05, 0.3, 0.7}) {
      Vec x = chart.point(0.9, rho);
      x(1) = -0.4;
      auto j = g.jet(x);
      const double h = 1e-5;
      for (int k = 0; k < 3; ++k) {
        Vec e = Vec::Zero(3);
        e(k) = h;
        Mat fd = (g.jet(x + e).g - g.jet(x - e).g) / (2 * h);
        CHECK((fd - j.dg[k]).norm() < 1e-7);
        for (int l = 0; l < 3; ++l) {
          Mat fd2 = (g.jet(x + e).dg[l] - g.jet(x - e).dg[l]) / (2 * h);
          CHECK((fd2 - j.ddg[k][l]).norm() < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("log_oscillation second rho-derivative is unbounded") {
  auto chart = make_collar_chart(1, 1.0);
  auto g = catalog_metric("log_oscillation", {{"eps", 0.5}}, chart);
  // d^2/drho^2 [rho^1.5 sin(log rho)] = rho^-0.5 (2 cos(log rho) - 0.25 sin(log rho))
  auto oracle = [](double r) { return std::pow(r, -0.5) * (2.0 * std::cos(std::log(r)) - 0.25 * std::sin(std::log(r))); };
  double prev = 0;
  // windows of three decades each contain a full period of sin(log rho)
  for (int win = 0; win < 4; ++win) {
    double sup = 0;
    for (int i = 0; i < 120; ++i) {
      const double r = std::pow(10.0, -3.0 * win - i / 40.0);
      const double v = g.component(chart.point(0.0, r), {1, 1})(0, 0);
      CHECK(v == doctest::Approx(oracle(r)).epsilon(1e-10));
      sup = std::max(sup, std::abs(v));
    }
    CHECK(sup > 5.0 * prev);
    prev = sup;
  }
}

TEST_CASE("blend is C2 and equals one below rho_star") {
  Vec x(2);
  x << 0.0, 0.3;
  CHECK(collar_blend(x, 0.5).v == 1.0);
  x(1) = 1.2;
  CHECK(collar_blend(x, 0.5).v == 0.0);
  x(1) = 0.75;
  auto b = collar_blend(x, 0.5);
  const double h = 1e-6;
  Vec xp = x, xm = x;
  xp(1) += h;
  xm(1) -= h;
  CHECK(b.d(1) == doctest::Approx((collar_blend(xp, 0.5).v - collar_blend(xm, 0.5).v) / (2 * h)));
  CHECK(b.dd(1, 1) == doctest::Approx((collar_blend(xp, 0.5).d(1) - collar_blend(xm, 0.5).d(1)) / (2 * h)));
  x(1) = 2.0;
  CHECK(collar_blend(x, 1.0).v == 1.0);
}

TEST_CASE("grid scalar field reproduces a smooth function to fourth order") {
  const int N = 2;
  const double t0 = 0.0, h = 0.05;
  Vec vals(241);
  for (int i = 0; i < vals.size(); ++i) {
    const double r = std::exp(-(t0 + i * h));
    vals(i) = r * r * std::exp(-r);
  }
  auto f = grid_scalar_field("s", N, t0, h, vals);
  CHECK(f.sampled);
  Vec x(2);
  x << 0.0, 0.0371;
  const double r = x(1);
  auto j = f.jet(x);
  CHECK(j.v == doctest::Approx(r * r * std::exp(-r)).epsilon(1e-6));
  CHECK(j.d(1) == doctest::Approx((2 * r - r * r) * std::exp(-r)).epsilon(1e-5));
  CHECK(j.dd(1, 1) == doctest::Approx((2 - 4 * r + r * r) * std::exp(-r)).epsilon(1e-4));
}

TEST_CASE("conformal rescale multiplies the jet") {
  auto chart = make_collar_chart(2, 1.0);
  auto g = catalog_metric("poly_perturbed", {}, chart);
  ScalarField th{"theta", [](const Vec& x) { return exp(ScalarJet::coordinate(x, 2) + ScalarJet::coordinate(x, 0)); },
                 false, false};
  auto gt = conformal_rescale(g, th);
  Vec x = chart.point(0.2, 0.3);
  CHECK((gt.jet(x).g - th(x) * g.jet(x).g).norm() < 1e-14);
  CHECK(gt.kind() == MetricKind::closed_form);
  CHECK_FALSE(gt.theta_independent());
}
