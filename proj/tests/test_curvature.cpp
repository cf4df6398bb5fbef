#include <cmath>
#include <random>

#include "doctest.h"
#include "wahkit/curvature.hpp"
#include "wahkit/errors.hpp"

using namespace wahkit;

namespace {

double max_rel(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff()); }

// Wedge of two vectors as antisymmetric components (a^k b^l - a^l b^k).
Mat wedge(const Vec& a, const Vec& b) { return a * b.transpose() - b * a.transpose(); }

// Action on 2-form components w^{ij}: (T w)^{kl} = 1/2 T_{ij}^{kl} w^{ij}.
Mat apply(const Tensor22& t, const Mat& w) {
  const int N = t.dim;
  Mat r = Mat::Zero(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < N; ++k)
        for (int l = 0; l < N; ++l) r(k, l) += 0.5 * t(i, j, k, l) * w(i, j);
  return r;
}

// f for gbar = drho^2 + sum h_a (dtheta^a)^2 with h_a = 1 + a rho + b rho^2, by hand:
// |d rho|^2 = 1, Delta rho = 1/2 sum h_a'/h_a.
double f_oracle(const std::vector<double>& a, const std::vector<double>& b, double rho) {
  const int n = static_cast<int>(a.size());
  double s = 0;
  for (int i = 0; i < n; ++i) s += (a[i] + 2 * b[i] * rho) / (1 + a[i] * rho + b[i] * rho * rho);
  return -rho * s / (n + 1.0);
}

MetricField obstruction_metric(const CollarChart& chart) {
  return catalog_metric("poly_perturbed", {{"a1", 1.0}, {"a2", -1.0}, {"b1", 0.0}, {"b2", 1.0}}, chart);
}

}  // namespace

TEST_CASE("kn_product identities") {
  const Mat d = Mat::Identity(3, 3);
  const Tensor22 id = kn_product(d, d);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l)
          CHECK(id(i, j, k, l) == (i == k) * (j == l) - (i == l) * (j == k));
  CHECK((id.c - Tensor22::identity(3).c).norm() == 0.0);

  std::mt19937 rng(7);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 10; ++trial) {
    Mat u(3, 3), v(3, 3);
    for (int i = 0; i < 9; ++i) {
      u(i) = nd(rng);
      v(i) = nd(rng);
    }
    CHECK((kn_product(u, v).c - kn_product(v, u).c).norm() < 1e-14);

    // brute-force wedge oracle; the factor 1/2 makes delta*delta the identity
    const Tensor22 t = kn_product(u, v);
    const Vec e1 = Vec::Unit(3, 0), e2 = Vec::Unit(3, 1);
    const Vec ue1 = u.transpose() * e1, ue2 = u.transpose() * e2;
    const Vec ve1 = v.transpose() * e1, ve2 = v.transpose() * e2;
    const Mat expect = 0.5 * (wedge(ue1, ve2) - wedge(ue2, ve1));
    CHECK((apply(t, wedge(e1, e2)) - expect).norm() < 1e-13);

    // contraction of first upper and first lower index of delta * h
    const int n = 2;
    Mat c = Mat::Zero(3, 3);
    const Tensor22 dh = kn_product(d, u);
    for (int j = 0; j < 3; ++j)
      for (int l = 0; l < 3; ++l)
        for (int i = 0; i < 3; ++i) c(j, l) += dh(i, j, i, l);
    CHECK((c - ((n - 1) / 2.0 * u + 0.5 * u.trace() * d)).norm() < 1e-13);
  }
  CHECK_THROWS_AS(kn_product(Mat::Identity(2, 2), Mat::Identity(3, 3)), Error);
}

TEST_CASE("hyperbolic curvature is -Id") {
  for (int n = 1; n <= 3; ++n) {
    auto chart = make_collar_chart(n, 1.0);
    auto g = catalog_metric("hyperbolic", {}, chart);
    for (double rho : {0.7, 0.01, 1e-5}) {
      Vec x = chart.point(0.4, rho);
      const Tensor22 id = Tensor22::identity(n + 1);
      CHECK((riemann_direct(g, x).c + id.c).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((riem_via_identity(g, x).c + id.c).norm() == 0.0);
      CHECK((ricci_via_identity(g, x) + n * Mat::Identity(n + 1, n + 1)).norm() == 0.0);
      CHECK(scalar_via_identity(g, x) == -n * (n + 1.0));
      CHECK(little_f(g, x) == 0.0);
      auto dec = riem_deviation_decomposition(g, x);
      CHECK(dec.scalar_part.c.norm() == 0.0);
      CHECK(dec.tf_hessian_part.c.norm() == 0.0);
      CHECK(dec.background_part.c.norm() == 0.0);
    }
  }
}

TEST_CASE("identity route agrees with the Christoffel route") {
  for (int n = 1; n <= 3; ++n) {
    auto chart = make_collar_chart(n, 0.5);
    for (const auto& name : catalog_names()) {
      auto g = catalog_metric(name, {}, chart);
      for (double rho : {0.9, 0.4, 0.05, 1e-3, 1e-6}) {
        Vec x = chart.point(0.8, rho);
        const Tensor22 a = riem_via_identity(g, x);
        const Tensor22 b = riemann_direct(g, x);
        CHECK(max_rel(a.c, b.c) <= 1e-6);
        const Mat ric = ricci_via_identity(g, x);
        CHECK(max_rel(ric, b.contract()) <= 1e-6);
        CHECK(std::abs(ric.trace() - scalar_via_identity(g, x)) <= 1e-10 * std::abs(ric.trace()));
        CHECK(std::abs(b.full_contraction() - scalar_via_identity(g, x)) <= 1e-6 * n * (n + 1));
      }
    }
  }
}

TEST_CASE("curvature operator symmetries") {
  auto chart = make_collar_chart(2, 1.0);
  auto g = catalog_metric("angle_dependent", {{"b", 0.3}}, chart);
  Vec x = chart.point(1.2, 0.3);
  const Tensor22 r = riemann_direct(g, x);
  const Mat gp = physical_jet(g, x).g;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) {
          CHECK(std::abs(r(i, j, k, l) + r(j, i, k, l)) < 1e-10);
          CHECK(std::abs(r(i, j, k, l) + r(i, j, l, k)) < 1e-10);
        }
  // lowering the upper pair gives a symmetric bilinear form on 2-forms
  Tensor22 low = r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          double s = 0;
          for (int k = 0; k < 3; ++k)
            for (int l = 0; l < 3; ++l) s += r(i, j, k, l) * gp(k, a) * gp(l, b);
          low(i, j, a, b) = s;
        }
  CHECK((low.c - low.c.transpose()).norm() <= 1e-9 * low.c.norm());
}

TEST_CASE("poly_perturbed deviation shrinks linearly") {
  auto chart = make_collar_chart(2, 1.0);
  auto g = catalog_metric("poly_perturbed", {{"a", 1.0}}, chart);
  const Mat id = Tensor22::identity(3).c;
  auto dev = [&](double rho) {
    Vec x = chart.point(0.0, rho);
    Tensor22 r = riemann_direct(g, x);
    r.c += id;
    return tensor_norm(r, g.jet(x).g);
  };
  const double ratio = dev(1.0) / dev(0.01);
  CHECK(ratio > 50.0);
  CHECK(ratio < 200.0);

  const Vec lad = rho_ladder(1e-1, 1e-5, 24);
  Vec s(lad.size());
  for (int i = 0; i < lad.size(); ++i) s(i) = scalar_via_identity(g, chart.point(0.0, lad(i))) + 6.0;
  CHECK(decay_exponent(lad, s).slope == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("decomposition sums to the deviation") {
  for (const auto& name : catalog_names()) {
    auto chart = make_collar_chart(2, 1.0);
    auto g = catalog_metric(name, {}, chart);
    for (double rho : {0.5, 0.02, 1e-4}) {
      Vec x = chart.point(2.0, rho);
      auto d = riem_deviation_decomposition(g, x);
      Tensor22 lhs = riem_via_identity(g, x);
      lhs.c += Tensor22::identity(3).c;
      CHECK((d.scalar_part.c + d.tf_hessian_part.c + d.background_part.c - lhs.c).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("trace-free Hessian term dominates when scalar decays to second order") {
  auto chart = make_collar_chart(2, 1.0);
  auto g = obstruction_metric(chart);
  double prev_ratio = 0;
  for (double rho : {1e-2, 1e-3, 1e-4, 1e-5}) {
    Vec x = chart.point(0.0, rho);
    auto d = riem_deviation_decomposition(g, x);
    const Mat gm = g.jet(x).g;
    const double mid = tensor_norm(d.tf_hessian_part, gm);
    const double other = tensor_norm(d.scalar_part, gm) + tensor_norm(d.background_part, gm);
    CHECK(mid > 10.0 * other);
    CHECK(mid / other > prev_ratio);
    prev_ratio = mid / other;
  }
}

TEST_CASE("little f") {
  auto chart = make_collar_chart(2, 1.0);
  for (const auto& name : catalog_names()) {
    auto g = catalog_metric(name, {}, chart);
    for (double rho : {0.3, 1e-2, 1e-4}) {
      Vec x = chart.point(0.5, rho);
      const auto d = defining_function_data(g, x);
      const double lhs = scalar_via_identity(g, x) + 6.0;
      const double rhs = -6.0 * little_f(g, x) + rho * rho * d.scalar_bar;
      CHECK(std::abs(lhs - rhs) <= 1e-8);
    }
  }

  // f = O(rho^2) exactly when the O(rho) coefficients sum to zero
  struct Case {
    std::vector<double> a, b;
    bool second_order;
  };
  const std::vector<Case> cases = {{{1, 1}, {0, 0}, false}, {{1, -1}, {0, 1}, true}, {{0, 0}, {1, 0}, true},
                                   {{2, -0.5}, {0.3, 0}, false}};
  const Vec lad = rho_ladder(1e-1, 1e-5, 24);
  for (const auto& c : cases) {
    auto g = catalog_metric("poly_perturbed", {{"a1", c.a[0]}, {"a2", c.a[1]}, {"b1", c.b[0]}, {"b2", c.b[1]}}, chart);
    Vec fv(lad.size()), rv(lad.size());
    for (int i = 0; i < lad.size(); ++i) {
      Vec x = chart.point(0.0, lad(i));
      fv(i) = little_f(g, x);
      CHECK(fv(i) == doctest::Approx(f_oracle(c.a, c.b, lad(i))).epsilon(1e-12));
      rv(i) = scalar_via_identity(g, x) + 6.0;
    }
    const bool f2 = decay_exponent(lad, fv).slope >= 1.95;
    const bool r2 = decay_exponent(lad, rv).slope >= 1.95;
    CHECK(f2 == c.second_order);
    CHECK(r2 == c.second_order);
  }
}

TEST_CASE("taylor defect") {
  auto chart = make_collar_chart(1, 1.0);
  auto hyp = catalog_metric("hyperbolic", {}, chart);
  ScalarField u1{"rho", [](const Vec& x) { return ScalarJet::coordinate(x, 1); }};
  ScalarField u2{"rho^2", [](const Vec& x) { return ipow(ScalarJet::coordinate(x, 1), 2); }};
  ScalarField u3{"rho sin log rho", [](const Vec& x) {
                   auto r = ScalarJet::coordinate(x, 1);
                   return r * sin(log(r));
                 }};
  // rho + rho^2 sin(log rho) has second-order regularity; its defect is -rho^2 (sin + cos)(log rho)
  ScalarField u4{"rho + rho^2 sin log rho", [](const Vec& x) {
                   auto r = ScalarJet::coordinate(x, 1);
                   return r + (r * r) * sin(log(r));
                 }};
  const Vec lad = rho_ladder(1e-1, 1e-6, 40);
  Vec d3(lad.size()), d4(lad.size());
  for (int i = 0; i < lad.size(); ++i) {
    Vec x = chart.point(0.1, lad(i));
    CHECK(std::abs(taylor_defect(u1, hyp, x)) <= 1e-18);
    CHECK(taylor_defect(u2, hyp, x) == doctest::Approx(-lad(i) * lad(i)));
    d3(i) = taylor_defect(u3, hyp, x);
    CHECK(d3(i) == doctest::Approx(-lad(i) * std::cos(std::log(lad(i)))));
    d4(i) = taylor_defect(u4, hyp, x);
  }
  // only first-order regularity, so the defect is O(rho) and no better
  CHECK(decay_exponent(lad, d3).slope == doctest::Approx(1.0).epsilon(0.05));
  CHECK(decay_exponent(lad, d4).slope >= 1.95);

  auto scaled = catalog_metric("hyperbolic", {{"rho_scale", 4.0}}, chart);
  Vec x = chart.point(0.0, 0.2);
  CHECK(taylor_defect(u1, scaled, x) == doctest::Approx(0.2 * (1 - 0.25)));
}

TEST_CASE("decay exponent fits") {
  const Vec lad = rho_ladder(1e-2, 1e-6, 41);
  Vec v = lad;
  auto f1 = decay_exponent(lad, v);
  CHECK(std::abs(f1.slope - 1.0) <= 1e-12);
  CHECK_FALSE(f1.log_corrected);

  for (int i = 0; i < lad.size(); ++i) v(i) = lad(i) * lad(i) * std::log(lad(i));
  auto f2 = decay_exponent(lad, v);
  CHECK(f2.slope >= 1.9);
  CHECK(f2.slope <= 2.0);
  CHECK(f2.log_corrected);
  CHECK(f2.log_power == doctest::Approx(1.0).epsilon(1e-6));

  v.setConstant(3.0);
  CHECK(std::abs(decay_exponent(lad, v).slope) <= 1e-12);

  v.setZero();
  CHECK(decay_exponent(lad, v).identically_zero);

  CHECK_THROWS_AS(decay_exponent(lad.head(5), v.head(5)), Error);
}

TEST_CASE("boundary extrapolation") {
  Vec r(3), v(3);
  r << 1e-3, 2e-3, 4e-3;
  for (int i = 0; i < 3; ++i) v(i) = 0.25 + 3 * r(i) - 7 * r(i) * r(i);
  CHECK(extrapolate_to_boundary(r, v) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("WAH equivalence report") {
  auto chart = make_collar_chart(2, 1.0);
  auto hyp = wah_equivalence_report(catalog_metric("hyperbolic", {}, chart));
  CHECK(hyp.riem.holds);
  CHECK(hyp.ric.holds);
  CHECK(hyp.scalar.holds);
  CHECK(hyp.drho.holds);

  auto scaled = wah_equivalence_report(catalog_metric("poly_perturbed", {{"rho_scale", 4.0}}, chart));
  CHECK_FALSE(scaled.riem.holds);
  CHECK_FALSE(scaled.ric.holds);
  CHECK_FALSE(scaled.scalar.holds);
  CHECK_FALSE(scaled.drho.holds);
  CHECK(scaled.scalar_ratio == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(scaled.drho2 == doctest::Approx(0.25).epsilon(1e-12));

  for (int n = 1; n <= 3; ++n) {
    auto ch = make_collar_chart(n, 0.5);
    for (const auto& name : catalog_names())
      for (double s : {1.0, 4.0, 0.5}) {
        auto rep = wah_equivalence_report(catalog_metric(name, {{"rho_scale", s}}, ch));
        CHECK(rep.consistent());
        CHECK(rep.riem.holds == (s == 1.0));
      }
  }
}

TEST_CASE("WAH catalog metrics decay at least linearly") {
  for (int n = 1; n <= 3; ++n) {
    auto chart = make_collar_chart(n, 0.5);
    for (const auto& name : catalog_names()) {
      auto g = catalog_metric(name, {}, chart);
      REQUIRE(g.wah_flag());
      const Vec lad = rho_ladder(1e-1, 1e-5, 32);
      Vec a(lad.size()), b(lad.size()), c(lad.size()), d(lad.size());
      for (int i = 0; i < lad.size(); ++i) {
        auto rep = curvature_report(g, chart.point(0.3, lad(i)));
        a(i) = rep.dev_riem;
        b(i) = rep.dev_ric;
        c(i) = rep.dev_scalar;
        d(i) = rep.drho2 - 1.0;
      }
      for (const Vec& v : {a, b, c, d}) CHECK(decay_exponent(lad, v).slope >= 0.95);
    }
  }
}
