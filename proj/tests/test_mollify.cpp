#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "wahkit/curvature.hpp"
#include "wahkit/errors.hpp"
#include "wahkit/mollify.hpp"

using namespace wahkit;

namespace {

Vec pt(double theta, double rho) { return (Vec(2) << theta, rho).finished(); }
Vec pt3(double t1, double t2, double rho) { return (Vec(3) << t1, t2, rho).finished(); }

ScalarField field(std::function<double(const Vec&)> f, bool theta_independent, int N) {
  ScalarField s;
  s.name = "test";
  s.theta_independent = theta_independent;
  // first derivatives by centered differences are enough for m = 2
  s.jet = [f, N](const Vec& x) {
    ScalarJet j = ScalarJet::constant(N, f(x));
    for (int i = 0; i < N; ++i) {
      const double h = i == N - 1 ? 1e-6 * x(i) : 1e-6;
      Vec a = x, b = x;
      a(i) += h;
      b(i) -= h;
      j.d(i) = (f(a) - f(b)) / (2 * h);
    }
    return j;
  };
  return s;
}

// first form of the convolution: int tau(u, v) psi((theta - u)/v, rho/v) v^{-2} du dv, n = 1
double first_form(const PointFn& tau, const KernelSpec& psi, double theta, double rho, int panels) {
  const double w = psi.width;
  auto inner = [&](double v) {
    return oracle::simpson([&](double u) { return tau(pt(u, v)) * kernel_value(psi, pt((theta - u) / v, rho / v)) / (v * v); },
                           theta - w * rho, theta + w * rho, panels);
  };
  return oracle::simpson(inner, rho * std::exp(-w), rho * std::exp(w), panels);
}

}  // namespace

TEST_CASE("half-space group law") {
  const Vec p = pt(0.7, 0.3);
  const Vec e = pt(0.0, 1.0);
  CHECK((group_mul(p, e) - p).norm() == 0.0);
  CHECK((group_mul(p, group_inv(p)) - e).norm() <= 1e-15);
  // dyadic coordinates make the inverse exact
  const Vec d = pt(0.75, 0.5);
  CHECK((group_mul(d, group_inv(d)) - e).norm() == 0.0);
  CHECK((group_mul(group_inv(d), d) - e).norm() == 0.0);
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> U(0.1, 2.0);
  for (int i = 0; i < 50; ++i) {
    const Vec a = pt3(U(rng), U(rng), U(rng)), b = pt3(U(rng), U(rng), U(rng)), c = pt3(U(rng), U(rng), U(rng));
    CHECK((group_mul(group_mul(a, b), c) - group_mul(a, group_mul(b, c))).norm() <= 1e-14 * 10);
  }
  CHECK_THROWS_AS(group_mul(p, pt(0.0, -1.0)), Error);
  CHECK_THROWS_AS(group_inv(pt(0.0, 0.0)), Error);
}

TEST_CASE("kernel construction") {
  for (int n = 1; n <= 3; ++n) {
    for (double w : {0.1, 0.25, 0.5}) {
      const auto k = make_kernel(n, w);
      CHECK(std::abs(k.normalization - 1.0) <= 1e-10);
      CHECK(std::abs(kernel_integral(k, 16) - kernel_integral(k, 32)) <= 1e-8);
    }
  }
  const auto k = make_kernel(1, 0.3);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  int inside = 0;
  for (int i = 0; i < 2000; ++i) {
    const Vec q = pt(0.6 * U(rng), std::exp(0.6 * U(rng)));
    if (kernel_value(k, q) != 0.0) {
      ++inside;
      CHECK(std::abs(q(0)) <= k.u_max);
      CHECK(q(1) >= k.v_min);
      CHECK(q(1) <= k.v_max);
    }
  }
  CHECK(inside > 100);
  CHECK_THROWS_AS(make_kernel(1, 2.0), Error);
  CHECK_THROWS_AS(make_kernel(1, 0.0), Error);
}

TEST_CASE("convolution of constants and powers") {
  for (int n = 1; n <= 2; ++n) {
    const auto k = make_kernel(n, 0.25);
    Vec p = Vec::Zero(n + 1);
    p(0) = 0.4;
    p(n) = 0.2;
    auto r = convolve([](const Vec&) { return 1.0; }, k, p);
    CHECK(std::abs(r.value - 1.0) <= 1e-8);
    CHECK(!r.warning);
  }
  const auto k = make_kernel(1, 0.25);
  for (double s : {0.5, 1.0, 2.5}) {
    const PointFn tau = [s](const Vec& x) { return std::pow(x(1), s); };
    std::vector<double> lam;
    for (double rho : {0.5, 0.1, 0.02}) lam.push_back(convolve(tau, k, pt(0.3, rho)).value / std::pow(rho, s));
    CHECK(std::abs(lam[1] - lam[0]) <= 1e-6 * lam[0]);
    CHECK(std::abs(lam[2] - lam[0]) <= 1e-6 * lam[0]);
    // independent quadrature of the unsubstituted integral
    const double ref = first_form(tau, k, 0.3, 0.1, 400) / std::pow(0.1, s);
    CHECK(std::abs(lam[1] - ref) <= 1e-6 * ref);
  }
  // theta-dependent field through both forms
  const PointFn tau = [](const Vec& x) { return std::cos(2 * x(0)) * x(1) + x(1) * x(1); };
  const double ref = first_form(tau, k, 0.8, 0.3, 400);
  CHECK(convolve(tau, k, pt(0.8, 0.3)).value == doctest::Approx(ref).epsilon(1e-7));
}

TEST_CASE("support of a convolution") {
  const auto k = make_kernel(1, 0.2);
  // tau supported in rho in [0.2, 0.4]
  const PointFn tau = [](const Vec& x) {
    const double z = (x(1) - 0.3) / 0.1;
    return std::abs(z) < 1 ? std::pow(1 - z * z, 3) : 0.0;
  };
  const double hi = 0.4 * std::exp(0.2) * 1.01, lo = 0.2 * std::exp(-0.2) / 1.01;
  CHECK(convolve(tau, k, pt(0.0, hi)).value == 0.0);
  CHECK(convolve(tau, k, pt(0.0, lo)).value == 0.0);
  CHECK(convolve(tau, k, pt(0.0, 0.3)).value > 0.1);
}

TEST_CASE("left-invariant derivatives commute with convolution") {
  const auto k = make_kernel(1, 0.25);
  const LeftField R{LeftField::Kind::rho_d_rho, 0}, T{LeftField::Kind::rho_d_theta, 0};
  const std::vector<Vec> pts{pt(0.1, 0.5), pt(1.0, 0.1), pt(2.0, 0.02)};
  const PointFn one = [](const Vec&) { return 1.0; };
  CHECK(convolve(one, k, pts[0], {}, false, R, 1).value == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(convolve_commutation_check(one, k, R, pts) <= 1e-10);
  const PointFn rho = [](const Vec& x) { return x(1); };
  CHECK(convolve_commutation_check(rho, k, R, pts) <= 1e-5);
  CHECK(convolve_commutation_check(rho, k, T, pts) <= 1e-5);
  // closed form: rho d_rho (lambda(1) rho) = lambda(1) rho
  const double lam1 = convolve(rho, k, pt(0.0, 1.0)).value;
  CHECK(convolve(rho, k, pt(0.0, 0.1), {}, false, R, 1).value == doctest::Approx(0.1 * lam1).epsilon(1e-10));

  std::mt19937 rng(4);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const PointFn bump = [](const Vec& x) {
    const double z = (std::log(x(1)) + 1.5) / 1.2;
    return std::abs(z) < 1 ? std::pow(1 - z * z, 5) * (1 + 0.5 * std::sin(2 * x(0))) : 0.0;
  };
  std::vector<Vec> sample;
  for (int i = 0; i < 16; ++i) sample.push_back(pt(kTwoPi * U(rng), std::exp(-0.3 - 2.4 * U(rng))));
  CHECK(convolve_commutation_check(bump, k, R, sample) <= 1e-4);
  CHECK(convolve_commutation_check(bump, k, T, sample) <= 1e-4);
}

TEST_CASE("derivative bound with a kernel-stable constant") {
  const PointFn tau = [](const Vec& x) { return std::sin(3 * std::log(x(1))) + 0.5 * std::cos(x(0)); };
  const double sup_tau = 1.5;
  const LeftField R{LeftField::Kind::rho_d_rho, 0};
  for (double w : {0.2, 0.4}) {
    const auto k = make_kernel(1, w);
    for (int order = 1; order <= 4; ++order) {
      const double bound = sup_tau * kernel_ck_norm(k, order + 1);
      double worst = 0;
      for (double rho : {0.3, 0.03, 0.003})
        worst = std::max(worst, std::abs(convolve(tau, k, pt(0.4, rho), {}, false, R, order).value));
      CHECK(worst <= bound);
    }
  }
}

TEST_CASE("regularization") {
  const Vec ladder = rho_ladder(1e-1, 1e-5, 9);
  // tau = rho with m = 1 on a two-dimensional boundary
  {
    const auto tau = field([](const Vec& x) { return x(2); }, true, 3);
    const auto tt = regularize(tau, 2, 1);
    Vec d(ladder.size());
    for (int i = 0; i < ladder.size(); ++i) d(i) = std::abs(tau(pt3(0, 0, ladder(i))) - tt(pt3(0, 0, ladder(i))));
    const auto fit = decay_exponent(ladder, d);
    CHECK(fit.slope >= 0.9);
  }
  // m = 2 reproduces the first Taylor coefficient
  {
    const auto f = [](const Vec& x) { return x(1) * (1 + 0.5 * std::cos(x(0))) + x(1) * x(1) * std::sin(x(0)); };
    const auto tt = regularize(field(f, false, 2), 1, 2);
    for (double th : {0.0, 1.0, 2.5}) {
      const double rho = 1e-5;
      CHECK(std::abs(tt(pt(th, rho)) / rho - (1 + 0.5 * std::cos(th))) <= 1e-4);
    }
    Vec d(ladder.size());
    for (int i = 0; i < ladder.size(); ++i) d(i) = std::abs(f(pt(1.0, ladder(i))) - tt(pt(1.0, ladder(i))));
    CHECK(decay_exponent(ladder, d).slope >= 1.9);
  }
  // rho sin log rho with m = 1: slope >= 0.9 and bounded second left-invariant derivatives
  {
    const auto f = [](const Vec& x) { return x(1) * std::sin(std::log(x(1))); };
    const auto tt = regularize(field(f, true, 2), 1, 1);
    Vec d(ladder.size());
    for (int i = 0; i < ladder.size(); ++i) d(i) = std::abs(f(pt(0, ladder(i))) - tt(pt(0, ladder(i))));
    CHECK(decay_exponent(ladder, d).slope >= 0.9);
    const auto k = make_kernel(1, 0.25);
    double sup2 = 0;
    for (int i = 0; i < ladder.size(); ++i)
      sup2 = std::max(sup2, std::abs(convolve(f, k, pt(0, ladder(i)), {8, false}, true,
                                              {LeftField::Kind::rho_d_rho, 0}, 2).value));
    CHECK(sup2 <= 0.1 * kernel_ck_norm(k, 2));
  }
  CHECK_THROWS_AS(regularize(field([](const Vec&) { return 0.0; }, true, 2), 1, 3), Error);
}

TEST_CASE("regularization is linear") {
  const auto f1 = [](const Vec& x) { return x(1) * std::cos(x(0)); };
  const auto f2 = [](const Vec& x) { return std::sqrt(x(1)) + x(0) * 0.1; };
  const double a = 1.7, b = -0.6;
  const auto combo = [&](const Vec& x) { return a * f1(x) + b * f2(x); };
  for (int m = 1; m <= 2; ++m) {
    const auto r1 = regularize(field(f1, false, 2), 1, m);
    const auto r2 = regularize(field(f2, false, 2), 1, m);
    const auto rc = regularize(field(combo, false, 2), 1, m);
    for (double rho : {0.3, 0.01}) {
      const Vec p = pt(0.9, rho);
      CHECK(std::abs(rc(p) - (a * r1(p) + b * r2(p))) <= 1e-10);
    }
  }
}

TEST_CASE("defect decay for a Lipschitz field") {
  const auto k = make_kernel(1, 0.25);
  const PointFn tau = [](const Vec& x) { return std::abs(x(0) - 1.0) + x(1); };
  const Vec ladder = rho_ladder(1e-1, 1e-5, 9);
  Vec d(ladder.size());
  for (int i = 0; i < ladder.size(); ++i)
    d(i) = std::abs(tau(pt(1.0, ladder(i))) - convolve(tau, k, pt(1.0, ladder(i)), {32, false}).value);
  CHECK(decay_exponent(ladder, d).slope >= 0.95);
}
