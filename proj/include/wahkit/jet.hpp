#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>

namespace wahkit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Value, gradient and Hessian of a scalar function at a point.
template <typename Scalar>
struct Jet {
  using VecS = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatS = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Scalar v{0};
  VecS d;
  MatS dd;

  Jet() = default;
  Jet(Scalar value, VecS grad, MatS hess) : v(value), d(std::move(grad)), dd(std::move(hess)) {}

  static Jet constant(int dim, Scalar c) { return Jet(c, VecS::Zero(dim), MatS::Zero(dim, dim)); }
  static Jet coordinate(const VecS& x, int i) {
    Jet j = constant(static_cast<int>(x.size()), x(i));
    j.d(i) = Scalar(1);
    return j;
  }
  int dim() const { return static_cast<int>(d.size()); }
};

template <typename Scalar>
Jet<Scalar> operator+(const Jet<Scalar>& a, const Jet<Scalar>& b) {
  return {a.v + b.v, a.d + b.d, a.dd + b.dd};
}
template <typename Scalar>
Jet<Scalar> operator-(const Jet<Scalar>& a, const Jet<Scalar>& b) {
  return {a.v - b.v, a.d - b.d, a.dd - b.dd};
}
template <typename Scalar>
Jet<Scalar> operator-(const Jet<Scalar>& a) {
  return {-a.v, -a.d, -a.dd};
}
template <typename Scalar>
Jet<Scalar> operator*(const Jet<Scalar>& a, const Jet<Scalar>& b) {
  return {a.v * b.v, a.d * b.v + b.d * a.v,
          a.dd * b.v + b.dd * a.v + a.d * b.d.transpose() + b.d * a.d.transpose()};
}
template <typename Scalar>
Jet<Scalar> operator*(Scalar c, const Jet<Scalar>& a) {
  return {c * a.v, c * a.d, c * a.dd};
}
template <typename Scalar>
Jet<Scalar> operator+(Scalar c, const Jet<Scalar>& a) {
  return {c + a.v, a.d, a.dd};
}

// Chain rule for f(u) given f(u), f'(u), f''(u).
template <typename Scalar>
Jet<Scalar> compose(const Jet<Scalar>& u, Scalar f0, Scalar f1, Scalar f2) {
  return {f0, f1 * u.d, f2 * u.d * u.d.transpose() + f1 * u.dd};
}

template <typename Scalar>
Jet<Scalar> sin(const Jet<Scalar>& u) {
  using std::cos;
  using std::sin;
  return compose(u, sin(u.v), cos(u.v), -sin(u.v));
}
template <typename Scalar>
Jet<Scalar> cos(const Jet<Scalar>& u) {
  using std::cos;
  using std::sin;
  return compose(u, cos(u.v), -sin(u.v), -cos(u.v));
}
template <typename Scalar>
Jet<Scalar> exp(const Jet<Scalar>& u) {
  using std::exp;
  const Scalar e = exp(u.v);
  return compose(u, e, e, e);
}
template <typename Scalar>
Jet<Scalar> log(const Jet<Scalar>& u) {
  using std::log;
  return compose(u, log(u.v), Scalar(1) / u.v, Scalar(-1) / (u.v * u.v));
}
template <typename Scalar>
Jet<Scalar> pow(const Jet<Scalar>& u, Scalar a) {
  using std::pow;
  return compose(u, pow(u.v, a), a * pow(u.v, a - 1), a * (a - 1) * pow(u.v, a - 2));
}
template <typename Scalar>
Jet<Scalar> ipow(const Jet<Scalar>& u, int k) {
  Jet<Scalar> r = Jet<Scalar>::constant(u.dim(), Scalar(1));
  for (int i = 0; i < k; ++i) r = r * u;
  return r;
}

using ScalarJet = Jet<double>;
using ScalarFn = std::function<ScalarJet(const Vec&)>;

// A scalar field on background coordinates (theta^1..theta^n, rho) with exact
// second-order jets. `sampled` marks fields reconstructed from grid data.
struct ScalarField {
  std::string name;
  ScalarFn jet;
  bool theta_independent = true;
  bool sampled = false;

  double operator()(const Vec& x) const { return jet(x).v; }
};

}  // namespace wahkit
