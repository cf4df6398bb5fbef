#pragma once

#include <string>
#include <vector>

#include "wahkit/geometry.hpp"

namespace wahkit {

// A (2,2) tensor T_{ij}^{kl} acting on 2-forms, stored as an N^2 x N^2 matrix
// with row index i*N+j (lower) and column index k*N+l (upper).
template <typename Scalar>
struct Tensor22T {
  using MatS = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  int dim = 0;
  MatS c;

  static Tensor22T zero(int n) { return {n, MatS::Zero(n * n, n * n)}; }
  static Tensor22T identity(int n) {
    Tensor22T t = zero(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) {
          t(i, j, i, j) += Scalar(1);
          t(i, j, j, i) -= Scalar(1);
        }
    return t;
  }

  Scalar& operator()(int i, int j, int k, int l) { return c(i * dim + j, k * dim + l); }
  Scalar operator()(int i, int j, int k, int l) const { return c(i * dim + j, k * dim + l); }

  // Ric_i^k = sum_j T_{ij}^{kj}; returned with row = lower index.
  MatS contract() const {
    MatS r = MatS::Zero(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int k = 0; k < dim; ++k)
        for (int j = 0; j < dim; ++j) r(i, k) += (*this)(i, j, k, j);
    return r;
  }
  Scalar full_contraction() const { return contract().trace(); }
};

template <typename Scalar>
Tensor22T<Scalar> operator+(const Tensor22T<Scalar>& a, const Tensor22T<Scalar>& b) {
  return {a.dim, a.c + b.c};
}
template <typename Scalar>
Tensor22T<Scalar> operator-(const Tensor22T<Scalar>& a, const Tensor22T<Scalar>& b) {
  return {a.dim, a.c - b.c};
}
template <typename Scalar>
Tensor22T<Scalar> operator*(Scalar s, const Tensor22T<Scalar>& a) {
  return {a.dim, s * a.c};
}

using Tensor22 = Tensor22T<double>;

// (1,1) tensors are N x N matrices u with u(i,k) = u_i^k.
Tensor22 kn_product(const Mat& u, const Mat& v);

// Frobenius norm with all indices contracted by g (conformally invariant for (2,2) and (1,1) tensors).
double tensor_norm(const Tensor22& t, const Mat& g);
double endo_norm(const Mat& u, const Mat& g);

// Riemann operator of an arbitrary metric from its two-jet.
Tensor22 riemann_from_jet(const MetricJet& j);
// Christoffel symbols Gamma^i_{jk}, indexed gamma[i](j,k).
std::vector<Mat> christoffel(const MetricJet& j);

// Jet of g = rho^{-2} gbar.
MetricJet physical_jet(const MetricField& barg, const Vec& x);

Tensor22 riemann_direct(const MetricField& barg, const Vec& x);

struct DefiningFunctionData {
  double drho2;  // |d rho|^2_gbar
  double lap;    // Delta_gbar rho
  Mat hess;      // Hess_gbar rho, covariant
  Mat hess_sharp;
  Mat g;
  Mat ginv;
  Tensor22 riem_bar;
  Mat ric_bar;
  double scalar_bar;
};
DefiningFunctionData defining_function_data(const MetricField& barg, const Vec& x);

Tensor22 riem_via_identity(const MetricField& barg, const Vec& x);
Mat ricci_via_identity(const MetricField& barg, const Vec& x);
double scalar_via_identity(const MetricField& barg, const Vec& x);

struct RiemDecomposition {
  Tensor22 scalar_part;
  Tensor22 tf_hessian_part;
  Tensor22 background_part;
};
RiemDecomposition riem_deviation_decomposition(const MetricField& barg, const Vec& x);

double little_f(const MetricField& barg, const Vec& x);

// u - rho <d rho, d u>_gbar
double taylor_defect(const ScalarField& u, const MetricField& barg, const Vec& x);

struct CurvatureReport {
  Tensor22 riem;
  Mat ric;
  double scalar = 0;
  double dev_riem = 0;
  double dev_ric = 0;
  double dev_scalar = 0;
  double drho2 = 0;
  double little_f = 0;
};
CurvatureReport curvature_report(const MetricField& barg, const Vec& x);

struct DecayFit {
  double slope = 0;
  double width = 0;  // 95% half-width of the linear fit
  double raw_slope = 0;
  bool identically_zero = false;
  bool log_corrected = false;
  double log_power = 0;
  int points_used = 0;
};

// Least-squares slope of log|v| against log rho, ignoring the largest decade.
DecayFit decay_exponent(const Vec& rho, const Vec& values);

// Quadratic extrapolation to rho = 0 from the three smallest ladder points.
double extrapolate_to_boundary(const Vec& rho, const Vec& values);

// Geometric ladder of `count` values from rho_hi down to rho_lo.
Vec rho_ladder(double rho_hi, double rho_lo, int count);

struct WahCondition {
  bool holds = false;
  double witness = 0;  // extrapolated deviation at rho = 0
};

struct WahReport {
  WahCondition riem, ric, scalar, drho;
  double scalar_ratio = 0;  // extrapolated R[g] / (-n(n+1))
  double drho2 = 0;         // extrapolated |d rho|^2
  bool consistent() const {
    return riem.holds == ric.holds && ric.holds == scalar.holds && scalar.holds == drho.holds;
  }
};
WahReport wah_equivalence_report(const MetricField& barg, double tol = 1e-4);

}  // namespace wahkit
