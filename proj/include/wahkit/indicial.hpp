#pragma once

#include <complex>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wahkit/geometry.hpp"

namespace wahkit {

using Complex = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

// Coefficients of a^{ij} (rho d_i)(rho d_j) + b^i rho d_i + c acting on sections of a rank dim_E bundle.
struct UDCoeffs {
  std::vector<std::vector<Mat>> a;  // a[i][j], dim_E x dim_E
  std::vector<Mat> b;
  Mat c;
};

struct BoundaryTrace {
  Mat abar;  // a^{rho rho} at rho = 0
  Mat bbar;  // b^rho at rho = 0
  Mat cbar;
};

struct UDOperator {
  std::string name;
  int n = 1;
  int dim_E = 1;
  int weight_r = 0;
  bool self_adjoint = false;
  // asserted, never verified: the basic L2 estimate of the operator
  bool l2_estimate = false;
  std::function<UDCoeffs(const Vec&)> coeffs;
  // set when the boundary data is known exactly (constant-coefficient operators)
  std::optional<BoundaryTrace> exact_trace;
};

// Delta_g - c_shift for g = rho^{-2} gbar.
UDOperator laplacian_ud(const MetricField& barg, double c_shift);
// Operator with rho-independent coefficients whose rho-rho data is (abar, bbar, cbar) and no tangential terms.
UDOperator constant_ud(int n, const Mat& abar, const Mat& bbar, const Mat& cbar, int weight_r = 0);

// Boundary data by quadratic extrapolation of the coefficients at rho0 * {1, 2, 4}.
BoundaryTrace boundary_trace(const UDOperator& op, const Vec& p_hat, double rho0 = 1e-8);

CMat indicial_map(const BoundaryTrace& tr, Complex s);
CMat indicial_map(const UDOperator& op, Complex s, const Vec& p_hat);

struct Exponent {
  Complex s;
  int mult = 1;
};

struct IndicialData {
  std::vector<Exponent> exponents;
  double radius = 0;
  double center_line = 0;
};

constexpr double kClusterTol = 1e-7;

// Companion matrix [[0, I], [-abar^{-1} cbar, -abar^{-1} bbar]].
Mat companion_matrix(const BoundaryTrace& tr);
std::vector<Exponent> characteristic_exponents(const BoundaryTrace& tr, double tol = kClusterTol);
std::vector<Exponent> characteristic_exponents(const UDOperator& op, const Vec& p_hat);

double indicial_radius(const std::vector<Exponent>& exps, double center_line);
double indicial_radius(const IndicialData& data);
IndicialData indicial_data(const UDOperator& op, const Vec& p_hat);

struct Window {
  double lo = 0;
  double hi = 0;
  bool empty() const { return !(hi > lo); }
  bool contains(double d) const { return d > lo && d < hi; }
};

// Admissible weights: |delta - n/2| < R (Holder) or |delta + n/p - n/2| < R (Sobolev, p given).
Window fredholm_window(const IndicialData& data, int n, std::optional<double> p = std::nullopt);

}  // namespace wahkit
