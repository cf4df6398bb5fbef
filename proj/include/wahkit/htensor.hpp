#pragma once

#include <functional>

#include "wahkit/geometry.hpp"

namespace wahkit {

// Value and Jacobian d(i, k) = d_k X^i of a vector field at a point.
struct VectorJet {
  Vec v;
  Mat d;
};
using VectorFieldFn = std::function<VectorJet(const Vec&)>;

// D X = 1/2 L_X gbar - (Div X / (n+1)) gbar, symmetric and trace-free.
Mat conformal_killing(const MetricField& barg, const VectorFieldFn& X, const Vec& x);

// A(omega) = (1/n) |d omega|^{3-n} Div[|d omega|^{n-1} grad omega].
double a_coeff(const MetricField& barg, const ScalarField& omega, const Vec& x);

// H(omega) from the three-term Hessian form.
Mat h_tensor(const MetricField& barg, const ScalarField& omega, const Vec& x);
// H(omega) = |d omega|^6 D(|d omega|^{-2} grad omega) + A(omega)(d omega (x) d omega - |d omega|^2 gbar/(n+1)).
Mat h_tensor_definition(const MetricField& barg, const ScalarField& omega, const Vec& x);

// Trace-free Hessian Hess omega - (Delta omega / (n+1)) gbar.
Mat tf_hessian(const MetricField& barg, const ScalarField& omega, const Vec& x);

// gbar-norm of a covariant 2-tensor.
double sym_norm(const Mat& g, const Mat& T);

// The defining function rho of the chart as a scalar field.
ScalarField defining_function(int n);
ScalarField scale_field(const ScalarField& f, double c);

struct InvarianceReport {
  double symmetry = 0;
  double trace = 0;
  double transverse = 0;    // |H(grad omega, .)|
  double homogeneity = 0;   // relative error of H(c omega) = c^5 H(omega)
  double conformal = 0;     // relative error of H_{theta gbar} = theta^{-2} H_gbar
  double a_conformal = 0;   // relative error of A_{theta gbar} = theta^{-2} A_gbar
  double formula_gap = 0;   // |definition form - Hessian form|
  double max() const;
};

InvarianceReport h_invariance_suite(const MetricField& barg, const ScalarField& omega, const ScalarField& theta,
                                    double c, const Vec& x);

struct ObstructionReport {
  double h_boundary = 0;     // extrapolated |H(rho)| at rho = 0
  double riem_slope = 0;     // decay slope of |Riem + Id|
  bool riem_vanishes = false;
  double scalar_slope = 0;   // decay slope of R + n(n+1), checked >= 2 - 0.1
  bool h_vanishes = false;
  bool fast_decay = false;   // riem_slope >= 2 - 0.05
  bool consistent() const { return h_vanishes == fast_decay; }
};

// Needs R + n(n+1) = O(rho^2); otherwise a configuration error.
ObstructionReport boundary_obstruction_check(const MetricField& barg, double tol = 1e-4);

}  // namespace wahkit
