#pragma once

#include <functional>

#include "wahkit/geometry.hpp"

namespace wahkit {

// Upper half-space group: (theta, rho) . (theta', rho') = (theta + rho theta', rho rho').
Vec group_mul(const Vec& p, const Vec& q);
Vec group_inv(const Vec& p);

// psi(q) = K(a, sigma) with q^{-1} = (a, e^sigma), K = C prod_i P(a_i / w) P(sigma / w),
// P(z) = (1 - z^2)^4 on [-1, 1]. C makes int psi(q^{-1}) dV = 1.
struct KernelSpec {
  int n = 1;
  double width = 0.25;
  double constant = 1.0;
  double normalization = 1.0;  // int psi(q^{-1}) dV, recomputed after scaling
  // support of psi in (u, v) coordinates
  double u_max = 0, v_min = 0, v_max = 0;
};

KernelSpec make_kernel(int n, double width, int quad_order = 32);
// psi at a half-space point.
double kernel_value(const KernelSpec& psi, const Vec& q);
// int psi(q^{-1}) dV by tensor Gauss-Legendre of the given order.
double kernel_integral(const KernelSpec& psi, int quad_order);

// Left-invariant vector fields rho d_rho and rho d_theta^a.
struct LeftField {
  enum class Kind { rho_d_rho, rho_d_theta } kind = Kind::rho_d_rho;
  int index = 0;  // theta index for rho_d_theta
};

struct QuadSpec {
  int order = 8;       // Gauss-Legendre nodes per dimension
  bool check = true;   // repeat at twice the order and compare
  double tol = 1e-8;   // relative agreement required by the check
};

struct ConvolveResult {
  double value = 0;
  double error_estimate = 0;
  bool warning = false;  // the two quadrature orders disagree beyond tol
};

using PointFn = std::function<double(const Vec&)>;

// (tau * X^k psi)(p) = int tau(p . w) (X^k psi)(w^{-1}) dV(w); k = 0 is the plain convolution.
// theta_independent tau lets the theta integral be done in closed form.
ConvolveResult convolve(const PointFn& tau, const KernelSpec& psi, const Vec& p, const QuadSpec& quad = {},
                        bool theta_independent = false, LeftField X = {}, int k = 0);

// max over points of |X(tau * psi) - tau * (X psi)|, the left side by centered differences with step h.
double convolve_commutation_check(const PointFn& tau, const KernelSpec& psi, LeftField X,
                                  const std::vector<Vec>& points, double h = 1e-3, const QuadSpec& quad = {});

// Sup of |X^j psi| for j <= k over both left-invariant directions, sampled on the support.
double kernel_ck_norm(const KernelSpec& psi, int k, int samples = 41);

struct RegularizeOptions {
  double width = 0.25;
  QuadSpec quad{8, false, 1e-8};
};

// Linear regularization tau -> tau~ with tau - tau~ = O(rho^m), m in {1, 2}.
// m = 2 uses the first rho-derivative carried by the jet of tau.
PointFn regularize(const ScalarField& tau, int n, int m, const RegularizeOptions& opt = {});

}  // namespace wahkit
