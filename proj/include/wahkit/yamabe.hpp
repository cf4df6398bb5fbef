#pragma once

#include <Eigen/SparseCore>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "wahkit/geometry.hpp"

namespace wahkit {

using SpMat = Eigen::SparseMatrix<double>;

// Uniform grid in t = -log(rho) on [t_lo, t_hi]. Node 0 is the interior end,
// the last node the boundary end.
struct YamabeGrid {
  int n = 2;
  double t_lo = 0, t_hi = 12, h = 0;
  Vec t, rho;
  int size() const { return static_cast<int>(t.size()); }
  Vec point(int i) const;
};

// The chart's t-range, extended by `pad` past the interior end.
YamabeGrid make_yamabe_grid(const CollarChart& chart, int points = 1024, double pad = 0.5);
Vec sample(const YamabeGrid& grid, const std::function<double(const Vec&)>& fn);

// gamma = psi^{4/(n-1)} g for a theta-independent g and a grid function psi, as seen by
// the discrete operators. psi = 1 is g itself.
struct DiscreteMetric {
  std::shared_ptr<const MetricField> g;
  YamabeGrid grid;
  Vec log_sigma, a;            // log of rho^{-n} sqrt(det gbar) and gbar^{rho rho} at the nodes
  Vec log_sigma_half, a_half;  // the same at t_lo + (j - 1/2) h, j = 0..size
  Vec b;                          // b^rho of the degenerate form a D^2 + b D, D = rho d_rho
  Vec scalar_g;                   // R[g] at the nodes
  Vec psi;
};

DiscreteMetric discretize(const MetricField& g, const YamabeGrid& grid);
DiscreteMetric with_factor(const DiscreteMetric& m, const Vec& psi);

// Decaying-into-the-interior exponent -s_minus of Delta - c on the hyperbolic model,
// read from the indicial module; the Robin condition is u_t = lambda u at t_lo.
double robin_lambda(int n, double c);

// Second-order conservative Delta_gamma on all nodes but the last (Dirichlet), the first
// row closed by the Robin ghost point.
SpMat laplacian_matrix(const DiscreteMetric& m, double lambda);
// Delta_g u with centered differences of the given order (2 or 4) at interior nodes;
// psi is ignored. Nodes without a full stencil use the second-order formula, and the
// two end nodes are NaN.
Vec laplacian_values(const DiscreteMetric& m, const Vec& u, int order = 4);
// R[psi^{4/(n-1)} g] from the conformal identity with the conservative Laplacian of psi.
// The ghost value at the interior end extrapolates psi; the last node keeps R[g] psi^{-4/(n-1)}.
Vec discrete_scalar(const DiscreteMetric& m);

// Throws a numerical error unless L is an M-matrix: nonpositive off-diagonals and weak diagonal dominance.
void assert_m_matrix(const SpMat& L, const std::string& what);

struct LinearSolveResult {
  Vec u;
  double residual = 0;  // sup of the discrete residual
  double lambda = 0;    // Robin exponent used
};

// Delta_gamma u - (c - kappa) u = f with u = 0 at the boundary end.
LinearSolveResult linear_solve(const DiscreteMetric& m, const Vec& kappa, double c, const Vec& f, double delta);

struct NegativeGauge {
  Vec psi;
  Vec target;  // R~ at the nodes
  Vec scalar;  // R[psi^{4/(n-1)} g] at the nodes
};

// R~ = min(R[g] - margin rho^3, -1); margin 0 leaves metrics with R <= -1 untouched.
NegativeGauge negative_gauge(const DiscreteMetric& m, double margin = 0.0);

// Little f as a scalar field whose jet carries the first rho-derivative.
ScalarField little_f_field(const MetricField& g, double rel_step = 1e-4);

struct GaugeFix {
  Vec theta;            // on the grid, >= 1/3
  ScalarField field;    // grid-sampled theta
  double slope = 0;     // fitted decay slope of R[theta^{-2} g] + n(n+1)
};

// Smooth cutoff: 1 on (-1/3, inf), 0 on (-inf, -2/3].
double cutoff_chi(double x);

struct GaugeFixOptions {
  double width = 0.25;
  int quad_order = 8;
  // Fit the decay slope on a ladder in [1e-4, 1e-1] and require >= 2 - 0.1; deviations below
  // 1e-10 n(n+1) on the whole ladder count as exact.
  bool verify = true;
};

GaugeFix gauge_fix_scalar(const MetricField& g, const YamabeGrid& grid, const GaugeFixOptions& opt = {});

struct LichProblem {
  int n = 2;
  Vec kR;      // k R[gamma]
  Vec a, b;    // transformed A and B
  double c = 0, p = 0, q1 = 0, q2 = 0, k = 0;
  double F(int i, double theta) const;
  double dF(int i, double theta) const;
};

LichProblem lich_problem(const DiscreteMetric& gamma, const Vec& A, const Vec& B);

struct Barriers {
  double u_star = -0.5;
  double N = 1.0;
  Vec lower, upper;  // max(-N rho, u_star) and N rho
};

Barriers barriers(const DiscreteMetric& gamma, const LichProblem& F, double lambda);
// 1.1 times the sampled sup of dF/du over the barrier band, floored at n + 1.
double choose_lambda(const LichProblem& F, const Barriers& b, int samples = 33);
// The same bound per node over [lo(i), hi(i)].
Vec node_lambda(const LichProblem& F, const Vec& lo, const Vec& hi, int samples = 9);

struct YamabeState {
  double lambda = 0;        // global Lambda from choose_lambda
  double lambda_final = 0;  // largest per-node Lambda of the last step
  double barrier_N = 0;
  double barrier_floor = 0;
  std::vector<Vec> iterates;
  std::vector<double> steps;      // sup |u_{i+1} - u_i|
  std::vector<double> residuals;  // sup |R[phi^{4/(n-1)} g] + n(n+1)| per iterate
  double lich_residual = 0;       // final discrete Lichnerowicz residual
  int widenings = 0;              // adaptive steps redone with a wider band
  bool converged = false;
};

struct IterateOptions {
  double tol = 1e-10;
  int max_iterations = 500;
  std::optional<Vec> initial;  // defaults to N rho; clipped to the barrier band
  bool check_monotone = true;
  bool keep_iterates = true;
  // Recompute Lambda per node from the band [lower, u_i] before every step; false keeps the global Lambda.
  bool adaptive_lambda = true;
  int lambda_samples = 9;
};

// Monotone scheme (Delta_gamma - Lambda) u_{i+1} = F(1 + u_i) - Lambda u_i; returns theta = 1 + u.
Vec monotone_iterate(const DiscreteMetric& gamma, const LichProblem& F, const Barriers& b, double robin,
                     YamabeState& state, const IterateOptions& opt = {});

struct LichnerowiczOptions {
  IterateOptions iterate;
  double gauge_margin = 0.0;
  std::optional<Vec> prefactor;  // solve on prefactor^{4/(n-1)} g instead of g
  bool polish = true;            // fourth-order defect correction on the total factor
  double polish_tol = 1e-11;
};

struct LichnerowiczResult {
  Vec phi;        // relative to the working metric (prefactor included in it)
  Vec phi_total;  // relative to g
  Vec phi_monotone;
  Vec psi;        // negative-gauge factor
  YamabeState state;
  double polish_residual = 0;
  int polish_iterations = 0;
};

// Delta_g phi = k R phi - A phi^{-q1} - B phi^{-q2} + c phi^p for nonnegative A, B.
LichnerowiczResult solve_lichnerowicz(const DiscreteMetric& g, const Vec& A, const Vec& B,
                                      const LichnerowiczOptions& opt = {});

struct YamabeOptions {
  LichnerowiczOptions lich;
  bool gauge_fix = false;
  GaugeFixOptions gauge;
  double residual_lo = 1e-3, residual_hi = 1.0;  // rho-range of the reported curvature residual
};

struct YamabeResult {
  LichnerowiczResult lich;
  std::optional<GaugeFix> gauge;
  Vec residual;  // R[phi^{4/(n-1)} g] + n(n+1) by the curvature module, NaN outside the range
  double sup_residual = 0;
};

// R[phi_total^{4/(n-1)} g] + n(n+1) by the curvature module at the grid nodes.
Vec curvature_residual(const MetricField& g, const YamabeGrid& grid, const Vec& phi_total, double rho_lo,
                       double rho_hi);

YamabeResult solve_yamabe(const MetricField& g, const YamabeGrid& grid, const YamabeOptions& opt = {});

}  // namespace wahkit
