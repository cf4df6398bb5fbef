#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wahkit/geometry.hpp"

namespace wahkit {

// k derivatives, Holder exponent alpha or Sobolev exponent p (not both), weight delta.
// weight_r is covariant minus contravariant rank of the bundle.
struct NormSpec {
  int k = 0;
  double alpha = 0.0;
  std::optional<double> p;
  double delta = 0.0;
  int weight_r = 0;
};

void validate(const NormSpec& spec);

// Tensor field by its components in background coordinates. Contravariant indices come
// first, then covariant ones; the flattened index is lexicographic, first index slowest.
struct TensorField {
  std::string name;
  int dim = 2;
  int contravariant = 0;
  int covariant = 0;
  bool theta_independent = true;
  std::function<Vec(const Vec&)> components;

  int rank() const { return contravariant + covariant; }
  int weight() const { return covariant - contravariant; }
  int size() const;
  Vec operator()(const Vec& x) const;
};

TensorField scalar_tensor(const ScalarField& f, int dim);
TensorField scalar_tensor(std::string name, int dim, std::function<double(const Vec&)> f, bool theta_independent);
TensorField d_rho(int n);
TensorField scaled(const TensorField& u, double c);
TensorField product(const TensorField& u, const TensorField& v);

// Levi-Civita covariant derivative of barh; the new covariant index is the last one.
// Partial derivatives are centered differences with step fd_rel * rho.
TensorField covariant_derivative(const MetricField& barh, const TensorField& u, double fd_rel = 1e-3);

struct CoverChart {
  Vec center;
  MapHandle map;
  double multiplicity = 1.0;  // lattice charts of the uniformly locally finite cover this one stands for
};

// Mobius charts centered on rho-levels spaced like the chart's t-grid, from rho_hi down to
// (but excluding) rho_lo. The boundary torus is sampled at theta_samples centers taken from the
// chart's theta grid; each stands for its share of the (period / rho)^n lattice charts at that level.
std::vector<CoverChart> mobius_cover(const CollarChart& chart, double rho_hi, double rho_lo, int theta_samples);

struct SampleOptions {
  int samples = 48;      // quasi-random points in B_2
  double fd_step = 1e-2;  // difference step in B_2 coordinates
};

// Deterministic sample of B_2 (hyperbolic radius 2 about (0, ..., 0, 1)); the center is the first point.
std::vector<Vec> ball_samples(int dim, int count);

// sup over the cover of the C^{k,alpha}(B_2) norm of Phi^*(rho^{-delta} u), with the seminorm taken
// over sample pairs at hyperbolic distance in [0.1, 1].
double weighted_holder_norm(const TensorField& u, const NormSpec& spec, const std::vector<CoverChart>& cover,
                            const SampleOptions& opt = {});

// (sum_i mult_i rho(p_i)^{-delta p} ||Phi_i^* u||^p_{H^{k,p}(B_2)})^{1/p}, the integrals over B_2
// by averaging over the sample.
double weighted_sobolev_norm(const TensorField& u, const NormSpec& spec, const std::vector<CoverChart>& cover,
                             const SampleOptions& opt = {});

// sum_{l <= m} ||barnabla^l u||_{C^{k-l,alpha}_{r+l}}.
double script_c_norm(const TensorField& u, int k, double alpha, int m, const MetricField& barh,
                     const std::vector<CoverChart>& cover, const SampleOptions& opt = {});

// Estimates at successive refinements. Infinite when they grow by 2x or more three times in a
// row, or when the last three steps all grow (by 5% or more) at a rate of at least |log rho|^{1/2}.
struct RefinementTrace {
  std::vector<double> rho_lo;
  std::vector<double> values;
  bool diverges = false;
};

bool divergence_detected(const std::vector<double>& rho_lo, const std::vector<double>& values);

// Runs `norm` on covers reaching one more decade toward the boundary each time, starting
// with [rho_hi / 10, rho_hi). `accumulate` combines a decade into the running value
// (max for sup norms, sum of p-th powers for Sobolev).
RefinementTrace refine_toward_boundary(const CollarChart& chart, double rho_hi, int decades, int theta_samples,
                                       const std::function<double(const std::vector<CoverChart>&)>& norm,
                                       const std::function<double(double, double)>& accumulate,
                                       const std::function<double(double)>& finish = nullptr);

struct Membership {
  std::string space;  // "C^{k,a}_d", "script C^{k,a;m}", "C^{k,a}(Mbar)"
  int k = 0;
  double alpha = 0;
  double delta = 0;
  int m = 0;
  bool member = false;
  std::vector<double> estimates;  // witness values per refinement
};

struct RegularityReport {
  std::vector<Membership> weighted;  // C^{k,alpha}_delta(M)
  std::vector<Membership> script;    // script C^{k,alpha;m}(M)
  std::vector<Membership> closure;   // C^{k,alpha}(Mbar)
  bool extends_c0 = false;
  bool lipschitz = false;
  bool derivative_extends = false;
  double conormal_delta = 0;
  bool in_a_delta = false;      // A_delta = intersection of rho^t A, t < delta
  bool in_rho_delta_a = false;  // rho^delta A
  bool polyhomogeneous = false;
  int phg_order = 0;              // terms of the shortest exact finite expansion found
  double phg_leading = 0;         // smallest real part among its exponents
  double phg_residual = 0;
};

struct ClassifyOptions {
  double rho_hi = 1e-1;
  int decades = 6;
  std::vector<int> holder_k = {0, 1, 2};
  std::vector<double> holder_delta = {0.0};
  double alpha = 0.5;
  std::vector<int> script_m = {1, 2};
  std::vector<int> script_k = {1, 2};
  double conormal_delta = 0.0;
  double conormal_gap = 0.25;  // A_delta is tested with t = delta - gap
  int conormal_order = 2;
  int phg_max_terms = 6;
  double phg_tol = 1e-8;
  SampleOptions sample;
};

RegularityReport classify_regularity(const TensorField& u, const MetricField& barh, const ClassifyOptions& opt = {});

// Scalar test fields: rho_power (s), rho_sin_log (eps, freq, var: rho^eps sin(freq (1 + var cos theta^1) log rho)),
// rho_log_power (s, l: rho^s (log rho)^l), and the covector d_rho.
TensorField field_catalog(const std::string& name, const ParamMap& params, int n);
std::vector<std::string> field_catalog_names();

}  // namespace wahkit
