#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "wahkit/indicial.hpp"

namespace wahkit {

// One term rho^s (log rho)^p coeff.
struct PhgTerm {
  Complex s;
  int p = 0;
  CVec coeff;
};

constexpr int kMaxPhgTerms = 64;

// Finite polyhomogeneous expansion; unresolved content is O(rho^remainder_order) up to logs.
struct PhgExpansion {
  std::vector<PhgTerm> terms;
  double remainder_order = std::numeric_limits<double>::infinity();
  int weight_r = 0;
  int dim = 1;

  // Sort by (Re s, Im s, p), merge duplicates, drop zero coefficients and terms at or past the remainder.
  void normalize(double zero_tol = 0.0);
  CVec evaluate(double rho) const;
  // Value of (rho d_rho) applied to the expansion.
  CVec evaluate_D(double rho) const;
  bool has_log() const;
  int max_log_power(Complex s, double tol = 1e-9) const;
  // Coefficient of rho^s (log rho)^p, zero if absent.
  CVec coefficient(Complex s, int p, double tol = 1e-9) const;
};

PhgExpansion phg_zero(int dim = 1, double remainder = std::numeric_limits<double>::infinity());
PhgExpansion phg_monomial(Complex s, int p, const CVec& coeff,
                          double remainder = std::numeric_limits<double>::infinity());
PhgExpansion phg_scalar(Complex s, int p, Complex c, double remainder = std::numeric_limits<double>::infinity());

PhgExpansion phg_add(const PhgExpansion& a, const PhgExpansion& b);
PhgExpansion phg_scale(const PhgExpansion& a, Complex c);
// Cauchy product; at least one factor must be scalar (dim 1). Truncated at the smaller effective remainder.
PhgExpansion phg_mul(const PhgExpansion& a, const PhgExpansion& b);
// Terms with Re s >= order are dropped and the remainder lowered to order.
PhgExpansion phg_truncate(const PhgExpansion& a, double order);

// Exact action of abar D^2 + bbar D + cbar, D = rho d_rho.
PhgExpansion apply_indicial(const BoundaryTrace& tr, const PhgExpansion& u);

struct IndicialSolveOptions {
  double cluster_tol = kClusterTol;
  // Add homogeneous solutions so that (v, Dv) vanishes at this rho (needs a diagonalizable companion matrix).
  std::optional<double> terminal_rho;
};

// Particular solution of I(P) v = f term by term. Sources at characteristic exponents produce log-escalated terms.
PhgExpansion solve_indicial_ode(const BoundaryTrace& tr, const PhgExpansion& f, const IndicialSolveOptions& opt = {});

// Homogeneous exponents admitted by a decay threshold (Re s > threshold).
std::vector<Exponent> admitted_exponents(const BoundaryTrace& tr, double threshold);

// P = I(P) + sum_k rho^{gain_k} (a_k D^2 + b_k D + c_k), with theta-independent coefficients.
struct SeriesOperator {
  BoundaryTrace lead;
  struct Correction {
    double gain;
    Mat a, b, c;
  };
  std::vector<Correction> corrections;
  double min_gain() const;
};

PhgExpansion apply_series(const SeriesOperator& op, const PhgExpansion& u, double target_order);

struct MatchOptions {
  // resolve only the lowest exponent group per iteration instead of every group below the target
  bool one_group_per_step = false;
  int max_iterations = 200;
};

struct MatchResult {
  PhgExpansion u;
  int iterations = 0;
  std::vector<double> residual_orders;  // order of the leftover residual after each iteration
};

// Formal solution of P u = f modulo O(rho^target_order).
MatchResult expansion_match(const SeriesOperator& op, const PhgExpansion& f, double delta0, double target_order,
                            const MatchOptions& opt = {});

// Taylor data near rho = 0 of a theta-independent metric, for series coefficients of
// Delta_g = a(rho) D^2 + b(rho) D on rho-only functions and r = R[g] + n(n+1).
struct MetricExpansion {
  int n = 1;
  Vec a, b, r;  // coefficients of rho^k
  double fit_residual = 0;
};

MetricExpansion metric_expansion(const MetricField& barg, int degree = 6, double rho_fit = 0.2);
// Delta_g - shift as a series operator, truncated at `degree` corrections.
SeriesOperator laplacian_series(const MetricExpansion& m, double shift);

// Formal phi = 1 + u for Delta_g phi = k R phi - A phi^{-q1} - B phi^{-q2} + c phi^p.
// Real exponents only. A and B must be O(rho).
PhgExpansion lichnerowicz_expansion(const MetricExpansion& g, const PhgExpansion& A, const PhgExpansion& B,
                                    double target_order);

}  // namespace wahkit
