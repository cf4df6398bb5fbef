#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "wahkit/jet.hpp"

namespace wahkit {

constexpr double kTwoPi = 6.283185307179586476925286766559;

using ParamMap = std::map<std::string, double>;

struct GridSpec {
  int points = 64;
  double t_max = 12.0;
  int theta_points = 8;
  double period = kTwoPi;
};

// Collar of the boundary in background coordinates (theta, rho), sampled on a
// uniform grid in t = -log(rho). Points are stored as (theta^1..theta^n, rho).
struct CollarChart {
  int n = 1;
  double rho_star = 1.0;
  double t_min = 0.0;
  double t_max = 12.0;
  Vec t_grid;
  Vec theta_grid;
  std::vector<bool> periodic;
  double period = kTwoPi;

  int dim() const { return n + 1; }
  int points() const { return static_cast<int>(t_grid.size()); }
  double dt() const { return (t_max - t_min) / (points() - 1); }
  double rho(int i) const { return std::exp(-t_grid(i)); }
  Vec rho_grid() const { return (-t_grid.array()).exp().matrix(); }
  Vec point(double theta1, double rho) const;
};

CollarChart make_collar_chart(int n, double rho_star, const GridSpec& res = {});

struct MetricJet {
  Mat g;
  std::vector<Mat> dg;                // dg[k] = d_k g
  std::vector<std::vector<Mat>> ddg;  // ddg[k][l] = d_k d_l g
};

enum class MetricKind { closed_form, grid_sampled };

// Compactified metric gbar on a collar chart.
class MetricField {
 public:
  using JetFn = std::function<MetricJet(const Vec&)>;

  MetricField(std::string name, CollarChart chart, JetFn fn, MetricKind kind, bool wah_flag,
              bool diagonal, bool theta_independent);

  const std::string& name() const { return name_; }
  const CollarChart& chart() const { return chart_; }
  MetricKind kind() const { return kind_; }
  bool wah_flag() const { return wah_; }
  bool diagonal() const { return diagonal_; }
  bool theta_independent() const { return theta_independent_; }
  int n() const { return chart_.n; }
  int dim() const { return chart_.n + 1; }

  MetricJet jet(const Vec& x) const;
  // Component matrix of d^I gbar for a multi-index I of length <= 2.
  Mat component(const Vec& x, const std::vector<int>& multi_index) const;

 private:
  std::string name_;
  CollarChart chart_;
  JetFn fn_;
  MetricKind kind_;
  bool wah_;
  bool diagonal_;
  bool theta_independent_;
};

// gbar = diag(h_1, ..., h_n, h_rho) from scalar jets.
MetricField diagonal_metric(std::string name, const CollarChart& chart, std::vector<ScalarFn> h,
                            bool wah_flag, bool theta_independent, MetricKind kind = MetricKind::closed_form);

// theta * gbar for a positive scalar field theta.
MetricField conformal_rescale(const MetricField& barg, const ScalarField& theta);

// Closed-form catalog: hyperbolic, poly_perturbed, log_oscillation, angle_dependent.
MetricField catalog_metric(const std::string& name, const ParamMap& params, const CollarChart& chart);
std::vector<std::string> catalog_names();

// Smooth step equal to 1 on (0, rho_star] and 0 on [1, inf); identically 1 when rho_star >= 1.
ScalarJet collar_blend(const Vec& x, double rho_star);

// Scalar field from samples on a uniform t-grid, differentiated by local
// five-point Lagrange interpolation (fourth order).
ScalarField grid_scalar_field(std::string name, int dim, double t0, double h, Vec values);

struct MapDomain {
  enum class Kind { hyperbolic_ball, rectangle } kind = Kind::hyperbolic_ball;
  double radius = 2.0;  // hyperbolic radius about (0, 1) for balls
};

struct MapHandle {
  std::function<Vec(const Vec&)> forward;
  std::function<Mat(const Vec&)> jacobian;
  MapDomain domain;
};

MapHandle mobius_param(const CollarChart& chart, const Vec& p0);
// Psi_r(x, y) = (r x, r y) after an affine recentering at p_hat making gbar = delta there.
MapHandle boundary_mobius_param(const CollarChart& chart, const Vec& p_hat, double r,
                                const MetricField* barg = nullptr);

double hyperbolic_distance(const Vec& p, const Vec& q);

}  // namespace wahkit
