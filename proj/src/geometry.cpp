#include "wahkit/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "wahkit/errors.hpp"

namespace wahkit {

Vec CollarChart::point(double theta1, double rho) const {
  Vec x = Vec::Zero(n + 1);
  x(0) = theta1;
  x(n) = rho;
  return x;
}

CollarChart make_collar_chart(int n, double rho_star, const GridSpec& res) {
  if (n < 1 || n > 3) throw config_error("boundary dimension must be 1, 2 or 3");
  if (!(rho_star > 0.0) || rho_star > 1.0) throw config_error("rho_star must lie in (0, 1]");
  if (res.points < 2 || res.theta_points < 1 || !(res.period > 0.0))
    throw config_error("resolution must be positive (points >= 2, theta_points >= 1, period > 0)");
  CollarChart c;
  c.n = n;
  c.rho_star = rho_star;
  c.t_min = -std::log(rho_star);
  c.t_max = res.t_max;
  if (!(c.t_max > c.t_min)) throw config_error("t_max must exceed t_min = -log(rho_star)");
  c.t_grid = Vec::LinSpaced(res.points, c.t_min, c.t_max);
  c.period = res.period;
  c.theta_grid.resize(res.theta_points);
  for (int i = 0; i < res.theta_points; ++i) c.theta_grid(i) = res.period * i / res.theta_points;
  c.periodic.assign(n, true);
  return c;
}

MetricField::MetricField(std::string name, CollarChart chart, JetFn fn, MetricKind kind, bool wah_flag,
                         bool diagonal, bool theta_independent)
    : name_(std::move(name)),
      chart_(std::move(chart)),
      fn_(std::move(fn)),
      kind_(kind),
      wah_(wah_flag),
      diagonal_(diagonal),
      theta_independent_(theta_independent) {}

MetricJet MetricField::jet(const Vec& x) const {
  if (x.size() != dim()) throw shape_error("point has wrong dimension");
  if (!(x(dim() - 1) > 0.0)) throw domain_error("metric evaluated at rho <= 0");
  return fn_(x);
}

Mat MetricField::component(const Vec& x, const std::vector<int>& multi_index) const {
  if (multi_index.size() > 2) throw config_error("derivatives above order 2 are not available");
  for (int k : multi_index)
    if (k < 0 || k >= dim()) throw shape_error("multi-index out of range");
  MetricJet j = jet(x);
  if (multi_index.empty()) return j.g;
  if (multi_index.size() == 1) return j.dg[multi_index[0]];
  return j.ddg[multi_index[0]][multi_index[1]];
}

MetricField diagonal_metric(std::string name, const CollarChart& chart, std::vector<ScalarFn> h, bool wah_flag,
                            bool theta_independent, MetricKind kind) {
  const int N = chart.n + 1;
  if (static_cast<int>(h.size()) != N) throw shape_error("diagonal metric needs n+1 components");
  auto fn = [h, N](const Vec& x) {
    MetricJet j;
    j.g = Mat::Zero(N, N);
    j.dg.assign(N, Mat::Zero(N, N));
    j.ddg.assign(N, std::vector<Mat>(N, Mat::Zero(N, N)));
    for (int a = 0; a < N; ++a) {
      ScalarJet ha = h[a](x);
      j.g(a, a) = ha.v;
      for (int k = 0; k < N; ++k) {
        j.dg[k](a, a) = ha.d(k);
        for (int l = 0; l < N; ++l) j.ddg[k][l](a, a) = ha.dd(k, l);
      }
    }
    return j;
  };
  return MetricField(std::move(name), chart, fn, kind, wah_flag, true, theta_independent);
}

MetricField conformal_rescale(const MetricField& barg, const ScalarField& theta) {
  MetricField base = barg;
  auto fn = [base, theta](const Vec& x) {
    MetricJet b = base.jet(x);
    ScalarJet t = theta.jet(x);
    const int N = static_cast<int>(x.size());
    MetricJet j;
    j.g = t.v * b.g;
    j.dg.resize(N);
    j.ddg.assign(N, std::vector<Mat>(N));
    for (int k = 0; k < N; ++k) j.dg[k] = t.d(k) * b.g + t.v * b.dg[k];
    for (int k = 0; k < N; ++k)
      for (int l = 0; l < N; ++l)
        j.ddg[k][l] = t.dd(k, l) * b.g + t.d(k) * b.dg[l] + t.d(l) * b.dg[k] + t.v * b.ddg[k][l];
    return j;
  };
  const MetricKind kind = (theta.sampled || barg.kind() == MetricKind::grid_sampled) ? MetricKind::grid_sampled
                                                                                     : MetricKind::closed_form;
  return MetricField(barg.name() + "*" + theta.name, barg.chart(), fn, kind, barg.wah_flag(), barg.diagonal(),
                     barg.theta_independent() && theta.theta_independent);
}

ScalarJet collar_blend(const Vec& x, double rho_star) {
  const int N = static_cast<int>(x.size());
  ScalarJet one = ScalarJet::constant(N, 1.0);
  if (rho_star >= 1.0) return one;
  const double rho = x(N - 1);
  if (rho <= rho_star) return one;
  if (rho >= 1.0) return ScalarJet::constant(N, 0.0);
  const double w = 1.0 - rho_star;
  const double s = (rho - rho_star) / w;
  const double S = s * s * s * s * (35.0 - 84.0 * s + 70.0 * s * s - 20.0 * s * s * s);
  const double S1 = 140.0 * std::pow(s * (1.0 - s), 3);
  const double S2 = 420.0 * s * s * (1.0 - s) * (1.0 - s) * (1.0 - 2.0 * s);
  ScalarJet b = ScalarJet::constant(N, 1.0 - S);
  b.d(N - 1) = -S1 / w;
  b.dd(N - 1, N - 1) = -S2 / (w * w);
  return b;
}

namespace {

double param(const ParamMap& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

void check_keys(const std::string& name, const ParamMap& p, const std::set<std::string>& valid) {
  for (const auto& [k, v] : p) {
    if (!valid.count(k)) {
      std::ostringstream os;
      os << "unknown parameter '" << k << "' for catalog metric '" << name << "'; valid keys:";
      for (const auto& s : valid) os << ' ' << s;
      throw validation_error(os.str());
    }
  }
}

}  // namespace

std::vector<std::string> catalog_names() { return {"hyperbolic", "poly_perturbed", "log_oscillation", "angle_dependent"}; }

MetricField catalog_metric(const std::string& name, const ParamMap& params, const CollarChart& chart) {
  const int n = chart.n;
  const int N = n + 1;
  const double rs = chart.rho_star;
  const double rho_scale = param(params, "rho_scale", 1.0);
  if (!(rho_scale > 0.0)) throw validation_error("rho_scale must be positive");

  std::vector<ScalarFn> h(N);
  h[n] = [rho_scale, N](const Vec&) { return ScalarJet::constant(N, rho_scale); };
  bool theta_independent = true;

  if (name == "hyperbolic") {
    check_keys(name, params, {"rho_scale"});
    for (int a = 0; a < n; ++a) h[a] = [N](const Vec&) { return ScalarJet::constant(N, 1.0); };
  } else if (name == "poly_perturbed") {
    check_keys(name, params, {"a", "b", "a1", "a2", "a3", "b1", "b2", "b3", "rho_scale"});
    for (int a = 0; a < n; ++a) {
      const double ca = param(params, "a" + std::to_string(a + 1), param(params, "a", 1.0));
      const double cb = param(params, "b" + std::to_string(a + 1), param(params, "b", 0.0));
      h[a] = [ca, cb, rs, n](const Vec& x) {
        ScalarJet r = ScalarJet::coordinate(x, n);
        ScalarJet p = ca * r + cb * (r * r);
        return 1.0 + collar_blend(x, rs) * p;
      };
    }
  } else if (name == "log_oscillation") {
    check_keys(name, params, {"eps", "amp", "freq", "rho_scale"});
    const double eps = param(params, "eps", 0.5);
    const double amp = param(params, "amp", 1.0);
    const double freq = param(params, "freq", 1.0);
    if (!(eps > 0.0)) throw validation_error("log_oscillation needs eps > 0");
    for (int a = 0; a < n; ++a) h[a] = [N](const Vec&) { return ScalarJet::constant(N, 1.0); };
    h[0] = [eps, amp, freq, rs, n](const Vec& x) {
      ScalarJet r = ScalarJet::coordinate(x, n);
      ScalarJet p = amp * (pow(r, 1.0 + eps) * sin(freq * log(r)));
      return 1.0 + collar_blend(x, rs) * p;
    };
  } else if (name == "angle_dependent") {
    check_keys(name, params, {"a", "b", "kappa", "rho_scale"});
    const double ca = param(params, "a", 1.0);
    const double cb = param(params, "b", 0.0);
    const double kappa = param(params, "kappa", 0.5);
    theta_independent = false;
    for (int a = 0; a < n; ++a) {
      h[a] = [ca, cb, kappa, rs, n](const Vec& x) {
        ScalarJet r = ScalarJet::coordinate(x, n);
        ScalarJet th = ScalarJet::coordinate(x, 0);
        ScalarJet p = ca * (r * (1.0 + kappa * sin(th))) + cb * (r * r);
        return 1.0 + collar_blend(x, rs) * p;
      };
    }
  } else {
    std::ostringstream os;
    os << "unknown catalog metric '" << name << "'; known:";
    for (const auto& s : catalog_names()) os << ' ' << s;
    throw catalog_error(os.str());
  }

  // Positive definiteness on the chart grid and on the blend region.
  std::vector<double> rhos;
  for (int i = 0; i < chart.points(); ++i) rhos.push_back(chart.rho(i));
  for (int i = 0; i <= 16; ++i) rhos.push_back(rs + (1.0 - rs) * i / 16.0);
  for (double rho : rhos) {
    for (int k = 0; k < chart.theta_grid.size(); ++k) {
      Vec x = chart.point(chart.theta_grid(k), rho);
      for (int a = 0; a < N; ++a) {
        const double v = h[a](x).v;
        if (!(v > 0.0)) {
          std::ostringstream os;
          os << "metric '" << name << "' is not positive definite at rho=" << rho << ", theta=" << x(0);
          throw validation_error(os.str());
        }
      }
    }
  }
  return diagonal_metric(name, chart, h, rho_scale == 1.0, theta_independent);
}

namespace {

// Fornberg's finite-difference weights for derivatives 0..2 at z on nodes x.
Mat fornberg(double z, const Vec& x) {
  const int np = static_cast<int>(x.size());
  const int m = 2;
  Mat c = Mat::Zero(np, m + 1);
  double c1 = 1.0;
  double c4 = x(0) - z;
  c(0, 0) = 1.0;
  for (int i = 1; i < np; ++i) {
    const int mn = std::min(i, m);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = x(i) - z;
    for (int j = 0; j < i; ++j) {
      const double c3 = x(i) - x(j);
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k) c(i, k) = c1 * (k * c(i - 1, k - 1) - c5 * c(i - 1, k)) / c2;
        c(i, 0) = -c1 * c5 * c(i - 1, 0) / c2;
      }
      for (int k = mn; k >= 1; --k) c(j, k) = (c4 * c(j, k) - k * c(j, k - 1)) / c3;
      c(j, 0) = c4 * c(j, 0) / c3;
    }
    c1 = c2;
  }
  return c;
}

}  // namespace

ScalarField grid_scalar_field(std::string name, int dim, double t0, double h, Vec values) {
  const int np = static_cast<int>(values.size());
  if (np < 5) throw config_error("grid field needs at least 5 samples");
  auto fn = [dim, t0, h, values, np](const Vec& x) {
    const double rho = x(dim - 1);
    const double t = -std::log(rho);
    int i0 = static_cast<int>(std::lround((t - t0) / h)) - 2;
    i0 = std::clamp(i0, 0, np - 5);
    Vec nodes(5);
    for (int j = 0; j < 5; ++j) nodes(j) = t0 + (i0 + j) * h;
    Mat w = fornberg(t, nodes);
    const Vec f = values.segment(i0, 5);
    const double f0 = w.col(0).dot(f);
    const double ft = w.col(1).dot(f);
    const double ftt = w.col(2).dot(f);
    ScalarJet j = ScalarJet::constant(dim, f0);
    j.d(dim - 1) = -ft / rho;
    j.dd(dim - 1, dim - 1) = (ftt + ft) / (rho * rho);
    return j;
  };
  return ScalarField{std::move(name), fn, true, true};
}

MapHandle mobius_param(const CollarChart& chart, const Vec& p0) {
  const int N = chart.n + 1;
  if (p0.size() != N) throw shape_error("center has wrong dimension");
  const double rho0 = p0(N - 1);
  if (!(rho0 > 0.0)) throw domain_error("Mobius center must have rho0 > 0");
  MapHandle m;
  m.forward = [p0, rho0, N](const Vec& z) {
    Vec out = p0;
    for (int i = 0; i < N - 1; ++i) out(i) = p0(i) + rho0 * z(i);
    out(N - 1) = rho0 * z(N - 1);
    return out;
  };
  m.jacobian = [rho0, N](const Vec&) { return Mat(rho0 * Mat::Identity(N, N)); };
  m.domain = {MapDomain::Kind::hyperbolic_ball, 2.0};
  return m;
}

MapHandle boundary_mobius_param(const CollarChart& chart, const Vec& p_hat, double r, const MetricField* barg) {
  const int N = chart.n + 1;
  if (p_hat.size() != N) throw shape_error("boundary point has wrong dimension");
  if (!(r > 0.0)) throw domain_error("dilation r must be positive");
  if (r >= chart.rho_star && chart.rho_star < 1.0) throw domain_error("dilation r must be smaller than rho_star");
  if (r >= 1.0) throw domain_error("dilation r must be smaller than 1");
  Mat J = Mat::Identity(N, N);
  if (barg) {
    Vec q = p_hat;
    q(N - 1) = 1e-14;  // boundary trace; closed forms may be singular exactly at rho = 0
    Mat g = barg->jet(q).g;
    const int n = N - 1;
    Mat gtt = g.topLeftCorner(n, n);
    Vec gtr = g.topRightCorner(n, 1);
    Eigen::SelfAdjointEigenSolver<Mat> es(gtt);
    J.topLeftCorner(n, n) = es.operatorInverseSqrt();
    J.topRightCorner(n, 1) = -gtt.ldlt().solve(gtr);
  }
  Vec base = p_hat;
  base(N - 1) = 0.0;
  MapHandle m;
  m.forward = [base, J, r](const Vec& z) { return Vec(base + J * (r * z)); };
  m.jacobian = [J, r](const Vec&) { return Mat(r * J); };
  m.domain = {MapDomain::Kind::rectangle, 1.0};
  return m;
}

double hyperbolic_distance(const Vec& p, const Vec& q) {
  const int N = static_cast<int>(p.size());
  const double arg = 1.0 + (p - q).squaredNorm() / (2.0 * p(N - 1) * q(N - 1));
  return std::acosh(std::max(arg, 1.0));
}

}  // namespace wahkit
