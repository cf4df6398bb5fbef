#include "wahkit/yamabe.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "wahkit/curvature.hpp"
#include "wahkit/errors.hpp"
#include "wahkit/indicial.hpp"
#include "wahkit/mollify.hpp"

namespace wahkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sup_abs(const Vec& v, int begin, int end) {
  double s = 0;
  for (int i = begin; i < end; ++i) s = std::max(s, std::abs(v(i)));
  return s;
}

void require_lich_dim(int n) {
  if (n < 2) throw config_error("the Lichnerowicz and Yamabe solvers need n >= 2 (exponent 4/(n-1))");
}

IndicialData hyperbolic_indicial(int n, double c) {
  BoundaryTrace tr{Mat::Constant(1, 1, 1.0), Mat::Constant(1, 1, -n), Mat::Constant(1, 1, -c)};
  IndicialData d;
  d.exponents = characteristic_exponents(tr);
  d.center_line = n / 2.0;
  d.radius = indicial_radius(d.exponents, d.center_line);
  return d;
}

std::string where(const YamabeGrid& grid, int i) {
  std::ostringstream os;
  os << "rho=" << grid.rho(i) << " (node " << i << ")";
  return os.str();
}

// Solve a sparse system, reporting singular factorizations as numerical errors.
Vec sparse_solve(const SpMat& A, const Vec& rhs, const std::string& what) {
  Eigen::SparseLU<SpMat> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw numerical_error(what + ": factorization failed");
  Vec x = lu.solve(rhs);
  if (lu.info() != Eigen::Success) throw numerical_error(what + ": solve failed");
  return x;
}

// Replace the last row by the Dirichlet identity row and add `shift` to the diagonal of the others.
SpMat close_system(const SpMat& L, const Vec& shift) {
  const int M = static_cast<int>(L.rows());
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < L.outerSize(); ++k)
    for (SpMat::InnerIterator it(L, k); it; ++it)
      if (it.row() < M - 1) trip.emplace_back(it.row(), it.col(), it.value());
  for (int i = 0; i < M - 1; ++i) trip.emplace_back(i, i, shift(i));
  trip.emplace_back(M - 1, M - 1, 1.0);
  SpMat A(M, M);
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

// Rethrow with the pipeline stage prepended to the tag.
template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    std::string what = e.what();
    const std::string prefix = e.tag() + ": ";
    if (what.rfind(prefix, 0) == 0) what = what.substr(prefix.size());
    throw Error(e.error_class(), std::string("[") + name + "] " + e.tag(), what);
  }
}

}  // namespace

Vec YamabeGrid::point(int i) const {
  Vec x = Vec::Zero(n + 1);
  x(n) = rho(i);
  return x;
}

YamabeGrid make_yamabe_grid(const CollarChart& chart, int points, double pad) {
  if (points < 16) throw config_error("Yamabe grid needs at least 16 points");
  if (!(pad >= 0.0)) throw config_error("grid padding must be nonnegative");
  YamabeGrid g;
  g.n = chart.n;
  g.t_lo = chart.t_min - pad;
  g.t_hi = chart.t_max;
  g.h = (g.t_hi - g.t_lo) / (points - 1);
  g.t = Vec::LinSpaced(points, g.t_lo, g.t_hi);
  g.rho = (-g.t.array()).exp().matrix();
  return g;
}

Vec sample(const YamabeGrid& grid, const std::function<double(const Vec&)>& fn) {
  Vec v(grid.size());
  for (int i = 0; i < grid.size(); ++i) v(i) = fn(grid.point(i));
  return v;
}

DiscreteMetric discretize(const MetricField& g, const YamabeGrid& grid) {
  if (!g.theta_independent()) throw config_error("the Yamabe solver needs a theta-independent metric");
  if (g.n() != grid.n) throw shape_error("grid and metric dimensions differ");
  const int n = grid.n;
  const int M = grid.size();
  DiscreteMetric m;
  m.g = std::make_shared<const MetricField>(g);
  m.grid = grid;
  m.log_sigma.resize(M);
  m.a.resize(M);
  m.b.resize(M);
  m.scalar_g.resize(M);
  m.log_sigma_half.resize(M + 1);
  m.a_half.resize(M + 1);
  m.psi = Vec::Ones(M);
  auto node = [&](double t, double& ls, double& a) {
    Vec x = Vec::Zero(n + 1);
    x(n) = std::exp(-t);
    const MetricJet j = g.jet(x);
    const double det = j.g.determinant();
    if (!(det > 0.0)) throw numerical_error("metric is not positive definite at rho=" + std::to_string(x(n)));
    ls = n * t + 0.5 * std::log(det);
    a = j.g.inverse()(n, n);
    return j;
  };
  for (int i = 0; i < M; ++i) {
    const MetricJet j = node(grid.t(i), m.log_sigma(i), m.a(i));
    const Mat ginv = j.g.inverse();
    const std::vector<Mat> gam = christoffel(j);
    m.b(i) = -n * ginv(n, n) - grid.rho(i) * ginv.cwiseProduct(gam[n]).sum();
    m.scalar_g(i) = curvature_report(g, grid.point(i)).scalar;
  }
  for (int jh = 0; jh <= M; ++jh) node(grid.t_lo + (jh - 0.5) * grid.h, m.log_sigma_half(jh), m.a_half(jh));
  return m;
}

DiscreteMetric with_factor(const DiscreteMetric& m, const Vec& psi) {
  if (psi.size() != m.grid.size()) throw shape_error("conformal factor has the wrong length");
  if (!(psi.minCoeff() > 0.0)) throw domain_error("conformal factor must be positive");
  if (m.grid.n < 2 && (psi.array() != 1.0).any()) require_lich_dim(m.grid.n);
  DiscreteMetric out = m;
  out.psi = psi;
  return out;
}

double robin_lambda(int n, double c) {
  const IndicialData d = hyperbolic_indicial(n, c);
  double s_minus = std::numeric_limits<double>::infinity();
  for (const Exponent& e : d.exponents) s_minus = std::min(s_minus, e.s.real());
  return -s_minus;
}

namespace {

// Off-diagonal weights of the conservative operator at node i: w_i c_plus (u_{i+1} - u_i) - w_i c_minus (u_i - u_{i-1}).
struct Stencil {
  double w, cp, cm;
};

Stencil stencil(const DiscreteMetric& m, int i, const Vec& psi) {
  const int n = m.grid.n;
  const int M = m.grid.size();
  const double h2 = m.grid.h * m.grid.h;
  const double pm = i > 0 ? psi(i - 1) : psi(i);
  const double pp = i + 1 < M ? psi(i + 1) : psi(i);
  Stencil s;
  s.w = n >= 2 ? std::pow(psi(i), -2.0 * (n + 1) / (n - 1)) : 1.0;
  s.cp = std::exp(m.log_sigma_half(i + 1) - m.log_sigma(i)) * m.a_half(i + 1) * psi(i) * pp / h2;
  s.cm = std::exp(m.log_sigma_half(i) - m.log_sigma(i)) * m.a_half(i) * psi(i) * pm / h2;
  return s;
}

}  // namespace

SpMat laplacian_matrix(const DiscreteMetric& m, double lambda) {
  const int M = m.grid.size();
  const double h = m.grid.h;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(3 * M);
  for (int i = 0; i < M - 1; ++i) {
    const Stencil s = stencil(m, i, m.psi);
    if (i == 0) {
      // ghost u_{-1} = u_1 - 2 h lambda u_0
      trip.emplace_back(0, 1, s.w * (s.cp + s.cm));
      trip.emplace_back(0, 0, -s.w * (s.cp + s.cm * (1.0 + 2.0 * h * lambda)));
    } else {
      trip.emplace_back(i, i + 1, s.w * s.cp);
      trip.emplace_back(i, i - 1, s.w * s.cm);
      trip.emplace_back(i, i, -s.w * (s.cp + s.cm));
    }
  }
  SpMat L(M, M);
  L.setFromTriplets(trip.begin(), trip.end());
  return L;
}

Vec laplacian_values(const DiscreteMetric& m, const Vec& u, int order) {
  if (order != 2 && order != 4) throw config_error("difference order must be 2 or 4");
  const int M = m.grid.size();
  if (u.size() != M) throw shape_error("grid function has the wrong length");
  const double h = m.grid.h;
  Vec out = Vec::Constant(M, kNaN);
  for (int i = 1; i < M - 1; ++i) {
    double ut, utt;
    if (order == 4 && i >= 2 && i <= M - 3) {
      ut = (-u(i + 2) + 8 * u(i + 1) - 8 * u(i - 1) + u(i - 2)) / (12 * h);
      utt = (-u(i + 2) + 16 * u(i + 1) - 30 * u(i) + 16 * u(i - 1) - u(i - 2)) / (12 * h * h);
    } else {
      ut = (u(i + 1) - u(i - 1)) / (2 * h);
      utt = (u(i + 1) - 2 * u(i) + u(i - 1)) / (h * h);
    }
    // D = rho d_rho = -d_t
    out(i) = m.a(i) * utt - m.b(i) * ut;
  }
  return out;
}

Vec discrete_scalar(const DiscreteMetric& m) {
  const int n = m.grid.n;
  require_lich_dim(n);
  const int M = m.grid.size();
  const double p = (n + 3.0) / (n - 1.0);
  const Vec& psi = m.psi;
  const Vec ones = Vec::Ones(M);
  Vec R(M);
  for (int i = 0; i < M - 1; ++i) {
    const Stencil s = stencil(m, i, ones);
    double lap;
    if (i == 0) {
      const double dt = (-3 * psi(0) + 4 * psi(1) - psi(2)) / (2 * m.grid.h);
      const double ghost = psi(1) - 2 * m.grid.h * dt;
      lap = s.cp * (psi(1) - psi(0)) - s.cm * (psi(0) - ghost);
    } else {
      lap = s.cp * (psi(i + 1) - psi(i)) - s.cm * (psi(i) - psi(i - 1));
    }
    R(i) = (-(4.0 * n / (n - 1)) * lap + m.scalar_g(i) * psi(i)) * std::pow(psi(i), -p);
  }
  R(M - 1) = m.scalar_g(M - 1) * std::pow(psi(M - 1), 1.0 - p);
  return R;
}

void assert_m_matrix(const SpMat& L, const std::string& what) {
  const int M = static_cast<int>(L.rows());
  Vec diag = Vec::Zero(M), off = Vec::Zero(M);
  for (int k = 0; k < L.outerSize(); ++k)
    for (SpMat::InnerIterator it(L, k); it; ++it) {
      if (it.row() == it.col()) {
        diag(it.row()) += it.value();
      } else {
        if (it.value() > 0.0)
          throw numerical_error(what + ": positive off-diagonal entry in row " + std::to_string(it.row()));
        off(it.row()) -= it.value();
      }
    }
  for (int i = 0; i < M; ++i)
    if (!(diag(i) > 0.0) || diag(i) < off(i) * (1.0 - 1e-13))
      throw numerical_error(what + ": not diagonally dominant in row " + std::to_string(i) +
                            " (stability failure; refine the grid)");
}

LinearSolveResult linear_solve(const DiscreteMetric& m, const Vec& kappa, double c, const Vec& f, double delta) {
  const int n = m.grid.n;
  const int M = m.grid.size();
  if (kappa.size() != M || f.size() != M) throw shape_error("kappa and f must live on the grid");
  if (!(c > -n * n / 4.0)) throw domain_error("linear_solve needs c > -n^2/4");
  for (int i = 0; i < M; ++i)
    if (c - kappa(i) < -1e-14) throw domain_error("c - kappa must be nonnegative; fails at " + where(m.grid, i));
  const double c_boundary = c - kappa(M - 1);
  const Window win = fredholm_window(hyperbolic_indicial(n, c_boundary), n);
  if (!win.contains(delta)) {
    std::ostringstream os;
    os << "weight delta=" << delta << " outside the Fredholm window (" << win.lo << ", " << win.hi << ")";
    throw domain_error(os.str());
  }
  LinearSolveResult r;
  r.lambda = robin_lambda(n, std::max(0.0, c - kappa(0)));
  const SpMat L = laplacian_matrix(m, r.lambda);
  const SpMat A = close_system(L, -(c - kappa.array()).matrix());
  assert_m_matrix(-A.topRows(M - 1), "linear_solve");
  Vec rhs = f;
  rhs(M - 1) = 0.0;
  r.u = sparse_solve(A, rhs, "linear_solve");
  r.residual = (A * r.u - rhs).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, f.cwiseAbs().maxCoeff());
  if (!(r.residual <= 1e-10 * scale))
    throw numerical_error("linear_solve residual " + std::to_string(r.residual) + " above 1e-10");
  return r;
}

NegativeGauge negative_gauge(const DiscreteMetric& m, double margin) {
  const int n = m.grid.n;
  require_lich_dim(n);
  if (!m.g->wah_flag()) throw config_error("negative_gauge needs a WAH-flagged metric");
  if (margin < 0.0) throw config_error("negative_gauge margin must be nonnegative");
  const int M = m.grid.size();
  const double k = (n - 1.0) / (4.0 * n);
  const Vec R = discrete_scalar(m);
  NegativeGauge out;
  out.target.resize(M);
  Vec kappa(M);
  for (int i = 0; i < M; ++i) {
    const double r3 = std::pow(m.grid.rho(i), 3);
    out.target(i) = std::min(R(i) - margin * r3, -1.0);
    kappa(i) = k * (R(i) - out.target(i));
  }
  const LinearSolveResult ls = linear_solve(m, -kappa, 0.0, kappa, 1.0);
  out.psi = Vec::Ones(M) + ls.u;
  for (int i = 0; i < M; ++i)
    if (!(out.psi(i) > 0.0)) throw numerical_error("negative gauge factor not positive at " + where(m.grid, i));
  out.scalar = discrete_scalar(with_factor(m, m.psi.cwiseProduct(out.psi)));
  for (int i = 0; i < M; ++i)
    if (!(out.scalar(i) < 0.0))
      throw numerical_error("negative gauge failed: R >= 0 at " + where(m.grid, i));
  return out;
}

ScalarField little_f_field(const MetricField& g, double rel_step) {
  const int N = g.dim();
  ScalarField s;
  s.name = "f[" + g.name() + "]";
  s.theta_independent = g.theta_independent();
  s.jet = [g, N, rel_step](const Vec& x) {
    ScalarJet j = ScalarJet::constant(N, little_f(g, x));
    for (int k = 0; k < N; ++k) {
      const double step = k == N - 1 ? rel_step * x(k) : rel_step;
      Vec xp = x, xm = x;
      xp(k) += step;
      xm(k) -= step;
      j.d(k) = (little_f(g, xp) - little_f(g, xm)) / (2 * step);
    }
    return j;
  };
  return s;
}

double cutoff_chi(double x) {
  auto s = [](double y) { return y > 0.0 ? std::exp(-1.0 / y) : 0.0; };
  const double y = (x + 2.0 / 3.0) * 3.0;
  const double a = s(y), b = s(1.0 - y);
  return a / (a + b);
}

GaugeFix gauge_fix_scalar(const MetricField& g, const YamabeGrid& grid, const GaugeFixOptions& opt) {
  if (!g.theta_independent()) throw config_error("gauge_fix_scalar samples theta-independent metrics only");
  const int n = g.n();
  RegularizeOptions ro;
  ro.width = opt.width;
  ro.quad = QuadSpec{opt.quad_order, false, 1e-8};
  const PointFn fhat = regularize(little_f_field(g), n, 2, ro);
  GaugeFix out;
  out.theta.resize(grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    const double w = -(n + 1.0) / (4.0 * n) * fhat(grid.point(i));
    out.theta(i) = 1.0 + cutoff_chi(w) * w;
  }
  out.field = grid_scalar_field("theta", n + 1, grid.t_lo, grid.h, out.theta);
  if (!opt.verify) return out;

  const Vec inv2 = out.theta.array().pow(-2.0).matrix();
  const MetricField gt = conformal_rescale(g, grid_scalar_field("theta^-2", n + 1, grid.t_lo, grid.h, inv2));
  const Vec ladder = rho_ladder(1e-1, 1e-4, 13);
  Vec dev(ladder.size());
  for (int i = 0; i < ladder.size(); ++i) {
    Vec x = Vec::Zero(n + 1);
    x(n) = ladder(i);
    dev(i) = curvature_report(gt, x).dev_scalar;
  }
  // a deviation at rounding level everywhere (theta = 1 on an exact metric) has no slope to fit
  if (dev.maxCoeff() <= 1e-10 * n * (n + 1.0)) {
    out.slope = std::numeric_limits<double>::infinity();
    return out;
  }
  const DecayFit fit = decay_exponent(ladder, dev);
  out.slope = fit.identically_zero ? std::numeric_limits<double>::infinity() : fit.slope;
  if (!(out.slope >= 2.0 - 0.1))
    throw numerical_error("gauge fix left R + n(n+1) decaying with slope " + std::to_string(out.slope));
  return out;
}

double LichProblem::F(int i, double theta) const {
  return kR(i) * theta - a(i) * std::pow(theta, -q1) - b(i) * std::pow(theta, -q2) + c * std::pow(theta, p);
}

double LichProblem::dF(int i, double theta) const {
  return kR(i) + q1 * a(i) * std::pow(theta, -q1 - 1) + q2 * b(i) * std::pow(theta, -q2 - 1) +
         c * p * std::pow(theta, p - 1);
}

LichProblem lich_problem(const DiscreteMetric& gamma, const Vec& A, const Vec& B) {
  const int n = gamma.grid.n;
  require_lich_dim(n);
  const int M = gamma.grid.size();
  if (A.size() != M || B.size() != M) throw shape_error("A and B must live on the grid");
  for (int i = 0; i < M; ++i)
    if (A(i) < 0.0 || B(i) < 0.0) throw config_error("A and B must be nonnegative; fails at " + where(gamma.grid, i));
  LichProblem F;
  F.n = n;
  F.k = (n - 1.0) / (4.0 * n);
  F.c = (n * n - 1.0) / 4.0;
  F.p = (n + 3.0) / (n - 1.0);
  F.q1 = (3.0 * n + 1.0) / (n - 1.0);
  F.q2 = (n + 1.0) / (n - 1.0);
  F.kR = F.k * discrete_scalar(gamma);
  F.a = A.cwiseProduct(gamma.psi.array().pow(-4.0 * (n + 1) / (n - 1)).matrix());
  F.b = B.cwiseProduct(gamma.psi.array().pow(-2.0 * (n + 2) / (n - 1)).matrix());
  return F;
}

Barriers barriers(const DiscreteMetric& gamma, const LichProblem& F, double lambda) {
  const int M = gamma.grid.size();
  const Vec& rho = gamma.grid.rho;
  for (int i = 0; i < M - 1; ++i)
    if (!(F.kR(i) < 0.0)) throw barrier_error("R[gamma] must be negative; fails at " + where(gamma.grid, i));
  const SpMat L = laplacian_matrix(gamma, lambda);
  Barriers b;

  // u_* in (-1, 0) with F(1 + u_*) <= 0
  bool found = false;
  int worst = 0;
  for (int k = 1; k <= 52 && !found; ++k) {
    const double u = -1.0 + std::ldexp(1.0, -k);
    found = true;
    for (int i = 0; i < M - 1; ++i)
      if (F.F(i, 1.0 + u) > 0.0) {
        found = false;
        worst = i;
        break;
      }
    if (found) b.u_star = u;
  }
  if (!found) throw barrier_error("no admissible floor u_* in (-1, 0); F(1 + u) > 0 at " + where(gamma.grid, worst));

  auto holds = [&](double N, int& bad) {
    const Vec up = N * rho;
    const Vec Lup = L * up;
    const Vec Ldn = -Lup;
    for (int i = 0; i < M - 1; ++i) {
      const double rhs = F.F(i, 1.0 + up(i));
      if (Lup(i) > rhs + 1e-12 * (std::abs(Lup(i)) + std::abs(rhs))) {
        bad = i;
        return false;
      }
      if (rho(i) < 1.0 / N) {
        const double rl = F.F(i, 1.0 - up(i));
        if (Ldn(i) < rl - 1e-12 * (std::abs(Ldn(i)) + std::abs(rl))) {
          bad = i;
          return false;
        }
      }
    }
    return true;
  };
  int bad = 0;
  double N = 1.0;
  int doublings = 0;
  while (!holds(N, bad)) {
    if (++doublings > 60) throw barrier_error("no barrier constant N found; inequality fails at " + where(gamma.grid, bad));
    N *= 2.0;
  }
  b.N = N;
  b.upper = N * rho;
  b.lower = (-N * rho).cwiseMax(b.u_star);
  return b;
}

Vec node_lambda(const LichProblem& F, const Vec& lo, const Vec& hi, int samples) {
  if (samples < 2) throw config_error("Lambda selection needs at least two samples");
  const int M = static_cast<int>(hi.size());
  Vec lam = Vec::Constant(M, F.n + 1.0);
  for (int i = 0; i < M - 1; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < samples; ++s) {
      const double u = lo(i) + (hi(i) - lo(i)) * s / (samples - 1.0);
      best = std::max(best, F.dF(i, 1.0 + u));
    }
    lam(i) = std::max(1.1 * best, F.n + 1.0);
  }
  return lam;
}

double choose_lambda(const LichProblem& F, const Barriers& b, int samples) {
  const Vec lam = node_lambda(F, b.lower, b.upper, samples);
  return lam.head(lam.size() - 1).maxCoeff();
}

Vec monotone_iterate(const DiscreteMetric& gamma, const LichProblem& F, const Barriers& b, double robin,
                     YamabeState& state, const IterateOptions& opt) {
  const int n = gamma.grid.n;
  const int M = gamma.grid.size();
  const double Lam = state.lambda;
  if (!(Lam > 0.0)) throw config_error("monotone_iterate needs Lambda > 0");
  state.barrier_N = b.N;
  state.barrier_floor = b.u_star;
  state.iterates.clear();
  state.steps.clear();
  state.residuals.clear();
  state.converged = false;
  state.widenings = 0;

  const SpMat L = laplacian_matrix(gamma, robin);
  Eigen::SparseLU<SpMat> lu;
  auto factor = [&](const Vec& lam) {
    const SpMat A = close_system(L, -lam);
    assert_m_matrix(-A.topRows(M - 1), "monotone_iterate");
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw numerical_error("monotone_iterate: factorization failed");
  };
  Vec lam = Vec::Constant(M, Lam);
  if (!opt.adaptive_lambda) factor(lam);

  Vec u = opt.initial ? *opt.initial : b.upper;
  if (u.size() != M) throw shape_error("initial iterate has the wrong length");
  u = u.cwiseMax(b.lower).cwiseMin(b.upper);
  if (opt.keep_iterates) state.iterates.push_back(u);

  const double p = F.p;
  auto residuals = [&](const Vec& v, double& curv, double& lich) {
    const Vec Lv = L * v;
    curv = 0;
    lich = 0;
    for (int i = 0; i < M - 1; ++i) {
      const double th = 1.0 + v(i);
      const double R = (-(4.0 * n / (n - 1)) * Lv(i) + (F.kR(i) / F.k) * th) * std::pow(th, -p);
      curv = std::max(curv, std::abs(R + n * (n + 1.0)));
      lich = std::max(lich, std::abs(Lv(i) - F.F(i, th)));
    }
  };

  Vec rhs(M);
  Vec prev = u;
  bool first = true;
  // without monotonicity the iterate may rise, so the band reaches the upper barrier
  auto hi = [&]() -> const Vec& { return opt.check_monotone ? u : b.upper; };
  auto solve_step = [&](const Vec& lo) {
    if (opt.adaptive_lambda) {
      lam = node_lambda(F, lo, hi(), opt.lambda_samples).cwiseMin(Lam);
      factor(lam);
    }
    for (int i = 0; i < M - 1; ++i) rhs(i) = F.F(i, 1.0 + u(i)) - lam(i) * u(i);
    rhs(M - 1) = 0.0;
    return Vec(lu.solve(rhs));
  };
  for (int it = 0; it < opt.max_iterations; ++it) {
    Vec next;
    if (opt.adaptive_lambda && opt.check_monotone) {
      // Lambda only has to dominate the chord slope of F over [u_{i+1}, u_i]: guess a band below u
      // from the last decrement and widen it until the new iterate stays inside
      double width = first ? 1e-2 : 4.0 * (prev - u).cwiseAbs().maxCoeff() + 1e-9;
      for (;;) {
        const Vec lo = (u - Vec::Constant(M, width)).cwiseMax(b.lower);
        next = solve_step(lo);
        const bool full = (lo.array() <= b.lower.array()).all();
        if (full || !((next - lo).array() < 0.0).head(M - 1).any()) break;
        ++state.widenings;
        width *= 4.0;
      }
    } else {
      next = solve_step(b.lower);
    }
    first = false;
    for (int i = 0; i < M - 1; ++i) {
      if (opt.check_monotone && next(i) > u(i) + 1e-12)
        throw numerical_error("discretization failure: iterates increase at " + where(gamma.grid, i) +
                              "; refine the grid");
      if (next(i) > b.upper(i) + 1e-12 || next(i) < b.lower(i) - 1e-12)
        throw numerical_error("discretization failure: iterate leaves the barrier band at " + where(gamma.grid, i) +
                              "; refine the grid");
    }
    prev = u;
    const double step = (next - u).cwiseAbs().maxCoeff();
    u = next;
    double curv, lich;
    residuals(u, curv, lich);
    state.steps.push_back(step);
    state.residuals.push_back(curv);
    state.lich_residual = lich;
    if (opt.keep_iterates) state.iterates.push_back(u);
    state.lambda_final = lam.head(M - 1).maxCoeff();
    if (step <= opt.tol && lich <= 10.0 * opt.tol) {
      state.converged = true;
      break;
    }
  }
  if (!state.converged)
    throw numerical_error("monotone iteration did not converge in " + std::to_string(opt.max_iterations) +
                          " steps");
  return Vec::Ones(M) + u;
}

namespace {

// Fourth-order defect correction for Delta_g phi = F_g(phi) with the second-order Jacobian.
// The Robin ghost acts on phi - 1.
Vec polish(const DiscreteMetric& m, const LichProblem& Fg, double robin, Vec phi, double tol, double& residual,
           int& iterations) {
  const int M = m.grid.size();
  const SpMat L = laplacian_matrix(m, robin);
  // the boundary value of the input is kept (it carries the prefactor)
  const double edge = phi(M - 1);
  auto defect = [&](const Vec& v) {
    const Vec u = v - Vec::Ones(M);
    const Vec L2 = L * u;
    const Vec L4 = laplacian_values(m, v, 4);
    Vec d(M);
    for (int i = 0; i < M - 1; ++i) {
      const double lap = (i >= 2 && i <= M - 3) ? L4(i) : L2(i);
      d(i) = lap - Fg.F(i, v(i));
    }
    d(M - 1) = v(M - 1) - edge;
    return d;
  };
  Vec d = defect(phi);
  residual = sup_abs(d, 0, M);
  iterations = 0;
  for (; iterations < 40 && residual > tol; ++iterations) {
    Vec shift(M);
    for (int i = 0; i < M; ++i) shift(i) = -Fg.dF(i, phi(i));
    const Vec delta = sparse_solve(close_system(L, shift), -d, "polish");
    phi += delta;
    d = defect(phi);
    const double r = sup_abs(d, 0, M);
    const double dn = delta.cwiseAbs().maxCoeff();
    residual = r;
    if (dn < 1e-14) break;
  }
  for (int i = 0; i < M; ++i)
    if (!(phi(i) > 0.0)) throw numerical_error("polished factor not positive at " + where(m.grid, i));
  if (!(residual <= 1e-8)) throw numerical_error("polish stalled at residual " + std::to_string(residual));
  return phi;
}

}  // namespace

LichnerowiczResult solve_lichnerowicz(const DiscreteMetric& g, const Vec& A, const Vec& B,
                                      const LichnerowiczOptions& opt) {
  const int n = g.grid.n;
  require_lich_dim(n);
  const int M = g.grid.size();
  const Vec pre = opt.prefactor ? *opt.prefactor : Vec::Ones(M);
  const DiscreteMetric base = with_factor(g, Vec::Ones(M));
  const DiscreteMetric working = with_factor(g, pre);
  const double robin = robin_lambda(n, n + 1.0);

  LichnerowiczResult r;
  const NegativeGauge ng = stage("negative_gauge", [&] { return negative_gauge(working, opt.gauge_margin); });
  r.psi = ng.psi;
  const DiscreteMetric gamma = with_factor(g, pre.cwiseProduct(ng.psi));
  // A, B are given against g; against the working metric they pick up the prefactor weights
  const LichProblem F = stage("transform", [&] { return lich_problem(gamma, A, B); });
  const Barriers b = stage("barriers", [&] { return barriers(gamma, F, robin); });
  r.state.lambda = stage("lambda", [&] { return choose_lambda(F, b); });
  const Vec theta = stage("iterate", [&] { return monotone_iterate(gamma, F, b, robin, r.state, opt.iterate); });
  r.phi_monotone = ng.psi.cwiseProduct(theta);
  r.phi_total = pre.cwiseProduct(r.phi_monotone);
  if (opt.polish) {
    const LichProblem Fg = lich_problem(base, A, B);
    r.phi_total = stage("polish", [&] {
      return polish(base, Fg, robin, r.phi_total, opt.polish_tol, r.polish_residual, r.polish_iterations);
    });
  }
  r.phi = r.phi_total.cwiseQuotient(pre);
  if (!(r.phi.minCoeff() > 0.0)) throw numerical_error("[solve_lichnerowicz] phi is not positive");
  return r;
}

Vec curvature_residual(const MetricField& g, const YamabeGrid& grid, const Vec& phi_total, double rho_lo,
                       double rho_hi) {
  const int n = grid.n;
  require_lich_dim(n);
  const Vec w = phi_total.array().pow(4.0 / (n - 1)).matrix();
  const MetricField gt = conformal_rescale(g, grid_scalar_field("phi^(4/(n-1))", n + 1, grid.t_lo, grid.h, w));
  Vec out = Vec::Constant(grid.size(), kNaN);
  for (int i = 0; i < grid.size(); ++i) {
    const double rho = grid.rho(i);
    if (rho < rho_lo || rho > rho_hi) continue;
    out(i) = curvature_report(gt, grid.point(i)).scalar + n * (n + 1.0);
  }
  return out;
}

YamabeResult solve_yamabe(const MetricField& g, const YamabeGrid& grid, const YamabeOptions& opt) {
  require_lich_dim(grid.n);
  const int n = grid.n;
  const int M = grid.size();
  const DiscreteMetric m = discretize(g, grid);
  YamabeResult r;
  LichnerowiczOptions lo = opt.lich;
  if (opt.gauge_fix) {
    r.gauge = stage("gauge_fix", [&] { return gauge_fix_scalar(g, grid, opt.gauge); });
    // theta^{-2} g = (theta^{-(n-1)/2})^{4/(n-1)} g
    lo.prefactor = r.gauge->theta.array().pow(-(n - 1) / 2.0).matrix();
  }
  r.lich = solve_lichnerowicz(m, Vec::Zero(M), Vec::Zero(M), lo);
  r.residual = curvature_residual(g, grid, r.lich.phi_total, opt.residual_lo, opt.residual_hi);
  r.sup_residual = 0;
  for (int i = 0; i < M; ++i)
    if (!std::isnan(r.residual(i))) r.sup_residual = std::max(r.sup_residual, std::abs(r.residual(i)));
  return r;
}

}  // namespace wahkit
