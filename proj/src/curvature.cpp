#include "wahkit/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "wahkit/errors.hpp"

namespace wahkit {

Tensor22 kn_product(const Mat& u, const Mat& v) {
  if (u.rows() != u.cols() || v.rows() != v.cols() || u.rows() != v.rows())
    throw shape_error("kn_product needs square (1,1) tensors of equal dimension");
  const int N = static_cast<int>(u.rows());
  Tensor22 t = Tensor22::zero(N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < N; ++k)
        for (int l = 0; l < N; ++l)
          t(i, j, k, l) = 0.5 * (u(i, k) * v(j, l) + u(j, l) * v(i, k) - u(i, l) * v(j, k) - u(j, k) * v(i, l));
  return t;
}

namespace {

Mat kron(const Mat& a, const Mat& b) {
  Mat r(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return r;
}

Mat checked_inverse(const Mat& g) {
  Eigen::LDLT<Mat> ldlt(g);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0)
    throw numerical_error("metric matrix is singular or not positive definite");
  return ldlt.solve(Mat::Identity(g.rows(), g.cols()));
}

MetricJet scale_jet(const MetricJet& b, const ScalarJet& t) {
  const int N = static_cast<int>(b.g.rows());
  MetricJet j;
  j.g = t.v * b.g;
  j.dg.resize(N);
  j.ddg.assign(N, std::vector<Mat>(N));
  for (int k = 0; k < N; ++k) j.dg[k] = t.d(k) * b.g + t.v * b.dg[k];
  for (int k = 0; k < N; ++k)
    for (int l = 0; l < N; ++l)
      j.ddg[k][l] = t.dd(k, l) * b.g + t.d(k) * b.dg[l] + t.d(l) * b.dg[k] + t.v * b.ddg[k][l];
  return j;
}

}  // namespace

double tensor_norm(const Tensor22& t, const Mat& g) {
  const Mat ginv = checked_inverse(g);
  const Mat P = kron(ginv, ginv);
  const Mat Q = kron(g, g);
  const double s = (t.c.transpose() * P * t.c * Q).trace();
  return std::sqrt(std::max(s, 0.0));
}

double endo_norm(const Mat& u, const Mat& g) {
  const Mat ginv = checked_inverse(g);
  const double s = (u.transpose() * ginv * u * g).trace();
  return std::sqrt(std::max(s, 0.0));
}

std::vector<Mat> christoffel(const MetricJet& j) {
  const int N = static_cast<int>(j.g.rows());
  const Mat ginv = checked_inverse(j.g);
  std::vector<Mat> low(N, Mat::Zero(N, N));
  for (int m = 0; m < N; ++m)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) low[m](a, b) = 0.5 * (j.dg[a](m, b) + j.dg[b](m, a) - j.dg[m](a, b));
  std::vector<Mat> gam(N, Mat::Zero(N, N));
  for (int i = 0; i < N; ++i)
    for (int m = 0; m < N; ++m) gam[i] += ginv(i, m) * low[m];
  return gam;
}

Tensor22 riemann_from_jet(const MetricJet& j) {
  const int N = static_cast<int>(j.g.rows());
  const Mat ginv = checked_inverse(j.g);
  std::vector<Mat> low(N, Mat::Zero(N, N));
  for (int m = 0; m < N; ++m)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) low[m](a, b) = 0.5 * (j.dg[a](m, b) + j.dg[b](m, a) - j.dg[m](a, b));
  std::vector<Mat> gam(N, Mat::Zero(N, N));
  for (int i = 0; i < N; ++i)
    for (int m = 0; m < N; ++m) gam[i] += ginv(i, m) * low[m];

  // dgam[l][i](a,b) = d_l Gamma^i_{ab}
  std::vector<std::vector<Mat>> dgam(N, std::vector<Mat>(N, Mat::Zero(N, N)));
  for (int l = 0; l < N; ++l) {
    const Mat dginv = -ginv * j.dg[l] * ginv;
    std::vector<Mat> dlow(N, Mat::Zero(N, N));
    for (int m = 0; m < N; ++m)
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b)
          dlow[m](a, b) = 0.5 * (j.ddg[l][a](m, b) + j.ddg[l][b](m, a) - j.ddg[l][m](a, b));
    for (int i = 0; i < N; ++i)
      for (int m = 0; m < N; ++m) dgam[l][i] += dginv(i, m) * low[m] + ginv(i, m) * dlow[m];
  }

  // R^i_{jkl}: component of R(d_k, d_l) d_j.
  auto Rup = [&](int i, int jj, int k, int l) {
    double r = dgam[k][i](l, jj) - dgam[l][i](k, jj);
    for (int m = 0; m < N; ++m) r += gam[i](k, m) * gam[m](l, jj) - gam[i](l, m) * gam[m](k, jj);
    return r;
  };
  // R_{abcd} = g(R(d_a, d_b) d_d, d_c)
  Tensor22 low4 = Tensor22::zero(N);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b)
      for (int d = 0; d < N; ++d) {
        Vec col(N);
        for (int m = 0; m < N; ++m) col(m) = Rup(m, d, a, b);
        const Vec lowered = j.g * col;
        for (int c = 0; c < N; ++c) low4(a, b, c, d) = lowered(c);
      }
  Tensor22 out = low4;
  out.c = low4.c * kron(ginv, ginv);
  return out;
}

MetricJet physical_jet(const MetricField& barg, const Vec& x) {
  const int N = barg.dim();
  const double rho = x(N - 1);
  if (!(rho > 0.0)) throw domain_error("physical metric needs rho > 0");
  ScalarJet w = ScalarJet::constant(N, 1.0 / (rho * rho));
  w.d(N - 1) = -2.0 / (rho * rho * rho);
  w.dd(N - 1, N - 1) = 6.0 / (rho * rho * rho * rho);
  return scale_jet(barg.jet(x), w);
}

Tensor22 riemann_direct(const MetricField& barg, const Vec& x) { return riemann_from_jet(physical_jet(barg, x)); }

DefiningFunctionData defining_function_data(const MetricField& barg, const Vec& x) {
  const int N = barg.dim();
  const MetricJet j = barg.jet(x);
  DefiningFunctionData d;
  d.g = j.g;
  d.ginv = checked_inverse(j.g);
  const std::vector<Mat> gam = christoffel(j);
  d.hess = -gam[N - 1];  // Hess rho = -Gamma^rho_{ij} since d rho is constant
  d.hess_sharp = d.hess * d.ginv;
  d.drho2 = d.ginv(N - 1, N - 1);
  d.lap = (d.ginv.cwiseProduct(d.hess)).sum();
  d.riem_bar = riemann_from_jet(j);
  d.ric_bar = d.riem_bar.contract();
  d.scalar_bar = d.ric_bar.trace();
  return d;
}

Tensor22 riem_via_identity(const MetricField& barg, const Vec& x) {
  const int N = barg.dim();
  const double rho = x(N - 1);
  const DefiningFunctionData d = defining_function_data(barg, x);
  const Mat delta = Mat::Identity(N, N);
  return (-d.drho2) * Tensor22::identity(N) + (2.0 * rho) * kn_product(delta, d.hess_sharp) +
         (rho * rho) * d.riem_bar;
}

Mat ricci_via_identity(const MetricField& barg, const Vec& x) {
  const int N = barg.dim();
  const int n = N - 1;
  const double rho = x(N - 1);
  const DefiningFunctionData d = defining_function_data(barg, x);
  const Mat delta = Mat::Identity(N, N);
  return -n * d.drho2 * delta + rho * d.lap * delta + (n - 1) * rho * d.hess_sharp + rho * rho * d.ric_bar;
}

double scalar_via_identity(const MetricField& barg, const Vec& x) {
  const int N = barg.dim();
  const int n = N - 1;
  const double rho = x(N - 1);
  const DefiningFunctionData d = defining_function_data(barg, x);
  return -n * (n + 1) * d.drho2 + 2.0 * n * rho * d.lap + rho * rho * d.scalar_bar;
}

RiemDecomposition riem_deviation_decomposition(const MetricField& barg, const Vec& x) {
  const int N = barg.dim();
  const int n = N - 1;
  const double rho = x(N - 1);
  const DefiningFunctionData d = defining_function_data(barg, x);
  const double nn = n * (n + 1.0);
  const double scalar = -nn * d.drho2 + 2.0 * n * rho * d.lap + rho * rho * d.scalar_bar;
  const Tensor22 id = Tensor22::identity(N);
  const Mat tf = (d.hess - d.lap / (n + 1.0) * d.g) * d.ginv;
  RiemDecomposition r;
  r.scalar_part = ((scalar + nn) / nn) * id;
  r.tf_hessian_part = (2.0 * rho) * kn_product(Mat::Identity(N, N), tf);
  r.background_part = (rho * rho) * (d.riem_bar - (d.scalar_bar / nn) * id);
  return r;
}

double little_f(const MetricField& barg, const Vec& x) {
  const int N = barg.dim();
  const int n = N - 1;
  const double rho = x(N - 1);
  const DefiningFunctionData d = defining_function_data(barg, x);
  return d.drho2 - 1.0 - 2.0 / (n + 1.0) * rho * d.lap;
}

double taylor_defect(const ScalarField& u, const MetricField& barg, const Vec& x) {
  const int N = barg.dim();
  const double rho = x(N - 1);
  const ScalarJet uj = u.jet(x);
  const Mat ginv = checked_inverse(barg.jet(x).g);
  return uj.v - rho * ginv.row(N - 1).dot(uj.d);
}

CurvatureReport curvature_report(const MetricField& barg, const Vec& x) {
  const int N = barg.dim();
  const int n = N - 1;
  const double rho = x(N - 1);
  const DefiningFunctionData d = defining_function_data(barg, x);
  const Mat delta = Mat::Identity(N, N);
  CurvatureReport r;
  r.riem = (-d.drho2) * Tensor22::identity(N) + (2.0 * rho) * kn_product(delta, d.hess_sharp) +
           (rho * rho) * d.riem_bar;
  r.ric = -n * d.drho2 * delta + rho * d.lap * delta + (n - 1) * rho * d.hess_sharp + rho * rho * d.ric_bar;
  r.scalar = -n * (n + 1) * d.drho2 + 2.0 * n * rho * d.lap + rho * rho * d.scalar_bar;
  r.dev_riem = tensor_norm(r.riem + Tensor22::identity(N), d.g);
  r.dev_ric = endo_norm(r.ric + n * delta, d.g);
  r.dev_scalar = std::abs(r.scalar + n * (n + 1.0));
  r.drho2 = d.drho2;
  r.little_f = d.drho2 - 1.0 - 2.0 / (n + 1.0) * rho * d.lap;
  return r;
}

namespace {

struct LineFit {
  double slope = 0, intercept = 0, sse = 0, se = 0;
};

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const int m = static_cast<int>(x.size());
  Mat A(m, 2);
  Vec b(m);
  for (int i = 0; i < m; ++i) {
    A(i, 0) = x[i];
    A(i, 1) = 1.0;
    b(i) = y[i];
  }
  const Vec c = A.colPivHouseholderQr().solve(b);
  LineFit f;
  f.slope = c(0);
  f.intercept = c(1);
  f.sse = (A * c - b).squaredNorm();
  double mx = 0;
  for (double v : x) mx += v / m;
  double sxx = 0;
  for (double v : x) sxx += (v - mx) * (v - mx);
  f.se = m > 2 && sxx > 0 ? std::sqrt(f.sse / (m - 2) / sxx) : 0.0;
  return f;
}

}  // namespace

DecayFit decay_exponent(const Vec& rho, const Vec& values) {
  if (rho.size() != values.size()) throw shape_error("ladder and values differ in length");
  if (rho.size() < 8) throw config_error("decay fit needs at least 8 ladder points");
  if ((rho.array() <= 0.0).any()) throw domain_error("ladder values must be positive");
  const double rho_max = rho.maxCoeff();
  std::vector<double> x, y;
  std::vector<double> xa, ya;
  for (int i = 0; i < rho.size(); ++i) {
    const double v = std::abs(values(i));
    if (!(v > 0.0) || !std::isfinite(v)) continue;
    xa.push_back(std::log(rho(i)));
    ya.push_back(std::log(v));
    if (rho(i) <= rho_max / 10.0) {
      x.push_back(xa.back());
      y.push_back(ya.back());
    }
  }
  DecayFit out;
  if (xa.empty()) {
    out.identically_zero = true;
    out.slope = std::numeric_limits<double>::infinity();
    return out;
  }
  if (x.size() < 3) {  // ladder too short to drop a decade
    x = xa;
    y = ya;
  }
  if (x.size() < 2) throw numerical_error("too few nonzero values for a decay fit");
  const LineFit lf = fit_line(x, y);
  out.raw_slope = lf.slope;
  out.slope = lf.slope;
  out.width = 1.96 * lf.se;
  out.points_used = static_cast<int>(x.size());

  const double k = std::ceil(lf.slope - 1e-12);
  if (k - lf.slope > 1e-9 && k - lf.slope <= 0.1 && x.size() >= 3) {
    // log-corrected model log|v| = log c + k log rho + p log|log rho|
    std::vector<double> lx, ly;
    for (size_t i = 0; i < x.size(); ++i) {
      lx.push_back(std::log(std::abs(x[i])));
      ly.push_back(y[i] - k * x[i]);
    }
    const LineFit cf = fit_line(lx, ly);
    if (cf.sse < lf.sse) {
      out.log_corrected = true;
      out.slope = k;
      out.log_power = cf.slope;
      out.width = 1.96 * cf.se;
    }
  }
  return out;
}

double extrapolate_to_boundary(const Vec& rho, const Vec& values) {
  if (rho.size() != values.size() || rho.size() < 3) throw shape_error("need three ladder points");
  std::vector<int> idx(rho.size());
  for (int i = 0; i < rho.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return rho(a) < rho(b); });
  // Lagrange interpolation through the three smallest points, evaluated at 0.
  double r = 0;
  for (int a = 0; a < 3; ++a) {
    double w = 1.0;
    for (int b = 0; b < 3; ++b)
      if (a != b) w *= (0.0 - rho(idx[b])) / (rho(idx[a]) - rho(idx[b]));
    r += w * values(idx[a]);
  }
  return r;
}

Vec rho_ladder(double rho_hi, double rho_lo, int count) {
  if (!(rho_hi > rho_lo) || !(rho_lo > 0.0) || count < 2) throw config_error("bad ladder bounds");
  Vec r(count);
  for (int i = 0; i < count; ++i) r(i) = rho_hi * std::pow(rho_lo / rho_hi, double(i) / (count - 1));
  return r;
}

WahReport wah_equivalence_report(const MetricField& barg, double tol) {
  const int N = barg.dim();
  const int n = N - 1;
  const CollarChart& chart = barg.chart();
  const Vec ladder = rho_ladder(4e-4, 1e-4, 3);
  WahReport rep;
  double worst[4] = {0, 0, 0, 0};
  double ratio = 0, drho2 = 0;
  for (int k = 0; k < chart.theta_grid.size(); ++k) {
    Vec dr(3), dc(3), ds(3), dd(3), sc(3), d2(3);
    for (int i = 0; i < 3; ++i) {
      const CurvatureReport c = curvature_report(barg, chart.point(chart.theta_grid(k), ladder(i)));
      dr(i) = c.dev_riem;
      dc(i) = c.dev_ric;
      ds(i) = c.dev_scalar;
      dd(i) = std::abs(c.drho2 - 1.0);
      sc(i) = c.scalar / (-n * (n + 1.0));
      d2(i) = c.drho2;
    }
    const double e[4] = {extrapolate_to_boundary(ladder, dr), extrapolate_to_boundary(ladder, dc),
                         extrapolate_to_boundary(ladder, ds), extrapolate_to_boundary(ladder, dd)};
    for (int q = 0; q < 4; ++q) worst[q] = std::max(worst[q], std::abs(e[q]));
    if (k == 0) {
      ratio = extrapolate_to_boundary(ladder, sc);
      drho2 = extrapolate_to_boundary(ladder, d2);
    }
  }
  rep.riem = {worst[0] <= tol, worst[0]};
  rep.ric = {worst[1] <= tol, worst[1]};
  rep.scalar = {worst[2] <= tol, worst[2]};
  rep.drho = {worst[3] <= tol, worst[3]};
  rep.scalar_ratio = ratio;
  rep.drho2 = drho2;
  return rep;
}

}  // namespace wahkit
