#include "wahkit/htensor.hpp"

#include <algorithm>
#include <cmath>

#include "wahkit/curvature.hpp"
#include "wahkit/errors.hpp"

namespace wahkit {

namespace {

struct Frame {
  MetricJet j;
  Mat ginv;
  std::vector<Mat> gam;  // gam[k](i, j) = Gamma^k_ij
  int N;
};

Frame frame(const MetricField& barg, const Vec& x) {
  Frame f;
  f.j = barg.jet(x);
  Eigen::FullPivLU<Mat> lu(f.j.g);
  if (!lu.isInvertible()) throw numerical_error("singular metric");
  f.ginv = lu.inverse();
  f.gam = christoffel(f.j);
  f.N = static_cast<int>(f.j.g.rows());
  return f;
}

// Omega data: d omega, covariant Hessian, grad omega, |d omega|^2.
struct OmegaData {
  Vec dw, grad;
  Mat hess;
  double norm2;
};

OmegaData omega_data(const Frame& f, const ScalarField& omega, const Vec& x, bool require_regular = true) {
  const ScalarJet w = omega.jet(x);
  if (w.d.size() != f.N || w.dd.rows() != f.N) throw shape_error("scalar field jet has wrong dimension");
  OmegaData o;
  o.dw = w.d;
  o.hess = w.dd;
  for (int k = 0; k < f.N; ++k) o.hess -= f.gam[k] * w.d(k);
  o.grad = f.ginv * o.dw;
  o.norm2 = o.dw.dot(o.grad);
  if (require_regular && !(o.norm2 > 1e-24)) throw numerical_error("critical point of omega: |d omega| = 0");
  return o;
}

double laplacian(const Frame& f, const OmegaData& o) { return f.ginv.cwiseProduct(o.hess).sum(); }

}  // namespace

Mat conformal_killing(const MetricField& barg, const VectorFieldFn& X, const Vec& x) {
  const Frame f = frame(barg, x);
  const VectorJet v = X(x);
  const int N = f.N;
  if (v.v.size() != N || v.d.rows() != N || v.d.cols() != N) throw shape_error("vector field has wrong dimension");
  // L_X g_ij = X^k d_k g_ij + g_kj d_i X^k + g_ik d_j X^k
  Mat lie = f.j.g * v.d + (f.j.g * v.d).transpose();
  for (int k = 0; k < N; ++k) lie += v.v(k) * f.j.dg[k];
  double div = v.d.trace();
  for (int k = 0; k < N; ++k)
    for (int l = 0; l < N; ++l) div += f.gam[k](k, l) * v.v(l);
  return 0.5 * lie - div / N * f.j.g;
}

double a_coeff(const MetricField& barg, const ScalarField& omega, const Vec& x) {
  const Frame f = frame(barg, x);
  const OmegaData o = omega_data(f, omega, x);
  const double n = f.N - 1;
  // Div(phi Y) = phi Delta omega + Y(phi), phi = |d omega|^{n-1}, Y(|d omega|^2) = 2 Hess(Y, Y)
  const double yn2 = 2.0 * o.grad.dot(o.hess * o.grad);
  return (o.norm2 * laplacian(f, o) + 0.5 * (n - 1) * yn2) / n;
}

Mat tf_hessian(const MetricField& barg, const ScalarField& omega, const Vec& x) {
  const Frame f = frame(barg, x);
  const OmegaData o = omega_data(f, omega, x, false);
  return o.hess - laplacian(f, o) / f.N * f.j.g;
}

Mat h_tensor(const MetricField& barg, const ScalarField& omega, const Vec& x) {
  const Frame f = frame(barg, x);
  const OmegaData o = omega_data(f, omega, x);
  const int N = f.N;
  const double A = a_coeff(barg, omega, x);
  const Mat g = f.j.g;
  const Mat P = o.dw * o.dw.transpose() - o.norm2 / N * g;
  const Vec hy = o.hess * o.grad;
  const Mat nabla_P = hy * o.dw.transpose() + o.dw * hy.transpose() - (2.0 / N) * o.grad.dot(hy) * g;
  return o.norm2 * o.norm2 * (o.hess - laplacian(f, o) / N * g) - o.norm2 * nabla_P + A * P;
}

Mat h_tensor_definition(const MetricField& barg, const ScalarField& omega, const Vec& x) {
  const Frame f = frame(barg, x);
  const OmegaData o = omega_data(f, omega, x);
  const int N = f.N;
  const ScalarJet w = omega.jet(x);
  // X = |d omega|^{-2} g^{ij} omega_j with partial-derivative Jacobian
  const VectorFieldFn X = [&](const Vec&) {
    Mat dgrad(N, N);  // d_k (g^{ij} omega_j)
    Vec dnorm(N);     // d_k |d omega|^2
    for (int k = 0; k < N; ++k) {
      const Mat dginv = -f.ginv * f.j.dg[k] * f.ginv;
      dgrad.col(k) = dginv * w.d + f.ginv * w.dd.col(k);
      dnorm(k) = w.d.dot(dginv * w.d) + 2.0 * w.d.dot(f.ginv * w.dd.col(k));
    }
    VectorJet v;
    v.v = o.grad / o.norm2;
    v.d = dgrad / o.norm2 - o.grad * dnorm.transpose() / (o.norm2 * o.norm2);
    return v;
  };
  const Mat D = conformal_killing(barg, X, x);
  const Mat P = o.dw * o.dw.transpose() - o.norm2 / N * f.j.g;
  return std::pow(o.norm2, 3) * D + a_coeff(barg, omega, x) * P;
}

double sym_norm(const Mat& g, const Mat& T) {
  const Mat ginv = g.inverse();
  return std::sqrt(std::max(0.0, (ginv * T * ginv * T.transpose()).trace()));
}

ScalarField defining_function(int n) {
  ScalarField s;
  s.name = "rho";
  s.theta_independent = true;
  s.jet = [n](const Vec& x) { return ScalarJet::coordinate(x, n); };
  return s;
}

ScalarField scale_field(const ScalarField& f, double c) {
  ScalarField s = f;
  s.name = f.name + "*c";
  s.jet = [f, c](const Vec& x) { return c * f.jet(x); };
  return s;
}

double InvarianceReport::max() const {
  return std::max({symmetry, trace, transverse, homogeneity, conformal, a_conformal, formula_gap});
}

namespace {

double rel_err(const Mat& got, const Mat& want) {
  const double d = (got - want).norm();
  const double s = want.norm();
  return s > 1e-12 ? d / s : d;
}

}  // namespace

InvarianceReport h_invariance_suite(const MetricField& barg, const ScalarField& omega, const ScalarField& theta,
                                    double c, const Vec& x) {
  InvarianceReport r;
  const Frame f = frame(barg, x);
  const OmegaData o = omega_data(f, omega, x);
  const Mat H = h_tensor(barg, omega, x);
  const double scale = std::max(1.0, H.norm());
  r.symmetry = (H - H.transpose()).cwiseAbs().maxCoeff() / scale;
  r.trace = std::abs(f.ginv.cwiseProduct(H).sum()) / scale;
  r.transverse = (H * o.grad).norm() / scale;
  r.homogeneity = rel_err(h_tensor(barg, scale_field(omega, c), x), std::pow(c, 5) * H);
  const MetricField tg = conformal_rescale(barg, theta);
  const double th = theta(x);
  r.conformal = rel_err(h_tensor(tg, omega, x), H / (th * th));
  const double A = a_coeff(barg, omega, x);
  const double At = a_coeff(tg, omega, x);
  r.a_conformal = std::abs(A) > 1e-12 ? std::abs(At - A / (th * th)) / std::abs(A) : std::abs(At);
  r.formula_gap = (h_tensor_definition(barg, omega, x) - H).cwiseAbs().maxCoeff() / scale;
  return r;
}

ObstructionReport boundary_obstruction_check(const MetricField& barg, double tol) {
  const int n = barg.n();
  const ScalarField rho = defining_function(n);
  const int count = 11;
  Vec ladder(count), hn(count), riem(count), scal(count);
  for (int i = 0; i < count; ++i) ladder(i) = 1e-4 * std::pow(2.0, count - 1 - i);
  for (int i = 0; i < count; ++i) {
    const Vec x = barg.chart().point(0.0, ladder(i));
    hn(i) = sym_norm(barg.jet(x).g, h_tensor(barg, rho, x));
    const CurvatureReport cr = curvature_report(barg, x);
    riem(i) = cr.dev_riem;
    scal(i) = std::abs(cr.dev_scalar);
  }
  ObstructionReport r;
  const DecayFit sf = decay_exponent(ladder, scal);
  r.scalar_slope = sf.identically_zero ? std::numeric_limits<double>::infinity() : sf.slope;
  if (!(r.scalar_slope >= 2.0 - 0.1))
    throw config_error("boundary obstruction check needs R[g] + n(n+1) = O(rho^2); fitted slope " +
                       std::to_string(sf.slope));
  r.h_boundary = std::abs(extrapolate_to_boundary(ladder, hn));
  const DecayFit rf = decay_exponent(ladder, riem);
  r.riem_vanishes = rf.identically_zero;
  r.riem_slope = rf.identically_zero ? std::numeric_limits<double>::infinity() : rf.slope;
  r.h_vanishes = r.h_boundary <= tol;
  r.fast_decay = r.riem_slope >= 2.0 - 0.05;
  return r;
}

}  // namespace wahkit
