#include "wahkit/indicial.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

#include "wahkit/curvature.hpp"
#include "wahkit/errors.hpp"

namespace wahkit {

UDOperator laplacian_ud(const MetricField& barg, double c_shift) {
  UDOperator op;
  op.name = "laplacian";
  op.n = barg.n();
  op.dim_E = 1;
  op.weight_r = 0;
  op.self_adjoint = true;
  op.l2_estimate = true;
  const int N = barg.dim();
  const int n = barg.n();
  op.coeffs = [barg, c_shift, N, n](const Vec& x) {
    const MetricJet j = barg.jet(x);
    const Mat ginv = j.g.inverse();
    const std::vector<Mat> gam = christoffel(j);
    const double rho = x(N - 1);
    UDCoeffs c;
    c.a.assign(N, std::vector<Mat>(N, Mat(1, 1)));
    c.b.assign(N, Mat(1, 1));
    for (int i = 0; i < N; ++i)
      for (int k = 0; k < N; ++k) c.a[i][k](0, 0) = ginv(i, k);
    for (int k = 0; k < N; ++k)
      c.b[k](0, 0) = -n * ginv(k, N - 1) - rho * (ginv.cwiseProduct(gam[k])).sum();
    c.c = Mat::Constant(1, 1, -c_shift);
    return c;
  };
  return op;
}

UDOperator constant_ud(int n, const Mat& abar, const Mat& bbar, const Mat& cbar, int weight_r) {
  const int e = static_cast<int>(abar.rows());
  if (abar.cols() != e || bbar.rows() != e || bbar.cols() != e || cbar.rows() != e || cbar.cols() != e)
    throw shape_error("indicial data must be square matrices of equal size");
  if (n < 1) throw config_error("boundary dimension must be positive");
  UDOperator op;
  op.name = "constant";
  op.n = n;
  op.dim_E = e;
  op.weight_r = weight_r;
  op.self_adjoint = false;
  const int N = n + 1;
  op.coeffs = [abar, bbar, cbar, N, e](const Vec&) {
    UDCoeffs c;
    c.a.assign(N, std::vector<Mat>(N, Mat::Zero(e, e)));
    c.b.assign(N, Mat::Zero(e, e));
    for (int i = 0; i < N - 1; ++i) c.a[i][i] = Mat::Identity(e, e);
    c.a[N - 1][N - 1] = abar;
    c.b[N - 1] = bbar;
    c.c = cbar;
    return c;
  };
  op.exact_trace = BoundaryTrace{abar, bbar, cbar};
  return op;
}

BoundaryTrace boundary_trace(const UDOperator& op, const Vec& p_hat, double rho0) {
  if (op.exact_trace) return *op.exact_trace;
  const int N = op.n + 1;
  if (p_hat.size() != N) throw shape_error("boundary point has wrong dimension");
  const double r[3] = {rho0, 2 * rho0, 4 * rho0};
  // Lagrange weights for evaluation at 0
  double w[3];
  for (int a = 0; a < 3; ++a) {
    w[a] = 1.0;
    for (int b = 0; b < 3; ++b)
      if (a != b) w[a] *= -r[b] / (r[a] - r[b]);
  }
  // extrapolate offsets from the first sample so rho-independent data is reproduced exactly
  std::vector<UDCoeffs> c;
  for (int a = 0; a < 3; ++a) {
    Vec x = p_hat;
    x(N - 1) = r[a];
    c.push_back(op.coeffs(x));
    if (!c[a].a[N - 1][N - 1].allFinite() || !c[a].b[N - 1].allFinite() || !c[a].c.allFinite())
      throw numerical_error("operator coefficients are not finite near the boundary");
  }
  BoundaryTrace tr{c[0].a[N - 1][N - 1], c[0].b[N - 1], c[0].c};
  for (int a = 1; a < 3; ++a) {
    tr.abar += w[a] * (c[a].a[N - 1][N - 1] - c[0].a[N - 1][N - 1]);
    tr.bbar += w[a] * (c[a].b[N - 1] - c[0].b[N - 1]);
    tr.cbar += w[a] * (c[a].c - c[0].c);
  }
  return tr;
}

CMat indicial_map(const BoundaryTrace& tr, Complex s) {
  return s * s * tr.abar.cast<Complex>() + s * tr.bbar.cast<Complex>() + tr.cbar.cast<Complex>();
}

CMat indicial_map(const UDOperator& op, Complex s, const Vec& p_hat) {
  return indicial_map(boundary_trace(op, p_hat), s);
}

Mat companion_matrix(const BoundaryTrace& tr) {
  const int e = static_cast<int>(tr.abar.rows());
  Eigen::FullPivLU<Mat> lu(tr.abar);
  if (!lu.isInvertible()) throw numerical_error("abar is not invertible; operator is not elliptic at the boundary");
  Mat A = Mat::Zero(2 * e, 2 * e);
  A.topRightCorner(e, e) = Mat::Identity(e, e);
  A.bottomLeftCorner(e, e) = -lu.solve(tr.cbar);
  A.bottomRightCorner(e, e) = -lu.solve(tr.bbar);
  return A;
}

std::vector<Exponent> characteristic_exponents(const BoundaryTrace& tr, double tol) {
  const Mat A = companion_matrix(tr);
  Eigen::EigenSolver<Mat> es(A, false);
  if (es.info() != Eigen::Success) throw numerical_error("companion eigenproblem failed");
  std::vector<Complex> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  std::sort(ev.begin(), ev.end(), [](Complex a, Complex b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  // single-linkage clustering; defective eigenvalues split by O(sqrt(eps))
  std::vector<bool> used(ev.size(), false);
  std::vector<Exponent> out;
  for (size_t i = 0; i < ev.size(); ++i) {
    if (used[i]) continue;
    std::vector<Complex> members{ev[i]};
    used[i] = true;
    bool grew = true;
    while (grew) {
      grew = false;
      for (size_t j = 0; j < ev.size(); ++j) {
        if (used[j]) continue;
        for (const Complex& m : members)
          if (std::abs(ev[j] - m) <= tol) {
            members.push_back(ev[j]);
            used[j] = true;
            grew = true;
            break;
          }
      }
    }
    Complex mean = 0;
    for (const Complex& m : members) mean += m;
    mean /= double(members.size());
    if (std::abs(mean.imag()) < 1e-12) mean.imag(0.0);
    out.push_back({mean, static_cast<int>(members.size())});
  }
  return out;
}

std::vector<Exponent> characteristic_exponents(const UDOperator& op, const Vec& p_hat) {
  return characteristic_exponents(boundary_trace(op, p_hat));
}

double indicial_radius(const std::vector<Exponent>& exps, double center_line) {
  double r = std::numeric_limits<double>::infinity();
  for (const Exponent& e : exps) r = std::min(r, std::abs(e.s.real() - center_line));
  return r;
}

double indicial_radius(const IndicialData& data) { return indicial_radius(data.exponents, data.center_line); }

IndicialData indicial_data(const UDOperator& op, const Vec& p_hat) {
  IndicialData d;
  d.exponents = characteristic_exponents(op, p_hat);
  d.center_line = op.n / 2.0 - op.weight_r;
  d.radius = indicial_radius(d.exponents, d.center_line);
  return d;
}

Window fredholm_window(const IndicialData& data, int n, std::optional<double> p) {
  double center = n / 2.0;
  if (p) {
    if (!(*p > 1.0)) throw config_error("Sobolev exponent p must exceed 1");
    center -= n / *p;
  }
  if (!(data.radius > 0.0)) return {center, center};
  return {center - data.radius, center + data.radius};
}

}  // namespace wahkit
