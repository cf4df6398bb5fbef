#include "wahkit/mollify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "wahkit/errors.hpp"

namespace wahkit {

namespace {

struct GaussRule {
  Vec x, w;
};

// Gauss-Legendre nodes on [-1, 1] by Newton iteration on P_q.
GaussRule gauss_legendre(int q) {
  static std::map<int, GaussRule> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(q);
  if (it != cache.end()) return it->second;
  GaussRule r{Vec(q), Vec(q)};
  for (int i = 0; i < q; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (q + 0.5));
    double dp = 1;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1, p1 = z;
      for (int k = 2; k <= q; ++k) {
        const double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (q == 1) {
        p1 = z;
        p0 = 1;
      }
      dp = q * (z * p1 - p0) / (z * z - 1);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    r.x(i) = z;
    r.w(i) = 2 / ((1 - z * z) * dp * dp);
  }
  cache.emplace(q, r);
  return r;
}

// Polynomials in z as coefficient vectors, lowest degree first.
Vec bump_poly() {
  // (1 - z^2)^4
  Vec c = Vec::Zero(9);
  c << 1, 0, -4, 0, 6, 0, -4, 0, 1;
  return c;
}

Vec poly_deriv(const Vec& c) {
  if (c.size() <= 1) return Vec::Zero(1);
  Vec d(c.size() - 1);
  for (int m = 1; m < c.size(); ++m) d(m - 1) = m * c(m);
  return d;
}

Vec poly_z_deriv(const Vec& c) {
  Vec d = c;
  for (int m = 0; m < c.size(); ++m) d(m) = m * c(m);
  return d;
}

double poly_eval(const Vec& c, double z) {
  double r = 0;
  for (int m = static_cast<int>(c.size()) - 1; m >= 0; --m) r = r * z + c(m);
  return r;
}

// One product term coef * prod_i A_i(z_i) * S(z_sigma) of X^k applied to the kernel profile.
struct KTerm {
  double coef;
  std::vector<Vec> a;  // per theta dimension
  Vec s;
};

std::vector<KTerm> kernel_terms(const KernelSpec& psi, LeftField X, int k) {
  const int n = psi.n;
  const double w = psi.width;
  const Vec P = bump_poly();
  // pa[j] = (-z d_z)^j P ; pd[l] = (-(1/w) d_z)^l P
  std::vector<Vec> pa{P}, pd{P};
  for (int j = 1; j <= k; ++j) {
    pa.push_back(-poly_z_deriv(pa.back()));
    pd.push_back(-poly_deriv(pd.back()) / w);
  }
  std::vector<KTerm> out;
  if (X.kind == LeftField::Kind::rho_d_theta) {
    if (X.index < 0 || X.index >= n) throw shape_error("theta index out of range");
    KTerm t{psi.constant, std::vector<Vec>(n, P), P};
    t.a[X.index] = pd[k];
    out.push_back(t);
    return out;
  }
  // rho d_rho acts as sum_i (-a_i d_{a_i}) - d_sigma; the pieces commute, expand multinomially
  std::vector<int> parts(n + 1, 0);
  std::function<void(int, int)> rec = [&](int slot, int left) {
    if (slot == n) {
      parts[n] = left;
      double multi = std::tgamma(k + 1.0);
      for (int v : parts) multi /= std::tgamma(v + 1.0);
      KTerm t{psi.constant * multi, {}, pd[parts[n]]};
      for (int i = 0; i < n; ++i) t.a.push_back(pa[parts[i]]);
      out.push_back(t);
      return;
    }
    for (int j = 0; j <= left; ++j) {
      parts[slot] = j;
      rec(slot + 1, left - j);
    }
  };
  rec(0, k);
  return out;
}

double check_point(const Vec& p) {
  if (!(p(p.size() - 1) > 0.0)) throw domain_error("half-space points need a positive last coordinate");
  return p(p.size() - 1);
}

// Raw tensor-product quadrature of tau(p . w) (X^k psi)(w^{-1}) dV(w).
double convolve_raw(const PointFn& tau, const KernelSpec& psi, const Vec& p, int q, bool theta_independent,
                    LeftField X, int k) {
  const int n = psi.n;
  const double w = psi.width;
  const GaussRule g = gauss_legendre(q);
  const auto terms = kernel_terms(psi, X, k);
  const double rho = p(n);

  // sigma nodes: tau samples times the density e^{-n sigma}
  if (theta_independent) {
    // the theta integrals of polynomial factors are exact with 5 nodes
    const GaussRule g5 = gauss_legendre(5);
    std::vector<double> factor(terms.size(), 1.0);
    for (size_t t = 0; t < terms.size(); ++t)
      for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int j = 0; j < 5; ++j) s += g5.w(j) * poly_eval(terms[t].a[i], g5.x(j));
        factor[t] *= w * s;
      }
    double total = 0;
    Vec x = p;
    for (int j = 0; j < q; ++j) {
      const double sig = w * g.x(j);
      x(n) = rho * std::exp(sig);
      const double tv = tau(x) * std::exp(-n * sig);
      double kv = 0;
      for (size_t t = 0; t < terms.size(); ++t) kv += terms[t].coef * factor[t] * poly_eval(terms[t].s, g.x(j));
      total += g.w(j) * w * tv * kv;
    }
    return total;
  }

  const int N = n + 1;
  long total_nodes = 1;
  for (int d = 0; d < N; ++d) total_nodes *= q;
  // factor tables: value of each term's factor at each node
  double total = 0;
  std::vector<int> idx(N, 0);
  Vec x(N);
  for (long m = 0; m < total_nodes; ++m) {
    long r = m;
    for (int d = 0; d < N; ++d) {
      idx[d] = static_cast<int>(r % q);
      r /= q;
    }
    const double sig = w * g.x(idx[n]);
    double weight = std::exp(-n * sig);
    for (int d = 0; d < N; ++d) weight *= g.w(idx[d]) * w;
    for (int i = 0; i < n; ++i) x(i) = p(i) + rho * w * g.x(idx[i]);
    x(n) = rho * std::exp(sig);
    double kv = 0;
    for (const auto& t : terms) {
      double f = t.coef * poly_eval(t.s, g.x(idx[n]));
      for (int i = 0; i < n && f != 0.0; ++i) f *= poly_eval(t.a[i], g.x(idx[i]));
      kv += f;
    }
    if (kv == 0.0) continue;
    total += weight * kv * tau(x);
  }
  return total;
}

}  // namespace

Vec group_mul(const Vec& p, const Vec& q) {
  if (p.size() != q.size() || p.size() < 2) throw shape_error("group points must have equal dimension >= 2");
  const double rp = check_point(p);
  check_point(q);
  const int N = static_cast<int>(p.size());
  Vec r(N);
  r.head(N - 1) = p.head(N - 1) + rp * q.head(N - 1);
  r(N - 1) = rp * q(N - 1);
  return r;
}

Vec group_inv(const Vec& p) {
  const double rp = check_point(p);
  const int N = static_cast<int>(p.size());
  Vec r(N);
  r.head(N - 1) = -p.head(N - 1) / rp;
  r(N - 1) = 1.0 / rp;
  return r;
}

KernelSpec make_kernel(int n, double width, int quad_order) {
  if (n < 1 || n > 3) throw config_error("kernel dimension n must lie in [1, 3]");
  if (!(width > 0.0)) throw config_error("kernel width must be positive");
  if (!(width <= 1.0)) throw domain_error("kernel width too large: support must stay near the identity");
  KernelSpec k;
  k.n = n;
  k.width = width;
  k.constant = 1.0;
  k.u_max = width * std::exp(width);
  k.v_min = std::exp(-width);
  k.v_max = std::exp(width);
  const double raw = kernel_integral(k, quad_order);
  k.constant = 1.0 / raw;
  k.normalization = kernel_integral(k, quad_order);
  return k;
}

double kernel_value(const KernelSpec& psi, const Vec& q) {
  const int n = psi.n;
  if (q.size() != n + 1) throw shape_error("kernel argument has wrong dimension");
  const Vec w = group_inv(q);
  const Vec P = bump_poly();
  double v = psi.constant;
  for (int i = 0; i < n; ++i) {
    const double z = w(i) / psi.width;
    if (std::abs(z) >= 1.0) return 0.0;
    v *= poly_eval(P, z);
  }
  const double z = std::log(w(n)) / psi.width;
  if (std::abs(z) >= 1.0) return 0.0;
  return v * poly_eval(P, z);
}

double kernel_integral(const KernelSpec& psi, int quad_order) {
  Vec p = Vec::Zero(psi.n + 1);
  p(psi.n) = 1.0;
  // int psi(q^{-1}) dV(q) is the convolution of 1 at the identity
  return convolve_raw([](const Vec&) { return 1.0; }, psi, p, quad_order, true, {}, 0);
}

ConvolveResult convolve(const PointFn& tau, const KernelSpec& psi, const Vec& p, const QuadSpec& quad,
                        bool theta_independent, LeftField X, int k) {
  if (p.size() != psi.n + 1) throw shape_error("convolution point has wrong dimension");
  check_point(p);
  if (quad.order < 2) throw config_error("quadrature order must be at least 2");
  if (k < 0) throw config_error("derivative order must be nonnegative");
  ConvolveResult r;
  r.value = convolve_raw(tau, psi, p, quad.order, theta_independent, X, k);
  if (quad.check) {
    const double fine = convolve_raw(tau, psi, p, 2 * quad.order, theta_independent, X, k);
    r.error_estimate = std::abs(fine - r.value);
    r.warning = r.error_estimate > quad.tol * std::max(1.0, std::abs(fine));
    r.value = fine;
  }
  return r;
}

double convolve_commutation_check(const PointFn& tau, const KernelSpec& psi, LeftField X,
                                  const std::vector<Vec>& points, double h, const QuadSpec& quad) {
  const int n = psi.n;
  double worst = 0;
  for (const Vec& p : points) {
    Vec plus = p, minus = p;
    if (X.kind == LeftField::Kind::rho_d_rho) {
      plus(n) = p(n) * std::exp(h);
      minus(n) = p(n) * std::exp(-h);
    } else {
      plus(X.index) += p(n) * h;
      minus(X.index) -= p(n) * h;
    }
    const double lhs = (convolve(tau, psi, plus, quad).value - convolve(tau, psi, minus, quad).value) / (2 * h);
    const double rhs = convolve(tau, psi, p, quad, false, X, 1).value;
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return worst;
}

double kernel_ck_norm(const KernelSpec& psi, int k, int samples) {
  const int n = psi.n;
  const int N = n + 1;
  if (N >= 3) samples = std::min(samples, 17);
  double best = 0;
  std::vector<LeftField> fields{{LeftField::Kind::rho_d_rho, 0}};
  for (int i = 0; i < n; ++i) fields.push_back({LeftField::Kind::rho_d_theta, i});
  for (int j = 0; j <= k; ++j)
    for (const auto& X : fields) {
      const auto terms = kernel_terms(psi, X, j);
      long total = 1;
      for (int d = 0; d < N; ++d) total *= samples;
      for (long m = 0; m < total; ++m) {
        long r = m;
        std::vector<double> z(N);
        for (int d = 0; d < N; ++d) {
          z[d] = -1.0 + 2.0 * (r % samples) / (samples - 1);
          r /= samples;
        }
        double v = 0;
        for (const auto& t : terms) {
          double f = t.coef * poly_eval(t.s, z[n]);
          for (int i = 0; i < n; ++i) f *= poly_eval(t.a[i], z[i]);
          v += f;
        }
        best = std::max(best, std::abs(v));
      }
    }
  return best;
}

PointFn regularize(const ScalarField& tau, int n, int m, const RegularizeOptions& opt) {
  if (m != 1 && m != 2) throw config_error("regularization order m must be 1 or 2");
  const KernelSpec psi = make_kernel(n, opt.width);
  const bool ti = tau.theta_independent;
  const QuadSpec quad = opt.quad;
  const PointFn value = [tau](const Vec& x) { return tau.jet(x).v; };
  if (m == 1)
    return [=](const Vec& p) { return convolve(value, psi, p, quad, ti).value; };

  Vec probe = Vec::Zero(n + 1);
  probe(n) = 0.5;
  if (tau.jet(probe).d.size() != n + 1)
    throw config_error("regularization with m = 2 needs a field with a first rho-derivative");
  // w = d_rho (tau - tau * psi), with d_rho (tau * psi) = rho^{-1} tau * (rho d_rho psi)
  const PointFn w = [=](const Vec& q) {
    const double d_tau = tau.jet(q).d(n);
    const double d_conv = convolve(value, psi, q, quad, ti, {LeftField::Kind::rho_d_rho, 0}, 1).value / q(n);
    return d_tau - d_conv;
  };
  return [=](const Vec& p) {
    return convolve(value, psi, p, quad, ti).value + p(n) * convolve(w, psi, p, quad, ti).value;
  };
}

}  // namespace wahkit
