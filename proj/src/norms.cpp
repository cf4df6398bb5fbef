#include "wahkit/norms.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "wahkit/curvature.hpp"
#include "wahkit/errors.hpp"

namespace wahkit {

namespace {

int ipow(int b, int e) {
  int r = 1;
  while (e-- > 0) r *= b;
  return r;
}

// Applies M along axis `axis` of a rank-`rank` array with extent N per axis.
Vec mode_product(const Vec& a, int N, int rank, int axis, const Mat& M) {
  const int stride = ipow(N, rank - 1 - axis);
  const int outer = ipow(N, axis);
  Vec out = Vec::Zero(a.size());
  for (int o = 0; o < outer; ++o)
    for (int s = 0; s < stride; ++s) {
      const int base = o * N * stride + s;
      for (int i = 0; i < N; ++i) {
        double acc = 0;
        for (int j = 0; j < N; ++j) acc += M(i, j) * a(base + j * stride);
        out(base + i * stride) = acc;
      }
    }
  return out;
}

// Components of the pullback by a map with Jacobian J.
Vec pull_back(const Vec& comp, const TensorField& u, const Mat& J, const Mat& Jinv) {
  Vec c = comp;
  const int N = u.dim, R = u.rank();
  for (int a = 0; a < u.contravariant; ++a) c = mode_product(c, N, R, a, Jinv);
  const Mat Jt = J.transpose();
  for (int a = u.contravariant; a < R; ++a) c = mode_product(c, N, R, a, Jt);
  return c;
}

using VecFn = std::function<Vec(const Vec&)>;

// j-th derivative tensor of f at z by nested centered differences; the derivative
// index runs slowest-last, so the result has f's size times dim^j entries.
Vec derivative(const VecFn& f, const Vec& z, int j, double s) {
  if (j == 0) return f(z);
  const int N = static_cast<int>(z.size());
  std::vector<Vec> parts;
  int len = 0;
  for (int i = 0; i < N; ++i) {
    Vec zp = z, zm = z;
    zp(i) += s;
    zm(i) -= s;
    parts.push_back((derivative(f, zp, j - 1, s) - derivative(f, zm, j - 1, s)) / (2.0 * s));
    len += static_cast<int>(parts.back().size());
  }
  Vec out(len);
  // interleave so the new index is the last one
  const int m = static_cast<int>(parts[0].size());
  for (int e = 0; e < m; ++e)
    for (int i = 0; i < N; ++i) out(e * N + i) = parts[i](e);
  return out;
}

// Per-chart C^{k,alpha} norm: sum_j wj[j] sup |D^j v| + walpha [D^k v]_alpha.
double chart_holder(const VecFn& v, int k, double alpha, const std::vector<Vec>& pts, double s,
                    const std::vector<double>& wj, double walpha) {
  std::vector<Vec> top(pts.size());
  double total = 0;
  for (int j = 0; j <= k; ++j) {
    double sup = 0;
    for (std::size_t q = 0; q < pts.size(); ++q) {
      Vec d = derivative(v, pts[q], j, s);
      sup = std::max(sup, d.norm());
      if (j == k) top[q] = std::move(d);
    }
    total += wj[j] * sup;
  }
  if (alpha > 0.0) {
    double semi = 0;
    for (std::size_t a = 0; a < pts.size(); ++a)
      for (std::size_t b = a + 1; b < pts.size(); ++b) {
        const double hd = hyperbolic_distance(pts[a], pts[b]);
        if (hd < 0.1 || hd > 1.0) continue;
        semi = std::max(semi, (top[a] - top[b]).norm() / std::pow((pts[a] - pts[b]).norm(), alpha));
      }
    total += walpha * semi;
  }
  return total;
}

double ball_volume(int N) {
  const double R = std::sinh(2.0);
  return std::pow(M_PI, N / 2.0) / std::tgamma(N / 2.0 + 1.0) * std::pow(R, N);
}

void require_cover(const std::vector<CoverChart>& cover) {
  if (cover.empty()) throw config_error("empty Mobius cover");
}

void require_weight(const TensorField& u, const NormSpec& spec) {
  if (spec.weight_r != u.weight())
    throw config_error("bundle weight " + std::to_string(spec.weight_r) + " does not match field '" + u.name +
                       "' of weight " + std::to_string(u.weight()));
}

// z -> components of Phi^*(rho^{-delta} u) on B_2.
VecFn chart_function(const TensorField& u, const CoverChart& c, double delta) {
  const Vec z0 = Vec::Zero(u.dim);
  const Mat J = c.map.jacobian(z0);
  const Mat Jinv = J.inverse();
  return [&u, &c, J, Jinv, delta](const Vec& z) {
    const Vec x = c.map.forward(z);
    const double w = delta == 0.0 ? 1.0 : std::pow(x(x.size() - 1), -delta);
    return Vec(w * pull_back(u(x), u, J, Jinv));
  };
}

double param(const ParamMap& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

void check_keys(const std::string& name, const ParamMap& p, const std::set<std::string>& valid) {
  for (const auto& [k, v] : p)
    if (!valid.count(k)) {
      std::ostringstream os;
      os << "unknown parameter '" << k << "' for field '" << name << "'; valid keys:";
      for (const auto& s : valid) os << ' ' << s;
      throw validation_error(os.str());
    }
}

}  // namespace

void validate(const NormSpec& spec) {
  if (spec.k < 0) throw config_error("norm needs k >= 0");
  if (!(spec.alpha >= 0.0 && spec.alpha < 1.0)) throw config_error("Holder exponent must lie in [0, 1)");
  if (spec.p) {
    if (!(*spec.p > 1.0)) throw config_error("Sobolev exponent must exceed 1");
    if (spec.alpha != 0.0) throw config_error("alpha and p are exclusive");
  }
  if (!std::isfinite(spec.delta)) throw config_error("weight delta must be finite");
}

int TensorField::size() const { return ipow(dim, rank()); }

Vec TensorField::operator()(const Vec& x) const {
  Vec c = components(x);
  if (c.size() != size()) throw shape_error("tensor field '" + name + "' returned wrong component count");
  return c;
}

TensorField scalar_tensor(const ScalarField& f, int dim) {
  return scalar_tensor(f.name, dim, [f](const Vec& x) { return f(x); }, f.theta_independent);
}

TensorField scalar_tensor(std::string name, int dim, std::function<double(const Vec&)> f, bool theta_independent) {
  TensorField t;
  t.name = std::move(name);
  t.dim = dim;
  t.theta_independent = theta_independent;
  t.components = [f](const Vec& x) { return Vec::Constant(1, f(x)); };
  return t;
}

TensorField d_rho(int n) {
  TensorField t;
  t.name = "d_rho";
  t.dim = n + 1;
  t.covariant = 1;
  t.components = [n](const Vec&) {
    Vec c = Vec::Zero(n + 1);
    c(n) = 1.0;
    return c;
  };
  return t;
}

TensorField scaled(const TensorField& u, double c) {
  TensorField t = u;
  t.name = u.name + "*c";
  t.components = [u, c](const Vec& x) { return Vec(c * u(x)); };
  return t;
}

TensorField product(const TensorField& u, const TensorField& v) {
  if (u.dim != v.dim) throw shape_error("product of fields of different dimension");
  TensorField t;
  t.name = u.name + "*" + v.name;
  t.dim = u.dim;
  t.contravariant = u.contravariant + v.contravariant;
  t.covariant = u.covariant + v.covariant;
  t.theta_independent = u.theta_independent && v.theta_independent;
  t.components = [u, v](const Vec& x) {
    const Vec a = u(x), b = v(x);
    const int N = u.dim;
    const int uc = ipow(N, u.contravariant), ul = ipow(N, u.covariant);
    const int vc = ipow(N, v.contravariant), vl = ipow(N, v.covariant);
    // result order: u contravariant, v contravariant, u covariant, v covariant
    Vec out(a.size() * b.size());
    int idx = 0;
    for (int i = 0; i < uc; ++i)
      for (int j = 0; j < vc; ++j)
        for (int k = 0; k < ul; ++k)
          for (int l = 0; l < vl; ++l) out(idx++) = a(i * ul + k) * b(j * vl + l);
    return out;
  };
  return t;
}

TensorField covariant_derivative(const MetricField& barh, const TensorField& u, double fd_rel) {
  if (barh.dim() != u.dim) throw shape_error("metric and field dimensions differ");
  TensorField t;
  t.name = "nabla " + u.name;
  t.dim = u.dim;
  t.contravariant = u.contravariant;
  t.covariant = u.covariant + 1;
  t.theta_independent = u.theta_independent && barh.theta_independent();
  t.components = [barh, u, fd_rel](const Vec& x) {
    const int N = u.dim, R = u.rank();
    const int m = u.size();
    const double h = fd_rel * x(N - 1);
    const std::vector<Mat> gam = christoffel(barh.jet(x));
    const Vec c = u(x);
    Vec out(m * N);
    for (int k = 0; k < N; ++k) {
      Vec xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      Vec d = (u(xp) - u(xm)) / (2.0 * h);
      Mat G(N, N);
      for (int a = 0; a < u.contravariant; ++a) {
        for (int j = 0; j < N; ++j)
          for (int l = 0; l < N; ++l) G(j, l) = gam[j](k, l);
        d += mode_product(c, N, R, a, G);
      }
      for (int a = u.contravariant; a < R; ++a) {
        for (int i = 0; i < N; ++i)
          for (int l = 0; l < N; ++l) G(i, l) = gam[l](k, i);
        d -= mode_product(c, N, R, a, G);
      }
      for (int e = 0; e < m; ++e) out(e * N + k) = d(e);
    }
    return out;
  };
  return t;
}

std::vector<CoverChart> mobius_cover(const CollarChart& chart, double rho_hi, double rho_lo, int theta_samples) {
  if (!(rho_hi > rho_lo) || !(rho_lo > 0.0)) throw config_error("cover needs 0 < rho_lo < rho_hi");
  if (theta_samples < 1) throw config_error("cover needs at least one theta sample");
  const int n = chart.n;
  const int q = std::min<int>(theta_samples, static_cast<int>(chart.theta_grid.size()));
  const double dt = chart.dt();
  // levels on the chart's t-grid, extended past its ends with the same spacing
  const double t_hi = -std::log(rho_hi), t_lo = -std::log(rho_lo);
  const long j0 = static_cast<long>(std::ceil((t_hi - chart.t_min) / dt - 1e-9));
  std::vector<CoverChart> out;
  for (long j = j0;; ++j) {
    const double t = chart.t_min + j * dt;
    if (t >= t_lo - 1e-12) break;
    const double rho = std::exp(-t);
    const double mult = std::pow(chart.period / rho, n) / q;
    for (int s = 0; s < q; ++s) {
      Vec p = Vec::Zero(n + 1);
      for (int a = 0; a < n; ++a) p(a) = chart.theta_grid((s * (2 * a + 1)) % q);
      p(n) = rho;
      out.push_back({p, mobius_param(chart, p), mult});
    }
  }
  return out;
}

std::vector<Vec> ball_samples(int dim, int count) {
  if (dim < 1 || count < 1) throw config_error("bad ball sample request");
  static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};
  if (dim > 10) throw config_error("ball samples support dimension <= 10");
  const double yc = std::cosh(2.0), R = std::sinh(2.0);
  std::vector<Vec> pts;
  Vec center = Vec::Zero(dim);
  center(dim - 1) = 1.0;
  pts.push_back(center);
  for (long i = 1; static_cast<int>(pts.size()) < count; ++i) {
    Vec z(dim);
    for (int a = 0; a < dim; ++a) {
      double f = 1.0, r = 0.0;
      for (long k = i; k > 0; k /= primes[a]) {
        f /= primes[a];
        r += f * (k % primes[a]);
      }
      z(a) = (2.0 * r - 1.0) * R;
    }
    z(dim - 1) += yc;
    Vec off = z;
    off(dim - 1) -= yc;
    // keep a margin so difference stencils stay in the upper half space
    if (off.norm() < R && z(dim - 1) > 0.15) pts.push_back(z);
  }
  return pts;
}

double weighted_holder_norm(const TensorField& u, const NormSpec& spec, const std::vector<CoverChart>& cover,
                            const SampleOptions& opt) {
  validate(spec);
  if (spec.p) throw config_error("Holder norm given a Sobolev exponent");
  require_cover(cover);
  require_weight(u, spec);
  const std::vector<Vec> pts = ball_samples(u.dim, opt.samples);
  const std::vector<double> wj(spec.k + 1, 1.0);
  double sup = 0;
  for (const CoverChart& c : cover)
    sup = std::max(sup, chart_holder(chart_function(u, c, spec.delta), spec.k, spec.alpha, pts, opt.fd_step, wj, 1.0));
  return sup;
}

double weighted_sobolev_norm(const TensorField& u, const NormSpec& spec, const std::vector<CoverChart>& cover,
                             const SampleOptions& opt) {
  if (!spec.p) throw config_error("Sobolev norm needs p");
  validate(spec);
  require_cover(cover);
  require_weight(u, spec);
  const double p = *spec.p;
  const std::vector<Vec> pts = ball_samples(u.dim, opt.samples);
  const double vol = ball_volume(u.dim);
  double sum = 0;
  for (const CoverChart& c : cover) {
    const VecFn v = chart_function(u, c, 0.0);
    double local = 0;
    for (int j = 0; j <= spec.k; ++j) {
      double acc = 0;
      for (const Vec& z : pts) acc += std::pow(derivative(v, z, j, opt.fd_step).norm(), p);
      local += vol * acc / pts.size();
    }
    const double rho0 = c.center(c.center.size() - 1);
    sum += c.multiplicity * std::pow(rho0, -spec.delta * p) * local;
  }
  return std::pow(sum, 1.0 / p);
}

double script_c_norm(const TensorField& u, int k, double alpha, int m, const MetricField& barh,
                     const std::vector<CoverChart>& cover, const SampleOptions& opt) {
  if (m < 0 || m > k) throw config_error("script C norm needs 0 <= m <= k");
  TensorField d = u;
  double total = 0;
  for (int l = 0; l <= m; ++l) {
    if (l > 0) d = covariant_derivative(barh, d);
    NormSpec s;
    s.k = k - l;
    s.alpha = alpha;
    s.delta = u.weight() + l;
    s.weight_r = d.weight();
    total += weighted_holder_norm(d, s, cover, opt);
  }
  return total;
}

bool divergence_detected(const std::vector<double>& rho_lo, const std::vector<double>& values) {
  const int K = static_cast<int>(values.size());
  if (static_cast<int>(rho_lo.size()) != K) throw shape_error("trace lengths differ");
  if (K < 4) return false;
  if (!std::isfinite(values.back())) return true;
  bool doubling = true;
  for (int i = K - 3; i < K; ++i) doubling = doubling && values[i] >= 2.0 * values[i - 1] && values[i] > 0.0;
  if (doubling) return true;
  // slower, logarithmic growth: v ~ |log rho|^q with q >= 1/2 over the last four refinements
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = K - 4; i < K; ++i) {
    if (!(values[i] > 0.0)) return false;
    const double x = std::log(std::abs(std::log(rho_lo[i])));
    const double y = std::log(values[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double q = (4 * sxy - sx * sy) / (4 * sxx - sx * sx);
  return q >= 0.5 && values[K - 1] >= 1.1 * values[K - 4];
}

RefinementTrace refine_toward_boundary(const CollarChart& chart, double rho_hi, int decades, int theta_samples,
                                       const std::function<double(const std::vector<CoverChart>&)>& norm,
                                       const std::function<double(double, double)>& accumulate,
                                       const std::function<double(double)>& finish) {
  if (decades < 1) throw config_error("refinement needs at least one decade");
  RefinementTrace tr;
  double running = 0;
  for (int d = 0; d < decades; ++d) {
    const double hi = rho_hi * std::pow(10.0, -d), lo = hi / 10.0;
    const double v = norm(mobius_cover(chart, hi, lo, theta_samples));
    running = d == 0 ? v : accumulate(running, v);
    tr.rho_lo.push_back(lo);
    tr.values.push_back(finish ? finish(running) : running);
  }
  tr.diverges = divergence_detected(tr.rho_lo, tr.values);
  return tr;
}

namespace {

double max_of(double a, double b) { return std::max(a, b); }

Membership membership(std::string space, int k, double alpha, double delta, int m, const RefinementTrace& tr) {
  Membership mb;
  mb.space = std::move(space);
  mb.k = k;
  mb.alpha = alpha;
  mb.delta = delta;
  mb.m = m;
  mb.member = !tr.diverges;
  mb.estimates = tr.values;
  return mb;
}

// Points along boundary rays: per decade, `per` values of rho at each sampled theta.
std::vector<std::vector<Vec>> ray_points(const CollarChart& chart, double rho_hi, int decades, int thetas, int per) {
  const int n = chart.n;
  const int q = std::min<int>(thetas, static_cast<int>(chart.theta_grid.size()));
  std::vector<std::vector<Vec>> out(decades);
  for (int d = 0; d < decades; ++d)
    for (int s = 0; s < q; ++s)
      for (int i = 0; i < per; ++i) {
        Vec x = Vec::Zero(n + 1);
        for (int a = 0; a < n; ++a) x(a) = chart.theta_grid((s * (2 * a + 1)) % q);
        x(n) = rho_hi * std::pow(10.0, -d - static_cast<double>(i) / per);
        out[d].push_back(x);
      }
  return out;
}

// Least-squares slope of log v against log rho.
double power_slope(const std::vector<double>& rho, const std::vector<double>& v) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int K = static_cast<int>(v.size());
  for (int i = 0; i < K; ++i) {
    const double x = std::log(rho[i]), y = std::log(std::max(v[i], 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (K * sxy - sx * sy) / (K * sxx - sx * sx);
}

// True when the per-decade oscillation decays at a power rate (or is at rounding level).
bool oscillation_vanishes(const std::vector<double>& rho, const std::vector<double>& osc, double scale) {
  if (*std::max_element(osc.begin(), osc.end()) <= 1e-12 * std::max(1.0, scale)) return true;
  return power_slope(rho, osc) >= 0.05;
}

}  // namespace

RegularityReport classify_regularity(const TensorField& u, const MetricField& barh, const ClassifyOptions& opt) {
  if (barh.dim() != u.dim) throw shape_error("metric and field dimensions differ");
  if (!(opt.alpha >= 0.0 && opt.alpha < 1.0)) throw config_error("Holder exponent must lie in [0, 1)");
  if (opt.decades < 4) throw config_error("classification needs at least four decades");
  const CollarChart& chart = barh.chart();
  const int N = u.dim;
  const int r = u.weight();
  const int thetas = u.theta_independent ? 1 : static_cast<int>(chart.theta_grid.size());
  const std::vector<Vec> pts = ball_samples(N, opt.sample.samples);
  const double s = opt.sample.fd_step;
  RegularityReport rep;

  auto sup_trace = [&](const std::function<double(const CoverChart&)>& per_chart) {
    return refine_toward_boundary(
        chart, opt.rho_hi, opt.decades, thetas,
        [&](const std::vector<CoverChart>& cover) {
          double m = 0;
          for (const CoverChart& c : cover) m = std::max(m, per_chart(c));
          return m;
        },
        max_of);
  };

  for (int k : opt.holder_k)
    for (double delta : opt.holder_delta) {
      const std::vector<double> wj(k + 1, 1.0);
      const RefinementTrace tr = sup_trace([&](const CoverChart& c) {
        return chart_holder(chart_function(u, c, delta), k, opt.alpha, pts, s, wj, 1.0);
      });
      rep.weighted.push_back(membership("C^{k,a}_d", k, opt.alpha, delta, 0, tr));
    }

  // barnabla^l u in C^{k-l,alpha}_{r+l}, traced once per (l, k - l)
  std::vector<TensorField> nab = {u};
  std::map<std::pair<int, int>, RefinementTrace> cache;
  auto nabla_trace = [&](int l, int kk) -> const RefinementTrace& {
    auto key = std::make_pair(l, kk);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    while (static_cast<int>(nab.size()) <= l) nab.push_back(covariant_derivative(barh, nab.back()));
    const TensorField& f = nab[l];
    const std::vector<double> wj(kk + 1, 1.0);
    RefinementTrace tr = sup_trace([&](const CoverChart& c) {
      return chart_holder(chart_function(f, c, r + l), kk, opt.alpha, pts, s, wj, 1.0);
    });
    return cache.emplace(key, std::move(tr)).first->second;
  };
  for (int m : opt.script_m)
    for (int k : opt.script_k) {
      if (m > k) continue;
      RefinementTrace sum;
      for (int l = 0; l <= m; ++l) {
        const RefinementTrace& t = nabla_trace(l, k - l);
        if (sum.values.empty()) {
          sum = t;
        } else {
          for (std::size_t i = 0; i < t.values.size(); ++i) sum.values[i] += t.values[i];
        }
      }
      sum.diverges = divergence_detected(sum.rho_lo, sum.values);
      rep.script.push_back(membership("script C^{k,a;m}", k, opt.alpha, r, m, sum));
    }

  // background-coordinate Holder norms at the scale of each chart
  auto closure_trace = [&](int k, double alpha) {
    return sup_trace([&](const CoverChart& c) {
      const double rho0 = c.center(N - 1);
      std::vector<double> wj(k + 1);
      for (int j = 0; j <= k; ++j) wj[j] = std::pow(rho0, -j - r);
      return chart_holder(chart_function(u, c, 0.0), k, alpha, pts, s, wj, std::pow(rho0, -k - alpha - r));
    });
  };
  for (int k : opt.holder_k)
    rep.closure.push_back(membership("C^{k,a}(Mbar)", k, opt.alpha, 0, 0, closure_trace(k, opt.alpha)));
  rep.lipschitz = !closure_trace(1, 0.0).diverges;

  // limits along boundary rays of the components and their first partials
  const auto rays = ray_points(chart, opt.rho_hi, opt.decades, thetas, 16);
  std::vector<double> rho_d, osc0, osc1;
  double scale0 = 0, scale1 = 0;
  for (int d = 0; d < opt.decades; ++d) {
    const int per = 16;
    double o0 = 0, o1 = 0;
    for (std::size_t start = 0; start < rays[d].size(); start += per) {
      Vec lo0, hi0, lo1, hi1;
      for (int i = 0; i < per; ++i) {
        const Vec& x = rays[d][start + i];
        const Vec v = u(x);
        const double h = 1e-4 * x(N - 1);
        Vec g(v.size() * N);
        for (int k = 0; k < N; ++k) {
          Vec xp = x, xm = x;
          xp(k) += h;
          xm(k) -= h;
          const Vec dk = (u(xp) - u(xm)) / (2.0 * h);
          for (int e = 0; e < v.size(); ++e) g(e * N + k) = dk(e);
        }
        if (i == 0) {
          lo0 = hi0 = v;
          lo1 = hi1 = g;
        }
        lo0 = lo0.cwiseMin(v);
        hi0 = hi0.cwiseMax(v);
        lo1 = lo1.cwiseMin(g);
        hi1 = hi1.cwiseMax(g);
        scale0 = std::max(scale0, v.cwiseAbs().maxCoeff());
        scale1 = std::max(scale1, g.cwiseAbs().maxCoeff());
      }
      o0 = std::max(o0, (hi0 - lo0).maxCoeff());
      o1 = std::max(o1, (hi1 - lo1).maxCoeff());
    }
    rho_d.push_back(opt.rho_hi * std::pow(10.0, -d - 0.5));
    osc0.push_back(o0);
    osc1.push_back(o1);
  }
  rep.extends_c0 = oscillation_vanishes(rho_d, osc0, scale0);
  rep.derivative_extends = oscillation_vanishes(rho_d, osc1, scale1);

  // conormality: b-derivatives (d_theta, rho d_rho) of rho^{r - t} u in the normalized frame
  rep.conormal_delta = opt.conormal_delta;
  auto conormal_trace = [&](double t) {
    RefinementTrace tr;
    double running = 0;
    for (int d = 0; d < opt.decades; ++d) {
      double sup = 0;
      for (const Vec& x : rays[d]) {
        Vec y = x;
        y(N - 1) = -std::log(x(N - 1));
        const VecFn w = [&](const Vec& yy) {
          Vec xx = yy;
          xx(N - 1) = std::exp(-yy(N - 1));
          return Vec(std::pow(xx(N - 1), r - t) * u(xx));
        };
        double acc = 0;
        for (int j = 0; j <= opt.conormal_order; ++j) acc += derivative(w, y, j, s).norm();
        sup = std::max(sup, acc);
      }
      running = std::max(running, sup);
      tr.rho_lo.push_back(opt.rho_hi * std::pow(10.0, -d - 1));
      tr.values.push_back(running);
    }
    tr.diverges = divergence_detected(tr.rho_lo, tr.values);
    return tr;
  };
  rep.in_a_delta = !conormal_trace(opt.conormal_delta - opt.conormal_gap).diverges;
  rep.in_rho_delta_a = !conormal_trace(opt.conormal_delta).diverges;

  // polyhomogeneity: a finite sum of rho^s (log rho)^p terms with theta-independent exponents obeys one
  // constant-coefficient recurrence on a geometric ladder, jointly for every ray and component
  const double tau = std::log(10.0) / 4.0;
  const int L = 17;
  const double t0 = -std::log(opt.rho_hi) + 2.0 * std::log(10.0);
  std::vector<std::vector<double>> seqs;
  for (std::size_t start = 0; start < rays[0].size(); start += 16) {
    const Vec& base = rays[0][start];
    std::vector<Vec> vals;
    for (int i = 0; i < L; ++i) {
      Vec x = base;
      x(N - 1) = std::exp(-(t0 + i * tau));
      vals.push_back(u(x));
    }
    for (int e = 0; e < vals[0].size(); ++e) {
      std::vector<double> sq(L);
      for (int i = 0; i < L; ++i) sq[i] = vals[i](e);
      seqs.push_back(sq);
    }
  }
  rep.phg_residual = std::numeric_limits<double>::infinity();
  for (int J = 1; J <= opt.phg_max_terms; ++J) {
    std::vector<std::pair<Vec, double>> rows;
    for (const auto& sq : seqs)
      for (int i = 0; i + J < L; ++i) {
        Vec a(J);
        for (int c = 0; c < J; ++c) a(c) = sq[i + J - 1 - c];
        const double b = -sq[i + J];
        const double nrm = std::max(a.cwiseAbs().maxCoeff(), std::abs(b));
        if (nrm > 0.0) rows.emplace_back(a / nrm, b / nrm);
      }
    if (rows.empty()) {  // identically zero
      rep.polyhomogeneous = true;
      rep.phg_order = 0;
      rep.phg_residual = 0;
      break;
    }
    Mat A(rows.size(), J);
    Vec b(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      A.row(i) = rows[i].first.transpose();
      b(i) = rows[i].second;
    }
    const Vec c = A.completeOrthogonalDecomposition().solve(b);
    const double res = (A * c - b).norm() / b.norm();
    if (res < rep.phg_residual) rep.phg_residual = res;
    if (res <= opt.phg_tol) {
      rep.polyhomogeneous = true;
      rep.phg_order = J;
      // x^J + c_1 x^{J-1} + ... + c_J: roots exp(-s tau)
      Mat comp = Mat::Zero(J, J);
      for (int i = 0; i < J; ++i) comp(0, i) = -c(i);
      for (int i = 1; i < J; ++i) comp(i, i - 1) = 1.0;
      Eigen::EigenSolver<Mat> es(comp);
      double lead = std::numeric_limits<double>::infinity();
      for (int i = 0; i < J; ++i) lead = std::min(lead, -std::log(std::abs(es.eigenvalues()(i))) / tau);
      rep.phg_leading = lead;
      rep.phg_residual = res;
      break;
    }
  }
  return rep;
}

TensorField field_catalog(const std::string& name, const ParamMap& params, int n) {
  if (n < 1) throw config_error("field catalog needs n >= 1");
  const int N = n + 1;
  if (name == "rho_power") {
    check_keys(name, params, {"s"});
    const double s = param(params, "s", 2.0);
    return scalar_tensor("rho_power", N, [s, n](const Vec& x) { return std::pow(x(n), s); }, true);
  }
  if (name == "rho_sin_log") {
    check_keys(name, params, {"eps", "freq", "var"});
    const double eps = param(params, "eps", 1.0);
    const double freq = param(params, "freq", 1.0);
    const double var = param(params, "var", 0.0);
    return scalar_tensor(
        "rho_sin_log", N,
        [=](const Vec& x) { return std::pow(x(n), eps) * std::sin(freq * (1.0 + var * std::cos(x(0))) * std::log(x(n))); },
        var == 0.0);
  }
  if (name == "rho_log_power") {
    check_keys(name, params, {"s", "l"});
    const double s = param(params, "s", 2.5);
    const double l = param(params, "l", 1.0);
    if (l != std::floor(l) || l < 0) throw validation_error("rho_log_power needs a nonnegative integer l");
    return scalar_tensor("rho_log_power", N,
                         [s, l, n](const Vec& x) { return std::pow(x(n), s) * std::pow(std::log(x(n)), l); }, true);
  }
  if (name == "d_rho") {
    check_keys(name, params, {});
    return d_rho(n);
  }
  std::ostringstream os;
  os << "unknown field '" << name << "'; known:";
  for (const auto& k : field_catalog_names()) os << ' ' << k;
  throw catalog_error(os.str());
}

std::vector<std::string> field_catalog_names() { return {"d_rho", "rho_log_power", "rho_power", "rho_sin_log"}; }

}  // namespace wahkit
