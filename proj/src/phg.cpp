#include "wahkit/phg.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>

#include "wahkit/curvature.hpp"
#include "wahkit/errors.hpp"

namespace wahkit {

namespace {

constexpr double kMergeTol = 1e-12;

bool same_exponent(Complex a, Complex b) { return std::abs(a - b) <= kMergeTol * std::max(1.0, std::abs(a)); }

bool term_less(const PhgTerm& a, const PhgTerm& b) {
  if (!same_exponent(a.s, b.s)) {
    if (a.s.real() != b.s.real()) return a.s.real() < b.s.real();
    return a.s.imag() < b.s.imag();
  }
  return a.p < b.p;
}

double coeff_scale(const PhgExpansion& e) {
  double m = 0;
  for (const auto& t : e.terms) m = std::max(m, t.coeff.norm());
  return m;
}

double lowest_order(const PhgExpansion& e) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& t : e.terms) m = std::min(m, t.s.real());
  return m;
}

void enforce_cap(const PhgExpansion& e, const char* where) {
  if (static_cast<int>(e.terms.size()) > kMaxPhgTerms)
    throw cap_error(std::string(where) + ": expansion exceeds " + std::to_string(kMaxPhgTerms) + " terms");
}

Complex cpow(double rho, Complex s) { return std::exp(s * std::log(rho)); }

}  // namespace

void PhgExpansion::normalize(double zero_tol) {
  std::vector<PhgTerm> in = std::move(terms);
  std::sort(in.begin(), in.end(), term_less);
  terms.clear();
  for (auto& t : in) {
    if (t.s.real() >= remainder_order - 1e-12) continue;
    if (!terms.empty() && same_exponent(terms.back().s, t.s) && terms.back().p == t.p)
      terms.back().coeff += t.coeff;
    else
      terms.push_back(std::move(t));
  }
  terms.erase(std::remove_if(terms.begin(), terms.end(),
                             [&](const PhgTerm& t) { return !(t.coeff.norm() > zero_tol); }),
              terms.end());
}

CVec PhgExpansion::evaluate(double rho) const {
  CVec v = CVec::Zero(dim);
  const double L = std::log(rho);
  for (const auto& t : terms) v += cpow(rho, t.s) * std::pow(L, t.p) * t.coeff;
  return v;
}

CVec PhgExpansion::evaluate_D(double rho) const {
  CVec v = CVec::Zero(dim);
  const double L = std::log(rho);
  for (const auto& t : terms) {
    Complex f = t.s * std::pow(L, t.p);
    if (t.p > 0) f += double(t.p) * std::pow(L, t.p - 1);
    v += cpow(rho, t.s) * f * t.coeff;
  }
  return v;
}

bool PhgExpansion::has_log() const {
  return std::any_of(terms.begin(), terms.end(), [](const PhgTerm& t) { return t.p > 0; });
}

int PhgExpansion::max_log_power(Complex s, double tol) const {
  int m = -1;
  for (const auto& t : terms)
    if (std::abs(t.s - s) <= tol) m = std::max(m, t.p);
  return m;
}

CVec PhgExpansion::coefficient(Complex s, int p, double tol) const {
  for (const auto& t : terms)
    if (std::abs(t.s - s) <= tol && t.p == p) return t.coeff;
  return CVec::Zero(dim);
}

PhgExpansion phg_zero(int dim, double remainder) {
  PhgExpansion e;
  e.dim = dim;
  e.remainder_order = remainder;
  return e;
}

PhgExpansion phg_monomial(Complex s, int p, const CVec& coeff, double remainder) {
  if (p < 0) throw config_error("log power must be nonnegative");
  PhgExpansion e = phg_zero(static_cast<int>(coeff.size()), remainder);
  e.terms.push_back({s, p, coeff});
  e.normalize();
  return e;
}

PhgExpansion phg_scalar(Complex s, int p, Complex c, double remainder) {
  return phg_monomial(s, p, CVec::Constant(1, c), remainder);
}

PhgExpansion phg_add(const PhgExpansion& a, const PhgExpansion& b) {
  if (a.dim != b.dim) throw shape_error("cannot add expansions of different fiber dimension");
  PhgExpansion r = phg_zero(a.dim, std::min(a.remainder_order, b.remainder_order));
  r.weight_r = a.weight_r;
  r.terms = a.terms;
  r.terms.insert(r.terms.end(), b.terms.begin(), b.terms.end());
  r.normalize();
  return r;
}

PhgExpansion phg_scale(const PhgExpansion& a, Complex c) {
  PhgExpansion r = a;
  for (auto& t : r.terms) t.coeff *= c;
  r.normalize();
  return r;
}

PhgExpansion phg_mul(const PhgExpansion& a, const PhgExpansion& b) {
  if (a.dim != 1 && b.dim != 1) throw shape_error("phg_mul needs a scalar factor");
  const int dim = std::max(a.dim, b.dim);
  double rem = std::numeric_limits<double>::infinity();
  if (std::isfinite(a.remainder_order)) rem = std::min(rem, a.remainder_order + (b.terms.empty() ? 0.0 : lowest_order(b)));
  if (std::isfinite(b.remainder_order)) rem = std::min(rem, b.remainder_order + (a.terms.empty() ? 0.0 : lowest_order(a)));
  PhgExpansion r = phg_zero(dim, rem);
  r.weight_r = a.weight_r + b.weight_r;
  for (const auto& x : a.terms)
    for (const auto& y : b.terms) {
      if ((x.s + y.s).real() >= rem) continue;
      CVec c = (a.dim == 1) ? CVec(x.coeff(0) * y.coeff) : CVec(y.coeff(0) * x.coeff);
      r.terms.push_back({x.s + y.s, x.p + y.p, c});
    }
  r.normalize();
  return r;
}

PhgExpansion phg_truncate(const PhgExpansion& a, double order) {
  PhgExpansion r = a;
  r.remainder_order = std::min(a.remainder_order, order);
  r.normalize();
  return r;
}

namespace {

// (a D^2 + b D + c) applied to one term, appended to out with exponent shifted by `gain`.
void act_on_term(const CMat& a, const CMat& b, const CMat& c, const PhgTerm& t, double gain,
                 std::vector<PhgTerm>& out) {
  const Complex s = t.s;
  const CMat Is = s * s * a + s * b + c;
  const CMat dIs = 2.0 * s * a + b;
  const Complex sg = s + gain;
  out.push_back({sg, t.p, Is * t.coeff});
  if (t.p >= 1) out.push_back({sg, t.p - 1, double(t.p) * (dIs * t.coeff)});
  if (t.p >= 2) out.push_back({sg, t.p - 2, double(t.p) * (t.p - 1) * (a * t.coeff)});
}

}  // namespace

PhgExpansion apply_indicial(const BoundaryTrace& tr, const PhgExpansion& u) {
  if (tr.abar.rows() != u.dim) throw shape_error("operator and expansion fiber dimensions differ");
  PhgExpansion r = phg_zero(u.dim, u.remainder_order);
  r.weight_r = u.weight_r;
  const CMat a = tr.abar.cast<Complex>(), b = tr.bbar.cast<Complex>(), c = tr.cbar.cast<Complex>();
  for (const auto& t : u.terms) act_on_term(a, b, c, t, 0.0, r.terms);
  r.normalize();
  return r;
}

std::vector<Exponent> admitted_exponents(const BoundaryTrace& tr, double threshold) {
  std::vector<Exponent> out;
  for (const auto& e : characteristic_exponents(tr))
    if (e.s.real() > threshold) out.push_back(e);
  return out;
}

PhgExpansion solve_indicial_ode(const BoundaryTrace& tr, const PhgExpansion& f, const IndicialSolveOptions& opt) {
  const int d = f.dim;
  if (tr.abar.rows() != d) throw shape_error("operator and source fiber dimensions differ");
  const auto exps = characteristic_exponents(tr, opt.cluster_tol);
  const CMat a = tr.abar.cast<Complex>(), b = tr.bbar.cast<Complex>(), c = tr.cbar.cast<Complex>();

  PhgExpansion src = f;
  src.normalize();
  PhgExpansion out = phg_zero(d, f.remainder_order);
  out.weight_r = f.weight_r;

  size_t i = 0;
  while (i < src.terms.size()) {
    const Complex s = src.terms[i].s;
    int pmax = 0;
    size_t j = i;
    while (j < src.terms.size() && same_exponent(src.terms[j].s, s)) pmax = std::max(pmax, src.terms[j++].p);
    std::vector<CVec> w(pmax + 1, CVec::Zero(d));
    for (size_t k = i; k < j; ++k) w[src.terms[k].p] += src.terms[k].coeff;
    i = j;

    int mult = 0;
    for (const auto& e : exps)
      if (std::abs(e.s - s) <= opt.cluster_tol) mult = e.mult;

    const CMat Is = s * s * a + s * b + c;
    const CMat dIs = 2.0 * s * a + b;
    std::vector<CVec> x;
    if (mult == 0) {
      Eigen::PartialPivLU<CMat> lu(Is);
      x.assign(pmax + 1, CVec::Zero(d));
      for (int q = pmax; q >= 0; --q) {
        CVec rhs = w[q];
        if (q + 1 <= pmax) rhs -= double(q + 1) * (dIs * x[q + 1]);
        if (q + 2 <= pmax) rhs -= double(q + 2) * (q + 1) * (a * x[q + 2]);
        x[q] = lu.solve(rhs);
      }
    } else {
      const int m = pmax + mult;
      CMat M = CMat::Zero((m + 1) * d, (m + 1) * d);
      CVec rhs = CVec::Zero((m + 1) * d);
      for (int q = 0; q <= m; ++q) {
        M.block(q * d, q * d, d, d) = Is;
        if (q + 1 <= m) M.block(q * d, (q + 1) * d, d, d) = double(q + 1) * dIs;
        if (q + 2 <= m) M.block(q * d, (q + 2) * d, d, d) = double(q + 2) * (q + 1) * a;
        if (q <= pmax) rhs.segment(q * d, d) = w[q];
      }
      Eigen::CompleteOrthogonalDecomposition<CMat> cod(M);
      cod.setThreshold(1e-6);
      const CVec sol = cod.solve(rhs);
      const double res = (M * sol - rhs).norm();
      if (!(res <= 1e-8 * std::max(1.0, rhs.norm())))
        throw numerical_error("unresolvable Jordan structure at a resonant exponent");
      x.resize(m + 1);
      for (int q = 0; q <= m; ++q) x[q] = sol.segment(q * d, d);
    }
    double scale = 0;
    for (const auto& v : x) scale = std::max(scale, v.norm());
    for (int q = 0; q < static_cast<int>(x.size()); ++q)
      if (x[q].norm() > 1e-13 * scale) out.terms.push_back({s, q, x[q]});
  }
  out.normalize();

  if (opt.terminal_rho) {
    const double rs = *opt.terminal_rho;
    const Mat A = companion_matrix(tr);
    Eigen::ComplexEigenSolver<CMat> es(A.cast<Complex>());
    const CMat E = es.eigenvectors();
    Eigen::JacobiSVD<CMat> svd(E);
    const double cond = svd.singularValues()(0) / svd.singularValues()(svd.singularValues().size() - 1);
    if (!(cond < 1e10)) throw numerical_error("companion matrix is not diagonalizable; terminal condition unavailable");
    CVec V(2 * d);
    V.head(d) = out.evaluate(rs);
    V.tail(d) = out.evaluate_D(rs);
    CVec scaled = E.partialPivLu().solve(-V);
    for (int k = 0; k < 2 * d; ++k) {
      const Complex lam = es.eigenvalues()(k);
      const Complex ck = scaled(k) / cpow(rs, lam);
      out.terms.push_back({lam, 0, ck * E.col(k).head(d)});
    }
    const double saved = out.remainder_order;
    out.remainder_order = std::numeric_limits<double>::infinity();
    out.normalize();
    out.remainder_order = saved;
  }
  return out;
}

double SeriesOperator::min_gain() const {
  double g = std::numeric_limits<double>::infinity();
  for (const auto& c : corrections) g = std::min(g, c.gain);
  return g;
}

PhgExpansion apply_series(const SeriesOperator& op, const PhgExpansion& u, double target_order) {
  PhgExpansion r = apply_indicial(op.lead, u);
  r.remainder_order = std::min(u.remainder_order, target_order);
  for (const auto& cr : op.corrections) {
    if (!(cr.gain > 0.0)) throw config_error("series corrections must have positive gain");
    const CMat a = cr.a.cast<Complex>(), b = cr.b.cast<Complex>(), c = cr.c.cast<Complex>();
    for (const auto& t : u.terms)
      if (t.s.real() + cr.gain < r.remainder_order) act_on_term(a, b, c, t, cr.gain, r.terms);
  }
  r.normalize();
  return r;
}

MatchResult expansion_match(const SeriesOperator& op, const PhgExpansion& f, double delta0, double target_order,
                            const MatchOptions& opt) {
  if (!(target_order > delta0)) throw config_error("target order must exceed the source order");
  const double zero_tol = 1e-12 * std::max(1.0, coeff_scale(f));
  MatchResult res;
  res.u = phg_zero(f.dim, target_order);
  res.u.weight_r = f.weight_r;
  PhgExpansion r = phg_truncate(f, target_order);
  r.normalize(zero_tol);
  for (int it = 0; it < opt.max_iterations; ++it) {
    if (r.terms.empty()) return res;
    PhgExpansion chosen = r;
    if (opt.one_group_per_step) {
      const Complex s0 = r.terms.front().s;
      chosen.terms.clear();
      for (const auto& t : r.terms)
        if (same_exponent(t.s, s0)) chosen.terms.push_back(t);
    }
    res.u = phg_truncate(phg_add(res.u, solve_indicial_ode(op.lead, chosen)), target_order);
    enforce_cap(res.u, "expansion_match");
    r = phg_truncate(phg_add(f, phg_scale(apply_series(op, res.u, target_order), -1.0)), target_order);
    r.normalize(zero_tol);
    ++res.iterations;
    res.residual_orders.push_back(r.terms.empty() ? target_order : lowest_order(r));
  }
  throw numerical_error("expansion matching did not reach the target order (exponent growth does not terminate)");
}

namespace {

// Monomial coefficients (in rho) of the least-squares Chebyshev fit on (0, rho_fit).
Vec chebyshev_taylor(const std::function<double(double)>& fn, int keep, double rho_fit, double& resid) {
  const int K = std::max(keep + 8, 14);
  const int M = 4 * K;
  Mat V(M, K + 1);
  Vec y(M), rho(M);
  for (int j = 0; j < M; ++j) {
    const double xj = std::cos(M_PI * (j + 0.5) / M);
    rho(j) = 0.5 * rho_fit * (1.0 + xj);
    y(j) = fn(rho(j));
    double t0 = 1, t1 = xj;
    V(j, 0) = 1;
    if (K >= 1) V(j, 1) = xj;
    for (int k = 2; k <= K; ++k) {
      const double t2 = 2 * xj * t1 - t0;
      V(j, k) = t2;
      t0 = t1;
      t1 = t2;
    }
  }
  const Vec c = V.colPivHouseholderQr().solve(y);
  resid = (V * c - y).cwiseAbs().maxCoeff();
  // T_k(x) power coefficients in x, then x = alpha rho - 1
  std::vector<Vec> T(K + 1, Vec::Zero(K + 1));
  T[0](0) = 1;
  if (K >= 1) T[1](1) = 1;
  for (int k = 2; k <= K; ++k) {
    T[k] = -T[k - 2];
    for (int m = 0; m < K; ++m) T[k](m + 1) += 2 * T[k - 1](m);
  }
  Vec px = Vec::Zero(K + 1);
  for (int k = 0; k <= K; ++k) px += c(k) * T[k];
  const double alpha = 2.0 / rho_fit;
  Vec pr = Vec::Zero(K + 1);
  for (int m = 0; m <= K; ++m) {
    // (alpha rho - 1)^m
    double binom = 1;
    for (int q = 0; q <= m; ++q) {
      pr(q) += px(m) * binom * std::pow(alpha, q) * ((m - q) % 2 ? -1.0 : 1.0);
      binom = binom * (m - q) / (q + 1);
    }
  }
  return pr.head(keep + 1);
}

}  // namespace

MetricExpansion metric_expansion(const MetricField& barg, int degree, double rho_fit) {
  if (!barg.theta_independent()) throw config_error("series expansion needs a theta-independent metric");
  if (degree < 1 || degree > 10) throw config_error("series degree must lie in [1, 10]");
  const int n = barg.n();
  const CollarChart& ch = barg.chart();
  const UDOperator op = laplacian_ud(barg, 0.0);
  MetricExpansion m;
  m.n = n;
  double ra = 0, rb = 0, rr = 0;
  m.a = chebyshev_taylor([&](double r) { return op.coeffs(ch.point(0.0, r)).a[n][n](0, 0); }, degree, rho_fit, ra);
  m.b = chebyshev_taylor([&](double r) { return op.coeffs(ch.point(0.0, r)).b[n](0, 0); }, degree, rho_fit, rb);
  m.r = chebyshev_taylor([&](double r) { return scalar_via_identity(barg, ch.point(0.0, r)) + n * (n + 1.0); },
                         degree, rho_fit, rr);
  m.fit_residual = std::max({ra, rb, rr});
  if (!(m.fit_residual < 1e-9))
    throw numerical_error("metric coefficients are not well approximated by a power series near the boundary");
  return m;
}

SeriesOperator laplacian_series(const MetricExpansion& m, double shift) {
  SeriesOperator op;
  op.lead = {Mat::Constant(1, 1, m.a(0)), Mat::Constant(1, 1, m.b(0)), Mat::Constant(1, 1, -shift)};
  for (int k = 1; k < m.a.size(); ++k)
    op.corrections.push_back({double(k), Mat::Constant(1, 1, m.a(k)), Mat::Constant(1, 1, m.b(k)), Mat::Zero(1, 1)});
  return op;
}

namespace {

// (1 + u)^alpha - sum_{m < skip} binom(alpha, m) u^m, truncated.
PhgExpansion binomial_series(const PhgExpansion& u, double alpha, double target, int skip = 0) {
  PhgExpansion out = phg_zero(1, target);
  PhgExpansion power = phg_scalar(0.0, 0, 1.0, target);
  double binom = 1;
  const double ord = u.terms.empty() ? std::numeric_limits<double>::infinity() : lowest_order(u);
  for (int m = 0; m <= 4 * kMaxPhgTerms; ++m) {
    if (m * ord >= target) break;
    if (m >= skip) out = phg_add(out, phg_scale(power, binom));
    power = phg_truncate(phg_mul(power, u), target);
    binom = binom * (alpha - m) / (m + 1);
    enforce_cap(out, "lichnerowicz_expansion");
  }
  return out;
}

void require_real(const PhgExpansion& e, const char* what) {
  for (const auto& t : e.terms)
    if (std::abs(t.s.imag()) > 0.0)
      throw config_error(std::string(what) + ": the nonlinear expansion supports real exponents only");
}

}  // namespace

PhgExpansion lichnerowicz_expansion(const MetricExpansion& g, const PhgExpansion& A, const PhgExpansion& B,
                                    double target_order) {
  const int n = g.n;
  if (n < 2) throw config_error("the Lichnerowicz equation needs n >= 2");
  if (A.dim != 1 || B.dim != 1) throw shape_error("A and B must be scalar expansions");
  require_real(A, "A");
  require_real(B, "B");
  for (const PhgExpansion* e : {&A, &B})
    if (!e->terms.empty() && lowest_order(*e) < 1.0 - 1e-12)
      throw config_error("A and B must vanish to first order at the boundary");
  if (std::abs(g.r(0)) > 1e-8) throw config_error("metric is not weakly asymptotically hyperbolic (R[g] + n(n+1) != 0 on the boundary)");

  const double k = (n - 1.0) / (4.0 * n);
  const double c = (n * n - 1.0) / 4.0;
  const double p = (n + 3.0) / (n - 1.0);
  const double q1 = (3.0 * n + 1.0) / (n - 1.0);
  const double q2 = (n + 1.0) / (n - 1.0);

  PhgExpansion r = phg_zero(1, target_order);
  for (int j = 1; j < g.r.size(); ++j) r.terms.push_back({double(j), 0, CVec::Constant(1, g.r(j))});
  if (target_order > g.r.size()) r.remainder_order = double(g.r.size());
  r.normalize();

  const SeriesOperator P = laplacian_series(g, n + 1.0);
  const double zero_tol = 1e-13;
  PhgExpansion u = phg_zero(1, target_order);
  for (int it = 0; it < 200; ++it) {
    const PhgExpansion one_plus_u = phg_add(phg_scalar(0.0, 0, 1.0, target_order), u);
    PhgExpansion F = phg_scale(phg_mul(r, one_plus_u), k);
    F = phg_add(F, phg_scale(phg_mul(A, binomial_series(u, -q1, target_order)), -1.0));
    F = phg_add(F, phg_scale(phg_mul(B, binomial_series(u, -q2, target_order)), -1.0));
    F = phg_add(F, phg_scale(binomial_series(u, p, target_order, 2), c));
    PhgExpansion res = phg_truncate(phg_add(F, phg_scale(apply_series(P, u, target_order), -1.0)), target_order);
    res.normalize(zero_tol);
    if (res.terms.empty()) {
      PhgExpansion phi = phg_add(phg_scalar(0.0, 0, 1.0, target_order), u);
      phi.remainder_order = std::min(target_order, r.remainder_order);
      phi.normalize();
      return phi;
    }
    u = phg_truncate(phg_add(u, solve_indicial_ode(P.lead, res)), target_order);
    enforce_cap(u, "lichnerowicz_expansion");
  }
  throw numerical_error("Lichnerowicz expansion did not terminate");
}

}  // namespace wahkit
