#include "wahkit/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "wahkit/curvature.hpp"
#include "wahkit/errors.hpp"
#include "wahkit/htensor.hpp"
#include "wahkit/indicial.hpp"
#include "wahkit/mollify.hpp"
#include "wahkit/norms.hpp"
#include "wahkit/phg.hpp"
#include "wahkit/yamabe.hpp"

namespace wahkit {

namespace {

using Json = nlohmann::ordered_json;

struct OptSpec {
  std::string key;
  std::string def;  // empty means unset
  std::string help;
  bool multi = false;  // repeatable; values joined with ';'
};

struct CommandSpec {
  std::string name;
  std::string help;
  bool takes_metric = true;
  bool metric_required = false;
  bool has_table = false;
  std::vector<OptSpec> options;
  std::map<std::string, double> tolerances;
};

const std::vector<CommandSpec>& commands() {
  static const std::vector<CommandSpec> specs = {
      {"curvature-report",
       "curvature deviations on a rho-ladder, decay slopes and the WAH report",
       true,
       false,
       true,
       {{"rho-lo", "1e-5", "smallest ladder rho"},
        {"rho-hi", "1e-1", "largest ladder rho"},
        {"count", "41", "ladder points"},
        {"theta", "0", "theta^1 of the ladder"}},
       {{"wah", 1e-4}}},
      {"classify",
       "regularity classes of a catalog field",
       true,
       false,
       false,
       {{"field", "rho_sin_log", "field catalog name"},
        {"field-param", "", "field parameter key=value", true},
        {"alpha", "0.5", "Holder exponent"},
        {"delta", "0", "conormal weight"},
        {"decades", "6", "refinement decades"},
        {"holder-k", "0,1,2", "weighted Holder k values"},
        {"holder-delta", "0", "weighted Holder weights"},
        {"script-m", "1,2", "script C m values"},
        {"script-k", "1,2", "script C k values"},
        {"sobolev-p", "2", "Sobolev exponent of the H^{0,p}_delta trace"},
        {"sobolev-delta", "0", "Sobolev weight"}},
       {{"phg", 1e-8}}},
      {"regularize",
       "group-convolution regularization of a catalog field on a rho-ladder",
       true,
       false,
       true,
       {{"field", "rho_sin_log", "field catalog name or little_f (of the metric)"},
        {"field-param", "", "field parameter key=value", true},
        {"m", "1", "regularization order (1 or 2)"},
        {"width", "0.25", "kernel width"},
        {"order", "8", "Gauss-Legendre nodes per dimension"},
        {"rho-lo", "1e-4", "smallest ladder rho"},
        {"rho-hi", "1e-1", "largest ladder rho"},
        {"count", "13", "ladder points"},
        {"theta", "0", "theta^1 of the ladder"}},
       {}},
      {"htensor-check",
       "invariance residuals of H(rho) and the boundary obstruction",
       true,
       false,
       false,
       {{"conformal-factor", "0.5", "a in theta = exp(a (rho^2 + rho sin(theta^1) / 2))"},
        {"scale", "2", "constant c of the homogeneity check"}},
       {{"obstruction", 1e-4}}},
      {"indicial",
       "characteristic exponents, indicial radius and weight window",
       true,
       false,
       false,
       {{"operator", "laplacian", "laplacian or constant"},
        {"c-shift", "0", "c in Delta_g - c"},
        {"weight", "", "weight delta to test against the window"},
        {"p", "", "Sobolev exponent of the window (Holder if unset)"},
        {"abar", "1", "constant operator: coefficient of D^2"},
        {"bbar", "", "constant operator: coefficient of D (default -n)"},
        {"cbar", "", "constant operator: coefficient of 1 (default -c-shift)"},
        {"theta", "0", "theta^1 of the boundary point"}},
       {}},
      {"phg-solve",
       "formal polyhomogeneous solution of P u = f",
       true,
       false,
       false,
       {{"operator", "laplacian", "laplacian or constant"},
        {"c-shift", "0", "c in Delta_g - c"},
        {"source", "", "source term \"s,p,value\" or \"re,im,p,value\"", true},
        {"target-order", "", "solve modulo O(rho^target) (default: largest source exponent + 1)"},
        {"abar", "1", "constant operator: coefficient of D^2"},
        {"bbar", "", "constant operator: coefficient of D (default -n)"},
        {"cbar", "", "constant operator: coefficient of 1 (default -c-shift)"},
        {"theta", "0", "theta^1 of the boundary point"}},
       {}},
      {"yamabe",
       "constant scalar curvature (or Lichnerowicz) solve on the collar",
       true,
       true,
       true,
       {{"A", "zero", "A coefficient: zero or NAME[:key=value,...] from the field catalog (key scale multiplies)"},
        {"B", "zero", "B coefficient, same form as A"},
        {"points", "1024", "t-grid points"},
        {"gauge-fix", "false", "fix the gauge first so that phi - 1 = O(rho^2)"},
        {"residual-lo", "1e-3", "smallest rho of the curvature residual"},
        {"residual-hi", "1", "largest rho of the curvature residual"}},
       {{"tol", 1e-10}}},
  };
  return specs;
}

const CommandSpec& command_spec(const std::string& name) {
  for (const auto& c : commands())
    if (c.name == name) return c;
  std::string valid;
  for (const auto& c : commands()) valid += (valid.empty() ? "" : ", ") + c.name;
  throw usage_error("unknown command '" + name + "'; valid commands: " + valid);
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& what, const std::string& s) {
  const std::string t = trim(s);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v))
    throw validation_error(what + ": '" + s + "' is not a finite number");
  return v;
}

int to_int(const std::string& what, const std::string& s) {
  const double v = to_double(what, s);
  if (v != std::floor(v) || std::abs(v) > 1e9) throw validation_error(what + ": '" + s + "' is not an integer");
  return static_cast<int>(v);
}

bool to_bool(const std::string& what, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw validation_error(what + ": '" + s + "' is not true or false");
}

std::vector<double> to_doubles(const std::string& what, const std::string& s) {
  std::vector<double> out;
  for (const auto& part : split(s, ',')) out.push_back(to_double(what, part));
  return out;
}

std::vector<int> to_ints(const std::string& what, const std::string& s) {
  std::vector<int> out;
  for (const auto& part : split(s, ',')) out.push_back(to_int(what, part));
  return out;
}

// "k=v" items; `sep` separates items.
ParamMap to_params(const std::string& what, const std::string& s, char sep) {
  ParamMap out;
  for (const auto& item : split(s, sep)) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw validation_error(what + ": expected key=value, got '" + item + "'");
    const std::string key = trim(item.substr(0, eq));
    if (key.empty() || out.count(key)) throw validation_error(what + ": empty or repeated key in '" + item + "'");
    out[key] = to_double(what + " " + key, item.substr(eq + 1));
  }
  return out;
}

std::string keys_of(const std::vector<std::string>& keys) { return "valid keys: " + join(keys, ", "); }

void check_json_keys(const Json& j, const std::vector<std::string>& valid, const std::string& where) {
  if (!j.is_object()) throw validation_error(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(valid.begin(), valid.end(), k) == valid.end())
      throw validation_error("unknown key '" + k + "' in " + where + "; " + keys_of(valid));
}

CollarChart chart_of(const RunConfig& cfg) {
  GridSpec gs;
  gs.points = cfg.chart_points;
  gs.t_max = cfg.t_max;
  return make_collar_chart(cfg.n, cfg.rho_star, gs);
}

// Metric default: hyperbolic unless the command needs it spelled out or the operator is constant.
bool wants_metric(const RunConfig& cfg) {
  if (cfg.command == "indicial" || cfg.command == "phg-solve") return cfg.options.at("operator") == "laplacian";
  return command_spec(cfg.command).takes_metric;
}

std::string opt(const RunConfig& cfg, const std::string& key) { return cfg.options.at(key); }
double dopt(const RunConfig& cfg, const std::string& key) { return to_double("--" + key, opt(cfg, key)); }
int iopt(const RunConfig& cfg, const std::string& key) { return to_int("--" + key, opt(cfg, key)); }

struct CoefficientExpr {
  std::string name = "zero";
  ParamMap params;
  double scale = 1.0;
};

CoefficientExpr parse_coefficient(const std::string& what, const std::string& s) {
  CoefficientExpr e;
  const auto colon = s.find(':');
  e.name = trim(s.substr(0, colon));
  if (colon != std::string::npos) e.params = to_params(what, s.substr(colon + 1), ',');
  if (auto it = e.params.find("scale"); it != e.params.end()) {
    e.scale = it->second;
    e.params.erase(it);
  }
  if (e.name == "zero") {
    if (!e.params.empty() || e.scale != 1.0) throw validation_error(what + ": zero takes no parameters");
    return e;
  }
  const auto names = field_catalog_names();
  if (std::find(names.begin(), names.end(), e.name) == names.end())
    throw catalog_error(what + ": unknown field '" + e.name + "'; valid names: zero, " + join(names, ", "));
  return e;
}

void validate_config(const RunConfig& cfg) {
  const CommandSpec& spec = command_spec(cfg.command);
  if (cfg.format != "json" && cfg.format != "csv") throw usage_error("--format must be json or csv");
  if (cfg.format == "csv" && !spec.has_table)
    throw usage_error(cfg.command + " writes JSON only; --format csv conflicts with it");
  if (!(cfg.n >= 1 && cfg.n <= 8)) throw validation_error("--n must be in [1, 8]");
  if (!(cfg.rho_star > 0)) throw validation_error("--rho-star must be positive");
  for (const auto& [k, v] : cfg.tolerances)
    if (!(v > 0) || !std::isfinite(v)) throw validation_error("tolerance " + k + " must be positive");

  if (wants_metric(cfg)) {
    if (cfg.metric.empty()) throw usage_error(cfg.command + " needs --metric");
    const CollarChart chart = chart_of(cfg);
    catalog_metric(cfg.metric, cfg.metric_params, chart);  // validates the name and parameters
  } else if (!cfg.metric.empty() || !cfg.metric_params.empty()) {
    throw usage_error("--metric conflicts with --operator constant");
  }

  // command options parse as their types
  if (cfg.command == "curvature-report" || cfg.command == "regularize") {
    if (!(dopt(cfg, "rho-lo") > 0 && dopt(cfg, "rho-lo") < dopt(cfg, "rho-hi")))
      throw validation_error("need 0 < --rho-lo < --rho-hi");
    if (iopt(cfg, "count") < 8) throw validation_error("--count must be at least 8 (the decay fit needs them)");
    dopt(cfg, "theta");
  }
  if (cfg.command == "classify" || cfg.command == "regularize") {
    const std::string f = opt(cfg, "field");
    const auto names = field_catalog_names();
    const bool little = cfg.command == "regularize" && f == "little_f";
    if (!little && std::find(names.begin(), names.end(), f) == names.end())
      throw catalog_error("unknown field '" + f + "'; valid names: " + join(names, ", ") +
                          (cfg.command == "regularize" ? ", little_f" : ""));
    const ParamMap fp = to_params("--field-param", opt(cfg, "field-param"), ';');
    if (little && !fp.empty()) throw usage_error("little_f takes no --field-param");
    if (!little) field_catalog(f, fp, cfg.n);
  }
  if (cfg.command == "classify") {
    dopt(cfg, "alpha");
    dopt(cfg, "delta");
    dopt(cfg, "sobolev-delta");
    if (!(dopt(cfg, "sobolev-p") >= 1)) throw validation_error("--sobolev-p must be at least 1");
    if (iopt(cfg, "decades") < 4) throw validation_error("--decades must be at least 4");
    to_ints("--holder-k", opt(cfg, "holder-k"));
    to_doubles("--holder-delta", opt(cfg, "holder-delta"));
    to_ints("--script-m", opt(cfg, "script-m"));
    to_ints("--script-k", opt(cfg, "script-k"));
  }
  if (cfg.command == "regularize") {
    const int m = iopt(cfg, "m");
    if (m != 1 && m != 2) throw validation_error("--m must be 1 or 2");
    if (!(dopt(cfg, "width") > 0)) throw validation_error("--width must be positive");
    if (iopt(cfg, "order") < 2) throw validation_error("--order must be at least 2");
    if (opt(cfg, "field") != "little_f" &&
        field_catalog(opt(cfg, "field"), to_params("", opt(cfg, "field-param"), ';'), cfg.n).rank() != 0)
      throw validation_error("regularize needs a scalar field");
  }
  if (cfg.command == "htensor-check") {
    dopt(cfg, "conformal-factor");
    if (dopt(cfg, "scale") == 0.0) throw validation_error("--scale must be nonzero");
  }
  if (cfg.command == "indicial" || cfg.command == "phg-solve") {
    const std::string op = opt(cfg, "operator");
    if (op != "laplacian" && op != "constant") throw validation_error("--operator must be laplacian or constant");
    dopt(cfg, "c-shift");
    dopt(cfg, "theta");
    for (const char* k : {"abar", "bbar", "cbar"})
      if (!opt(cfg, k).empty()) {
        if (op == "laplacian" && (std::string(k) != "abar" || opt(cfg, k) != "1"))
          throw usage_error(std::string("--") + k + " conflicts with --operator laplacian");
        dopt(cfg, k);
      }
  }
  if (cfg.command == "indicial") {
    if (!opt(cfg, "weight").empty()) dopt(cfg, "weight");
    if (!opt(cfg, "p").empty() && !(dopt(cfg, "p") > 1)) throw validation_error("--p must exceed 1");
  }
  if (cfg.command == "phg-solve") {
    if (opt(cfg, "source").empty()) throw usage_error("phg-solve needs at least one --source");
    for (const auto& src : split(opt(cfg, "source"), ';')) {
      const auto parts = split(src, ',');
      if (parts.size() != 3 && parts.size() != 4)
        throw validation_error("--source must be \"s,p,value\" or \"re,im,p,value\", got '" + src + "'");
      for (const auto& p : parts) to_double("--source", p);
      if (to_int("--source p", parts[parts.size() - 2]) < 0) throw validation_error("--source p must be >= 0");
    }
    if (!opt(cfg, "target-order").empty()) dopt(cfg, "target-order");
  }
  if (cfg.command == "yamabe") {
    for (const char* k : {"A", "B"}) {
      const CoefficientExpr e = parse_coefficient(std::string("--") + k, opt(cfg, k));
      if (e.name == "zero") continue;
      const TensorField u = field_catalog(e.name, e.params, cfg.n);
      if (!u.theta_independent || u.rank() != 0)
        throw validation_error(std::string("--") + k + " must be a theta-independent scalar field");
    }
    if (iopt(cfg, "points") < 16) throw validation_error("--points must be at least 16");
    to_bool("--gauge-fix", opt(cfg, "gauge-fix"));
    if (!(dopt(cfg, "residual-lo") > 0 && dopt(cfg, "residual-lo") < dopt(cfg, "residual-hi")))
      throw validation_error("need 0 < --residual-lo < --residual-hi");
  }
}

// ---- reports ----

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::string str() const {
    std::string out = join(header, ",") + "\n";
    for (const auto& r : rows) {
      std::vector<std::string> cells;
      for (double v : r) cells.push_back(csv_number(v));
      out += join(cells, ",") + "\n";
    }
    return out;
  }
};

// JSON has no infinities or NaN; they become null.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json nums(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

Json fit_json(const DecayFit& f) {
  return {{"slope", f.identically_zero ? Json(nullptr) : num(f.slope)},
          {"width", num(f.width)},
          {"identically_zero", f.identically_zero},
          {"log_corrected", f.log_corrected},
          {"points_used", f.points_used}};
}

double max_rel(const Mat& a, const Mat& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

Vec boundary_point(int n, double theta) {
  Vec p = Vec::Zero(n + 1);
  p(0) = theta;
  return p;
}

struct Context {
  const RunConfig& cfg;
  std::set<std::string>& ops;
  Json report;
  Table table;
  bool has_table = false;
};

MetricField metric_of(const RunConfig& cfg, std::set<std::string>& ops) {
  ops.insert("geometry.make_collar_chart");
  ops.insert("geometry.catalog_metric");
  return catalog_metric(cfg.metric, cfg.metric_params, chart_of(cfg));
}

void curvature_report_cmd(Context& c) {
  const RunConfig& cfg = c.cfg;
  const MetricField g = metric_of(cfg, c.ops);
  const CollarChart& chart = g.chart();
  const int n = cfg.n;
  const double theta = dopt(cfg, "theta");
  const Vec lad = rho_ladder(dopt(cfg, "rho-hi"), dopt(cfg, "rho-lo"), iopt(cfg, "count"));
  const int K = static_cast<int>(lad.size());
  Vec riem(K), ric(K), scal(K), drho(K), lf(K), td(K);
  double id_riem = 0, id_ric = 0, id_scalar = 0;
  const ScalarField rho_field = defining_function(n);
  c.table.header = {"rho", "dev_riem", "dev_ric", "dev_scalar", "little_f"};
  for (int k = 0; k < K; ++k) {
    const Vec x = chart.point(theta, lad(k));
    const CurvatureReport r = curvature_report(g, x);
    riem(k) = r.dev_riem;
    ric(k) = r.dev_ric;
    scal(k) = r.dev_scalar;
    drho(k) = std::abs(r.drho2 - 1.0);
    lf(k) = r.little_f;
    c.table.rows.push_back({lad(k), r.dev_riem, r.dev_ric, r.dev_scalar, little_f(g, x)});
    td(k) = std::abs(taylor_defect(rho_field, g, x));
    const Tensor22 direct = riemann_direct(g, x);
    id_riem = std::max(id_riem, max_rel(riem_via_identity(g, x).c, direct.c));
    id_ric = std::max(id_ric, max_rel(ricci_via_identity(g, x), direct.contract()));
    id_scalar = std::max(id_scalar, std::abs(scalar_via_identity(g, x) - direct.full_contraction()) /
                                        std::max(1.0, std::abs(direct.full_contraction())));
  }
  c.ops.insert({"curvature.little_f", "curvature.riemann_direct", "curvature.riem_via_identity",
                "curvature.ricci_via_identity", "curvature.scalar_via_identity", "curvature.kn_product",
                "curvature.taylor_defect", "curvature.decay_exponent", "htensor.defining_function"});

  const Vec x0 = chart.point(theta, lad(K - 1));
  const RiemDecomposition dec = riem_deviation_decomposition(g, x0);
  const Mat g0 = g.jet(x0).g;
  c.ops.insert("curvature.riem_deviation_decomposition");

  // blow-up at the boundary point: y^2 (Psi_r^* g - model) = J^T (gbar(Psi z) - gbar(p_hat)) J, over r
  Json blowup = Json::array();
  {
    const Vec ph = boundary_point(n, theta);
    Vec q0 = ph;
    q0(n) = 1e-14;
    const Mat gb = g.jet(q0).g;
    for (double r : {0.1, 0.05, 0.025}) {
      const MapHandle m = boundary_mobius_param(chart, ph, r, &g);
      const Mat J = m.jacobian(Vec::Zero(n + 1)) / r;
      double sup = 0;
      for (int a = 0; a < 3; ++a)
        for (int b = 1; b <= 3; ++b) {
          Vec z = Vec::Zero(n + 1);
          for (int i = 0; i < n; ++i) z(i) = -0.5 + 0.5 * a;
          z(n) = b / 3.0 - 0.01;
          sup = std::max(sup, (J.transpose() * (g.jet(m.forward(z)).g - gb) * J).norm());
        }
      blowup.push_back({{"r", r}, {"deviation", num(sup)}});
    }
    c.ops.insert("geometry.boundary_mobius_param");
  }

  const WahReport w = wah_equivalence_report(g, cfg.tolerances.at("wah"));
  c.ops.insert("curvature.wah_equivalence_report");
  auto cond = [](const WahCondition& x) { return Json{{"holds", x.holds}, {"witness", num(x.witness)}}; };

  c.report["slopes"] = {{"dev_riem", fit_json(decay_exponent(lad, riem))},
                        {"dev_ric", fit_json(decay_exponent(lad, ric))},
                        {"dev_scalar", fit_json(decay_exponent(lad, scal))},
                        {"drho2", fit_json(decay_exponent(lad, drho))},
                        {"little_f", fit_json(decay_exponent(lad, lf))},
                        {"taylor_defect_rho", fit_json(decay_exponent(lad, td))}};
  c.report["wah"] = {{"riem", cond(w.riem)},     {"ric", cond(w.ric)},
                     {"scalar", cond(w.scalar)}, {"drho", cond(w.drho)},
                     {"scalar_ratio", num(w.scalar_ratio)}, {"drho2", num(w.drho2)},
                     {"consistent", w.consistent()}};
  c.report["identity_check"] = {{"riem", num(id_riem)}, {"ric", num(id_ric)}, {"scalar", num(id_scalar)}};
  c.report["decomposition"] = {{"rho", lad(K - 1)},
                               {"scalar_part", num(tensor_norm(dec.scalar_part, g0))},
                               {"tf_hessian_part", num(tensor_norm(dec.tf_hessian_part, g0))},
                               {"background_part", num(tensor_norm(dec.background_part, g0))}};
  c.report["blowup"] = blowup;
  c.has_table = true;
}

Json membership_json(const std::vector<Membership>& v) {
  Json a = Json::array();
  for (const Membership& m : v)
    a.push_back({{"space", m.space},
                 {"k", m.k},
                 {"alpha", m.alpha},
                 {"delta", m.delta},
                 {"m", m.m},
                 {"member", m.member},
                 {"estimates", nums(m.estimates)}});
  return a;
}

void classify_cmd(Context& c) {
  const RunConfig& cfg = c.cfg;
  const MetricField h = metric_of(cfg, c.ops);
  const TensorField u = field_catalog(opt(cfg, "field"), to_params("", opt(cfg, "field-param"), ';'), cfg.n);
  ClassifyOptions o;
  o.decades = iopt(cfg, "decades");
  o.alpha = dopt(cfg, "alpha");
  o.conormal_delta = dopt(cfg, "delta");
  o.holder_k = to_ints("", opt(cfg, "holder-k"));
  o.holder_delta = to_doubles("", opt(cfg, "holder-delta"));
  o.script_m = to_ints("", opt(cfg, "script-m"));
  o.script_k = to_ints("", opt(cfg, "script-k"));
  o.phg_tol = cfg.tolerances.at("phg");
  const RegularityReport r = classify_regularity(u, h, o);
  c.ops.insert({"norms.classify_regularity", "norms.weighted_holder_norm", "norms.script_c_norm",
                "geometry.mobius_param"});

  // H^{0,p}_delta by refinement: the p-th powers add up over decades
  const double p = dopt(cfg, "sobolev-p");
  NormSpec sp;
  sp.p = p;
  sp.delta = dopt(cfg, "sobolev-delta");
  sp.weight_r = u.weight();
  const RefinementTrace st = refine_toward_boundary(
      h.chart(), o.rho_hi, o.decades, u.theta_independent ? 1 : 4,
      [&](const std::vector<CoverChart>& cv) { return std::pow(weighted_sobolev_norm(u, sp, cv), p); },
      [](double a, double b) { return a + b; }, [p](double v) { return std::pow(v, 1.0 / p); });
  c.ops.insert("norms.weighted_sobolev_norm");

  c.report["field"] = {{"name", u.name}, {"rank", u.rank()}, {"weight", u.weight()}};
  c.report["weighted"] = membership_json(r.weighted);
  c.report["script"] = membership_json(r.script);
  c.report["closure"] = membership_json(r.closure);
  c.report["extends_c0"] = r.extends_c0;
  c.report["lipschitz"] = r.lipschitz;
  c.report["derivative_extends"] = r.derivative_extends;
  c.report["conormal"] = {{"delta", r.conormal_delta},
                          {"in_a_delta", r.in_a_delta},
                          {"in_rho_delta_a", r.in_rho_delta_a}};
  c.report["polyhomogeneous"] = {{"member", r.polyhomogeneous},
                                 {"order", r.phg_order},
                                 {"leading", num(r.phg_leading)},
                                 {"residual", num(r.phg_residual)}};
  c.report["sobolev"] = {{"p", p},
                         {"delta", sp.delta},
                         {"rho_lo", nums(st.rho_lo)},
                         {"estimates", nums(st.values)},
                         {"finite", !st.diverges}};
}

// Catalog fields carry values only; the jet gets a centered-difference gradient. The Hessian
// is left zero, which regularize never reads.
ScalarField scalar_with_gradient(const TensorField& u) {
  ScalarField f;
  f.name = u.name;
  f.theta_independent = u.theta_independent;
  f.jet = [u](const Vec& x) {
    const int N = static_cast<int>(x.size());
    ScalarJet j = ScalarJet::constant(N, u(x)(0));
    for (int i = 0; i < N; ++i) {
      const double h = i == N - 1 ? 1e-5 * x(i) : 1e-5;
      Vec a = x, b = x;
      a(i) += h;
      b(i) -= h;
      j.d(i) = (u(a)(0) - u(b)(0)) / (2 * h);
    }
    return j;
  };
  return f;
}

void regularize_cmd(Context& c) {
  const RunConfig& cfg = c.cfg;
  const int n = cfg.n;
  const MetricField g = metric_of(cfg, c.ops);
  ScalarField tau;
  if (opt(cfg, "field") == "little_f") {
    tau = little_f_field(g);
    c.ops.insert("yamabe.little_f_field");
  } else {
    tau = scalar_with_gradient(field_catalog(opt(cfg, "field"), to_params("", opt(cfg, "field-param"), ';'), n));
  }
  const int m = iopt(cfg, "m");
  RegularizeOptions ro;
  ro.width = dopt(cfg, "width");
  ro.quad.order = iopt(cfg, "order");
  const PointFn reg = regularize(tau, n, m, ro);
  const KernelSpec psi = make_kernel(n, ro.width);
  c.ops.insert({"mollify.regularize", "mollify.make_kernel", "mollify.convolve", "mollify.group_mul"});

  const double theta = dopt(cfg, "theta");
  const Vec lad = rho_ladder(dopt(cfg, "rho-hi"), dopt(cfg, "rho-lo"), iopt(cfg, "count"));
  Vec defect(lad.size());
  c.table.header = {"rho", "tau", "tau_reg", "defect"};
  std::vector<Vec> probe;
  for (int k = 0; k < lad.size(); ++k) {
    const Vec x = g.chart().point(theta, lad(k));
    const double t = tau(x), r = reg(x);
    defect(k) = std::abs(t - r);
    c.table.rows.push_back({lad(k), t, r, defect(k)});
    if (k == 0 || k == lad.size() / 2 || k + 1 == lad.size()) probe.push_back(x);
  }
  const PointFn value = [tau](const Vec& x) { return tau(x); };
  const double comm = convolve_commutation_check(value, psi, {LeftField::Kind::rho_d_rho, 0}, probe, 1e-3, ro.quad);
  c.ops.insert("mollify.convolve_commutation_check");

  c.report["field"] = tau.name;
  c.report["m"] = m;
  c.report["kernel"] = {{"width", psi.width}, {"normalization", num(psi.normalization)}};
  c.report["defect"] = fit_json(decay_exponent(lad, defect));
  c.report["expected_slope"] = m;
  c.report["commutation_residual"] = num(comm);
  c.has_table = true;
}

void htensor_cmd(Context& c) {
  const RunConfig& cfg = c.cfg;
  const int n = cfg.n;
  const MetricField g = metric_of(cfg, c.ops);
  const double a = dopt(cfg, "conformal-factor");
  ScalarField theta;
  theta.name = "conformal factor";
  theta.theta_independent = a == 0.0;
  theta.jet = [a, n](const Vec& x) {
    const ScalarJet rho = ScalarJet::coordinate(x, n);
    const ScalarJet th = ScalarJet::coordinate(x, 0);
    return exp(a * (rho * rho + 0.5 * (rho * sin(th))));
  };
  const ScalarField omega = defining_function(n);
  const double cs = dopt(cfg, "scale");

  InvarianceReport worst;
  Json ladder = Json::array();
  for (double rho : {1e-1, 1e-2, 1e-3})
    for (double th : {0.0, 1.3}) {
      const Vec x = g.chart().point(th, rho);
      const InvarianceReport r = h_invariance_suite(g, omega, theta, cs, x);
      worst.symmetry = std::max(worst.symmetry, r.symmetry);
      worst.trace = std::max(worst.trace, r.trace);
      worst.transverse = std::max(worst.transverse, r.transverse);
      worst.homogeneity = std::max(worst.homogeneity, r.homogeneity);
      worst.conformal = std::max(worst.conformal, r.conformal);
      worst.a_conformal = std::max(worst.a_conformal, r.a_conformal);
      worst.formula_gap = std::max(worst.formula_gap, r.formula_gap);
      if (th == 0.0)
        ladder.push_back({{"rho", rho},
                          {"h_norm", num(sym_norm(g.jet(x).g, h_tensor(g, omega, x)))},
                          {"a_coeff", num(a_coeff(g, omega, x))}});
    }
  c.ops.insert({"htensor.h_invariance_suite", "htensor.h_tensor", "htensor.a_coeff", "htensor.conformal_killing",
                "htensor.defining_function"});

  c.report["invariance"] = {{"symmetry", worst.symmetry},       {"trace", worst.trace},
                            {"transverse", worst.transverse},   {"homogeneity", worst.homogeneity},
                            {"conformal", worst.conformal},     {"a_conformal", worst.a_conformal},
                            {"formula_gap", worst.formula_gap}, {"max", worst.max()}};
  c.report["h_ladder"] = ladder;
  try {
    const ObstructionReport o = boundary_obstruction_check(g, cfg.tolerances.at("obstruction"));
    c.report["obstruction"] = {{"applicable", true},
                               {"h_boundary", num(o.h_boundary)},
                               {"h_vanishes", o.h_vanishes},
                               {"riem_slope", num(o.riem_slope)},
                               {"riem_vanishes", o.riem_vanishes},
                               {"scalar_slope", num(o.scalar_slope)},
                               {"fast_decay", o.fast_decay},
                               {"consistent", o.consistent()}};
  } catch (const Error& e) {
    if (e.error_class() != ErrorClass::config) throw;
    c.report["obstruction"] = {{"applicable", false}, {"reason", e.what()}};
  }
  c.ops.insert("htensor.boundary_obstruction_check");
}

UDOperator operator_of(const RunConfig& cfg, std::set<std::string>& ops, std::optional<MetricField>& metric) {
  const int n = cfg.n;
  const double cs = dopt(cfg, "c-shift");
  if (opt(cfg, "operator") == "laplacian") {
    metric.emplace(metric_of(cfg, ops));
    ops.insert("indicial.laplacian_ud");
    return laplacian_ud(*metric, cs);
  }
  const auto one = [](double v) { return Mat::Constant(1, 1, v); };
  const double ab = dopt(cfg, "abar");
  const double bb = opt(cfg, "bbar").empty() ? -static_cast<double>(n) : dopt(cfg, "bbar");
  const double cb = opt(cfg, "cbar").empty() ? -cs : dopt(cfg, "cbar");
  ops.insert("indicial.constant_ud");
  return constant_ud(n, one(ab), one(bb), one(cb));
}

Json exponents_json(const std::vector<Exponent>& exps) {
  Json a = Json::array();
  for (const Exponent& e : exps) a.push_back({{"re", num(e.s.real())}, {"im", num(e.s.imag())}, {"mult", e.mult}});
  return a;
}

void indicial_cmd(Context& c) {
  const RunConfig& cfg = c.cfg;
  std::optional<MetricField> metric;
  const UDOperator op = operator_of(cfg, c.ops, metric);
  const Vec ph = boundary_point(cfg.n, dopt(cfg, "theta"));
  const IndicialData data = indicial_data(op, ph);
  const double radius = indicial_radius(data);
  std::optional<double> p;
  if (!opt(cfg, "p").empty()) p = dopt(cfg, "p");
  const Window w = fredholm_window(data, cfg.n, p);
  double map_residual = 0;
  for (const Exponent& e : data.exponents) {
    const CMat I = indicial_map(op, e.s, ph);
    map_residual = std::max(map_residual, Eigen::JacobiSVD<CMat>(I).singularValues().minCoeff());
  }
  c.ops.insert({"indicial.characteristic_exponents", "indicial.indicial_radius", "indicial.fredholm_window",
                "indicial.indicial_map"});

  c.report["operator"] = op.name;
  c.report["exponents"] = exponents_json(data.exponents);
  c.report["radius"] = num(radius);
  c.report["center_line"] = num(data.center_line);
  c.report["window"] = {{"kind", p ? "sobolev" : "holder"},
                        {"p", p ? Json(*p) : Json(nullptr)},
                        {"lo", num(w.lo)},
                        {"hi", num(w.hi)},
                        {"empty", w.empty()}};
  if (!opt(cfg, "weight").empty()) {
    const double d = dopt(cfg, "weight");
    c.report["weight"] = {{"delta", d}, {"admissible", w.contains(d)}};
  }
  c.report["map_residual"] = num(map_residual);
}

Json expansion_json(const PhgExpansion& u) {
  Json a = Json::array();
  for (const PhgTerm& t : u.terms)
    a.push_back({{"re_s", num(t.s.real())},
                 {"im_s", num(t.s.imag())},
                 {"p", t.p},
                 {"coeff", num(t.coeff(0).real())},
                 {"coeff_im", num(t.coeff(0).imag())}});
  return a;
}

double max_coeff(const PhgExpansion& u) {
  double m = 0;
  for (const PhgTerm& t : u.terms) m = std::max(m, t.coeff.cwiseAbs().maxCoeff());
  return m;
}

void phg_cmd(Context& c) {
  const RunConfig& cfg = c.cfg;
  std::optional<MetricField> metric;
  const UDOperator op = operator_of(cfg, c.ops, metric);
  const Vec ph = boundary_point(cfg.n, dopt(cfg, "theta"));

  PhgExpansion f = phg_zero();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& src : split(opt(cfg, "source"), ';')) {
    const std::vector<double> v = to_doubles("--source", src);
    const Complex s = v.size() == 3 ? Complex(v[0], 0.0) : Complex(v[0], v[1]);
    f = phg_add(f, phg_scalar(s, static_cast<int>(v[v.size() - 2]), v.back()));
    lo = std::min(lo, s.real());
    hi = std::max(hi, s.real());
  }
  c.ops.insert("phg.phg_add");
  const double target = opt(cfg, "target-order").empty() ? hi + 1.0 : dopt(cfg, "target-order");

  SeriesOperator series;
  if (metric) {
    series = laplacian_series(metric_expansion(*metric), dopt(cfg, "c-shift"));
    c.ops.insert({"phg.metric_expansion", "phg.laplacian_series"});
  } else {
    series.lead = *op.exact_trace;
  }
  const MatchResult res = expansion_match(series, f, lo, target);
  c.ops.insert({"phg.expansion_match", "phg.solve_indicial_ode"});

  // leading check: I(P) applied to the model solution returns the source
  const BoundaryTrace tr = boundary_trace(op, ph);
  const PhgExpansion lead = solve_indicial_ode(tr, f);
  const double lead_residual = max_coeff(phg_add(apply_indicial(tr, lead), phg_scale(f, -1.0)));
  c.ops.insert("phg.apply_indicial");
  PhgExpansion left = phg_truncate(phg_add(f, phg_scale(apply_series(series, res.u, target), -1.0)), target);
  left.normalize(1e-12 * std::max(1.0, max_coeff(f)));

  c.report["operator"] = op.name;
  c.report["exponents"] = exponents_json(characteristic_exponents(tr));
  c.report["target_order"] = target;
  c.report["expansion"] = expansion_json(res.u);
  c.report["remainder_order"] = num(res.u.remainder_order);
  c.report["has_log"] = res.u.has_log();
  c.report["iterations"] = res.iterations;
  c.report["residual_order"] = left.terms.empty() ? num(target) : num(left.terms.front().s.real());
  c.report["indicial_residual"] = num(lead_residual);
}

std::optional<PhgExpansion> coefficient_expansion(const CoefficientExpr& e) {
  if (e.name == "zero") return phg_zero();
  const auto get = [&](const std::string& k, double d) {
    auto it = e.params.find(k);
    return it == e.params.end() ? d : it->second;
  };
  if (e.name == "rho_power") return phg_scalar(get("s", 2.0), 0, e.scale);
  if (e.name == "rho_log_power") return phg_scalar(get("s", 2.5), static_cast<int>(get("l", 1.0)), e.scale);
  return std::nullopt;
}

void yamabe_cmd(Context& c) {
  const RunConfig& cfg = c.cfg;
  const int n = cfg.n;
  const MetricField g = metric_of(cfg, c.ops);
  const YamabeGrid grid = make_yamabe_grid(g.chart(), iopt(cfg, "points"));
  const int M = grid.size();
  const CoefficientExpr ea = parse_coefficient("--A", opt(cfg, "A"));
  const CoefficientExpr eb = parse_coefficient("--B", opt(cfg, "B"));
  const auto coefficient = [&](const CoefficientExpr& e) -> Vec {
    if (e.name == "zero") return Vec::Zero(M);
    const TensorField u = field_catalog(e.name, e.params, n);
    return e.scale * sample(grid, [&](const Vec& x) { return u(x)(0); });
  };
  const Vec A = coefficient(ea), B = coefficient(eb);
  const bool plain = ea.name == "zero" && eb.name == "zero";

  LichnerowiczOptions lo;
  lo.iterate.tol = cfg.tolerances.at("tol");
  lo.iterate.keep_iterates = false;
  const DiscreteMetric dm = discretize(g, grid);
  LichnerowiczResult lich;
  Vec residual;
  std::optional<GaugeFix> gauge;
  double curvature_sup = std::numeric_limits<double>::quiet_NaN();
  c.ops.insert({"yamabe.negative_gauge", "yamabe.linear_solve", "yamabe.barriers", "yamabe.choose_lambda",
                "yamabe.monotone_iterate", "yamabe.solve_lichnerowicz"});
  if (plain) {
    YamabeOptions yo;
    yo.lich = lo;
    yo.gauge_fix = to_bool("", opt(cfg, "gauge-fix"));
    yo.residual_lo = dopt(cfg, "residual-lo");
    yo.residual_hi = dopt(cfg, "residual-hi");
    const YamabeResult r = solve_yamabe(g, grid, yo);
    lich = r.lich;
    residual = r.residual;
    gauge = r.gauge;
    curvature_sup = r.sup_residual;
    c.ops.insert("yamabe.solve_yamabe");
    if (gauge) c.ops.insert("yamabe.gauge_fix_scalar");
  } else {
    if (to_bool("", opt(cfg, "gauge-fix"))) throw usage_error("--gauge-fix applies to A = B = 0 only");
    lich = solve_lichnerowicz(dm, A, B, lo);
    // fourth-order Lichnerowicz residual against g; NaN at the two end nodes
    const LichProblem F = lich_problem(dm, A, B);
    const Vec lap = laplacian_values(dm, lich.phi_total, 4);
    residual = Vec::Constant(M, std::numeric_limits<double>::quiet_NaN());
    for (int i = 1; i + 1 < M; ++i) residual(i) = lap(i) - F.F(i, lich.phi_total(i));
  }

  c.table.header = {"rho", "u", "residual"};
  for (int i = 0; i < M; ++i) c.table.rows.push_back({grid.rho(i), lich.phi_total(i) - 1.0, residual(i)});
  c.has_table = true;

  const YamabeState& s = lich.state;
  c.report["iterations"] = static_cast<int>(s.steps.size());
  c.report["lambda"] = num(s.lambda);
  c.report["lambda_final"] = num(s.lambda_final);
  c.report["N"] = num(s.barrier_N);
  c.report["u_star"] = num(s.barrier_floor);
  c.report["converged"] = s.converged;
  c.report["widenings"] = s.widenings;
  c.report["final_residual"] = num(lo.polish ? lich.polish_residual : s.lich_residual);
  c.report["monotone_residual"] = num(s.lich_residual);
  c.report["polish_iterations"] = lich.polish_iterations;
  c.report["curvature_residual"] = plain ? num(curvature_sup) : Json(nullptr);
  c.report["sup_u"] = num((lich.phi_total.array() - 1.0).abs().maxCoeff());
  c.report["gauge_slope"] = gauge ? num(gauge->slope) : Json(nullptr);

  // the formal expansion of phi at the nodes nearest 1e-2, 1e-3
  const auto ax = coefficient_expansion(ea), bx = coefficient_expansion(eb);
  if (!gauge && ax && bx) {
    try {
      const PhgExpansion formal = lichnerowicz_expansion(metric_expansion(g), *ax, *bx, 3.0);
      c.ops.insert({"phg.lichnerowicz_expansion", "phg.phg_mul", "phg.metric_expansion"});
      Json cmp = Json::array();
      for (double rho : {1e-2, 1e-3}) {
        const int i = static_cast<int>(std::lround((-std::log(rho) - grid.t_lo) / grid.h));
        if (i < 0 || i >= M) continue;
        const double num_phi = lich.phi_total(i), formal_phi = formal.evaluate(grid.rho(i))(0).real();
        cmp.push_back({{"rho", grid.rho(i)}, {"numeric", num(num_phi)}, {"formal", num(formal_phi)}});
      }
      c.report["formal"] = {{"available", true}, {"order", 3.0}, {"expansion", expansion_json(formal)},
                            {"comparison", cmp}};
    } catch (const Error& e) {
      // a diagnostic only; the numeric solve stands on its own
      c.report["formal"] = {{"available", false}, {"reason", e.what()}};
    }
  } else {
    c.report["formal"] = {{"available", false},
                          {"reason", gauge ? "gauge-fixed run" : "coefficients without a catalog expansion"}};
  }
}

Json config_json(const RunConfig& cfg, bool with_output) {
  Json j;
  j["schema"] = kSchemaVersion;
  j["command"] = cfg.command;
  if (cfg.metric.empty() && cfg.metric_params.empty()) {
    j["metric"] = nullptr;
  } else {
    Json p = Json::object();
    for (const auto& [k, v] : cfg.metric_params) p[k] = v;
    j["metric"] = {{"name", cfg.metric}, {"params", p}};
  }
  j["chart"] = {{"n", cfg.n}, {"rho_star", cfg.rho_star}, {"t_max", cfg.t_max}, {"points", cfg.chart_points}};
  Json t = Json::object();
  for (const auto& [k, v] : cfg.tolerances) t[k] = v;
  j["tolerances"] = t;
  Json o = Json::object();
  for (const auto& [k, v] : cfg.options) o[k] = v;
  j["options"] = o;
  if (with_output) j["output"] = {{"path", cfg.output}, {"format", cfg.format}};
  return j;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw config_error("cannot write " + path);
}

}  // namespace

std::vector<std::string> command_names() {
  std::vector<std::string> out;
  for (const auto& c : commands()) out.push_back(c.name);
  return out;
}

RunConfig complete_config(RunConfig cfg) {
  const CommandSpec& spec = command_spec(cfg.command);
  std::vector<std::string> valid;
  for (const auto& o : spec.options) valid.push_back(o.key);
  for (const auto& [k, v] : cfg.options)
    if (std::find(valid.begin(), valid.end(), k) == valid.end())
      throw validation_error("unknown option '" + k + "' for " + cfg.command + "; " + keys_of(valid));
  for (const auto& o : spec.options) cfg.options.try_emplace(o.key, o.def);

  std::vector<std::string> tkeys;
  for (const auto& [k, v] : spec.tolerances) tkeys.push_back(k);
  for (const auto& [k, v] : cfg.tolerances)
    if (!spec.tolerances.count(k))
      throw validation_error("unknown tolerance '" + k + "' for " + cfg.command + "; " +
                             (tkeys.empty() ? std::string("this command takes none") : keys_of(tkeys)));
  for (const auto& [k, v] : spec.tolerances) cfg.tolerances.try_emplace(k, v);

  if (cfg.metric.empty() && cfg.metric_params.empty() && !spec.metric_required && wants_metric(cfg))
    cfg.metric = "hyperbolic";
  validate_config(cfg);
  return cfg;
}

RunConfig parse_config_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("malformed JSON config: ") + e.what());
  }
  check_json_keys(j, {"schema", "command", "metric", "chart", "tolerances", "options", "output"}, "config");
  if (j.contains("schema") && j["schema"] != kSchemaVersion)
    throw validation_error("config schema must be " + std::to_string(kSchemaVersion));
  if (!j.contains("command") || !j["command"].is_string()) throw usage_error("config needs a command string");
  RunConfig cfg;
  try {
    cfg.command = j["command"].get<std::string>();
    if (j.contains("metric") && !j["metric"].is_null()) {
      const Json& m = j["metric"];
      check_json_keys(m, {"name", "params"}, "metric");
      cfg.metric = m.value("name", std::string());
      if (m.contains("params")) {
        if (!m["params"].is_object()) throw validation_error("metric params must be an object");
        for (const auto& [k, v] : m["params"].items()) cfg.metric_params[k] = v.get<double>();
      }
    }
    if (j.contains("chart")) {
      const Json& ch = j["chart"];
      check_json_keys(ch, {"n", "rho_star", "t_max", "points"}, "chart");
      cfg.n = ch.value("n", cfg.n);
      cfg.rho_star = ch.value("rho_star", cfg.rho_star);
      cfg.t_max = ch.value("t_max", cfg.t_max);
      cfg.chart_points = ch.value("points", cfg.chart_points);
    }
    if (j.contains("tolerances")) {
      if (!j["tolerances"].is_object()) throw validation_error("tolerances must be an object");
      for (const auto& [k, v] : j["tolerances"].items()) cfg.tolerances[k] = v.get<double>();
    }
    if (j.contains("options")) {
      if (!j["options"].is_object()) throw validation_error("options must be an object");
      for (const auto& [k, v] : j["options"].items()) cfg.options[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    if (j.contains("output")) {
      check_json_keys(j["output"], {"path", "format"}, "output");
      cfg.output = j["output"].value("path", std::string());
      cfg.format = j["output"].value("format", cfg.format);
    }
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("config value of the wrong type: ") + e.what());
  }
  return complete_config(cfg);
}

std::string serialize(const RunConfig& cfg) { return config_json(cfg, true).dump(2) + "\n"; }

RunConfig parse_config(const std::vector<std::string>& args) {
  CLI::App app{"wahkit: numerical toolkit for weakly asymptotically hyperbolic collars"};
  app.require_subcommand(0, 1);
  std::string config_file;
  app.add_option("--config", config_file, "read the whole configuration from a JSON file");

  struct Common {
    std::string metric;
    std::vector<std::string> metric_params, tolerances;
    std::optional<int> n, chart_points;
    std::optional<double> rho_star, t_max, tol;
    std::string output, format;
  };
  std::map<std::string, Common> common;
  std::map<std::string, std::map<std::string, std::string>> single;
  std::map<std::string, std::map<std::string, std::vector<std::string>>> multi;
  for (const CommandSpec& spec : commands()) {
    CLI::App* sub = app.add_subcommand(spec.name, spec.help);
    Common& cm = common[spec.name];
    if (spec.takes_metric) {
      sub->add_option("--metric", cm.metric, "catalog metric");
      sub->add_option("--metric-param", cm.metric_params, "metric parameter key=value (repeatable)");
    }
    sub->add_option("--n", cm.n, "boundary dimension");
    sub->add_option("--rho-star", cm.rho_star, "collar depth");
    sub->add_option("--t-max", cm.t_max, "chart t = -log rho range");
    sub->add_option("--chart-points", cm.chart_points, "chart t-grid points");
    sub->add_option("--tolerance", cm.tolerances, "tolerance key=value (repeatable)");
    sub->add_option("--output", cm.output, "output path (stdout if absent)");
    sub->add_option("--format", cm.format, "json or csv");
    if (spec.tolerances.count("tol")) sub->add_option("--tol", cm.tol, "iteration tolerance");
    for (const OptSpec& o : spec.options) {
      if (o.multi)
        sub->add_option("--" + o.key, multi[spec.name][o.key], o.help);
      else
        sub->add_option("--" + o.key, single[spec.name][o.key], o.help);
    }
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequest(app.help());
  } catch (const CLI::CallForAllHelp&) {
    throw HelpRequest(app.help("", CLI::AppFormatMode::All));
  } catch (const CLI::ParseError& e) {
    throw usage_error(e.what());
  }
  const auto subs = app.get_subcommands();
  if (!config_file.empty()) {
    if (!subs.empty() || args.size() != 2) throw usage_error("--config cannot be combined with other arguments");
    return parse_config_json(read_file(config_file));
  }
  if (subs.empty()) throw usage_error("no command given; valid commands: " + join(command_names(), ", "));
  CLI::App* sub = subs.front();
  const std::string name = sub->get_name();
  const CommandSpec& spec = command_spec(name);
  const Common& cm = common[name];

  RunConfig cfg;
  cfg.command = name;
  cfg.metric = cm.metric;
  for (const auto& p : cm.metric_params)
    for (const auto& [k, v] : to_params("--metric-param", p, ',')) {
      if (cfg.metric_params.count(k)) throw usage_error("--metric-param " + k + " given twice");
      cfg.metric_params[k] = v;
    }
  if (cm.n) cfg.n = *cm.n;
  if (cm.rho_star) cfg.rho_star = *cm.rho_star;
  if (cm.t_max) cfg.t_max = *cm.t_max;
  if (cm.chart_points) cfg.chart_points = *cm.chart_points;
  for (const auto& t : cm.tolerances)
    for (const auto& [k, v] : to_params("--tolerance", t, ',')) {
      if (cfg.tolerances.count(k)) throw usage_error("tolerance " + k + " given twice");
      cfg.tolerances[k] = v;
    }
  if (cm.tol) {
    if (cfg.tolerances.count("tol")) throw usage_error("--tol conflicts with --tolerance tol=...");
    cfg.tolerances["tol"] = *cm.tol;
  }
  cfg.output = cm.output;
  if (!cm.format.empty()) cfg.format = cm.format;
  for (const OptSpec& o : spec.options) {
    if (o.multi) {
      if (sub->count("--" + o.key) > 0) cfg.options[o.key] = join(multi[name][o.key], ";");
    } else if (sub->count("--" + o.key) > 0) {
      cfg.options[o.key] = single[name][o.key];
    }
  }
  if (spec.metric_required && cfg.metric.empty()) throw usage_error(name + " needs --metric");
  return complete_config(cfg);
}

int thread_cap() {
  const char* env = std::getenv("WAHKIT_THREADS");
  if (!env || !*env) return 1;
  const int v = to_int("WAHKIT_THREADS", env);
  if (v < 1) throw config_error("WAHKIT_THREADS must be a positive integer");
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::min(v, hw);
}

RunResult execute(const RunConfig& cfg) {
  RunResult out;
  try {
    thread_cap();  // validated; every module runs sequentially
    const RunConfig full = complete_config(cfg);
    Context c{full, out.operations, Json::object(), {}, false};
    c.report["schema"] = kSchemaVersion;
    c.report["command"] = full.command;
    c.report["config"] = config_json(full, false);
    if (full.command == "curvature-report") curvature_report_cmd(c);
    else if (full.command == "classify") classify_cmd(c);
    else if (full.command == "regularize") regularize_cmd(c);
    else if (full.command == "htensor-check") htensor_cmd(c);
    else if (full.command == "indicial") indicial_cmd(c);
    else if (full.command == "phg-solve") phg_cmd(c);
    else if (full.command == "yamabe") yamabe_cmd(c);
    out.json = c.report.dump(2) + "\n";
    if (c.has_table) out.csv = c.table.str();
  } catch (const Error& e) {
    out.exit_code = e.exit_code();
    out.error = e.what();
  }
  return out;
}

int run(const RunConfig& cfg) {
  const RunResult r = execute(cfg);
  if (r.exit_code != 0) {
    std::cerr << "wahkit: " << r.error << "\n";
    return r.exit_code;
  }
  try {
    if (cfg.format == "csv") {
      if (cfg.output.empty()) {
        std::cout << r.csv;
      } else {
        write_file(cfg.output, r.csv);
        write_file(cfg.output + ".json", r.json);
      }
    } else if (cfg.output.empty()) {
      std::cout << r.json;
    } else {
      write_file(cfg.output, r.json);
    }
  } catch (const Error& e) {
    std::cerr << "wahkit: " << e.what() << "\n";
    return e.exit_code();
  }
  return 0;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(parse_config(args));
  } catch (const HelpRequest& h) {
    std::cout << h.what();
    return 0;
  } catch (const Error& e) {
    std::cerr << "wahkit: " << e.what() << "\n";
    return e.exit_code();
  }
}

}  // namespace wahkit
