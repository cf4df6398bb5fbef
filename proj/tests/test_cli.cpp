#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <regex>
#include <set>
#include <sstream>

#include "doctest.h"
#include "wahkit/cli.hpp"
#include "wahkit/errors.hpp"

using namespace wahkit;
using Json = nlohmann::json;

namespace {

RunConfig args(std::initializer_list<const char*> a) { return parse_config(std::vector<std::string>(a.begin(), a.end())); }

Json report(const RunConfig& cfg) {
  const RunResult r = execute(cfg);
  INFO(r.error);
  REQUIRE(r.exit_code == 0);
  return Json::parse(r.json);
}

int usage_exit(std::initializer_list<const char*> a, const std::string& needle = "") {
  try {
    args(a);
  } catch (const Error& e) {
    if (!needle.empty()) CHECK(std::string(e.what()).find(needle) != std::string::npos);
    return e.exit_code();
  }
  return 0;
}

}  // namespace

TEST_CASE("config parsing fills defaults and validates") {
  const RunConfig c = args({"indicial", "--operator", "laplacian", "--c-shift", "0", "--n", "3"});
  CHECK(c.command == "indicial");
  CHECK(c.metric == "hyperbolic");
  CHECK(c.n == 3);
  CHECK(c.options.at("theta") == "0");
  CHECK(c.format == "json");

  CHECK(usage_exit({"yamabe"}, "needs --metric") == 2);
  CHECK(usage_exit({"frobnicate"}) == 2);
  CHECK(usage_exit({}, "valid commands") == 2);
  CHECK(usage_exit({"indicial", "--bogus", "1"}) == 2);
  CHECK(usage_exit({"classify", "--field", "nope"}, "valid names") == 2);
  CHECK(usage_exit({"yamabe", "--metric", "nope"}) == 2);
  CHECK(usage_exit({"yamabe", "--metric", "hyperbolic", "--metric-param", "zz=1"}, "valid keys") == 2);
  CHECK(usage_exit({"yamabe", "--metric", "hyperbolic", "--A", "rho_power:q=1"}, "valid keys") == 2);
  CHECK(usage_exit({"yamabe", "--metric", "hyperbolic", "--tolerance", "wah=1"}, "valid keys: tol") == 2);
  CHECK(usage_exit({"regularize", "--m", "3"}) == 2);
  CHECK(usage_exit({"regularize", "--field", "d_rho"}, "scalar") == 2);
  CHECK(usage_exit({"phg-solve", "--source", "1,2"}) == 2);
  CHECK(usage_exit({"phg-solve"}, "--source") == 2);

  SUBCASE("conflicting flags are usage errors") {
    CHECK(usage_exit({"classify", "--format", "csv"}, "usage error") == 2);
    CHECK(usage_exit({"indicial", "--operator", "constant", "--metric", "hyperbolic"}, "usage error") == 2);
    CHECK(usage_exit({"indicial", "--cbar", "1"}, "usage error") == 2);
    CHECK(usage_exit({"yamabe", "--metric", "hyperbolic", "--tol", "1e-9", "--tolerance", "tol=1e-9"}, "usage error") ==
          2);
    CHECK(usage_exit({"--config", "x.json", "indicial"}, "usage error") == 2);
    CHECK(usage_exit({"yamabe", "--metric", "hyperbolic", "--metric", "poly_perturbed"}) == 2);
  }
  CHECK_THROWS_AS(args({"--help"}), HelpRequest);
  CHECK_THROWS_AS(args({"yamabe", "--help"}), HelpRequest);
}

TEST_CASE("JSON config round trip") {
  const std::vector<RunConfig> cfgs = {
      args({"indicial", "--operator", "laplacian", "--c-shift", "0", "--n", "3"}),
      args({"indicial", "--operator", "constant", "--abar", "2", "--cbar", "-0.3", "--p", "2.5"}),
      args({"yamabe", "--metric", "poly_perturbed", "--metric-param", "a=0.25,b=1", "--A", "rho_power:s=2,scale=0.5",
            "--tol", "1e-9", "--points", "512", "--format", "csv", "--output", "out.csv"}),
      args({"classify", "--field", "rho_log_power", "--field-param", "s=2.5", "--field-param", "l=1", "--alpha",
            "0.3", "--rho-star", "0.5", "--t-max", "10.5"}),
      args({"phg-solve", "--source", "2,0,1", "--source", "0.5,1,1,-2", "--target-order", "4"}),
      args({"curvature-report", "--metric", "angle_dependent", "--tolerance", "wah=1e-5"}),
      args({"regularize", "--field", "little_f", "--metric", "poly_perturbed", "--m", "2"}),
      args({"htensor-check", "--conformal-factor", "0.1234567890123456789"}),
  };
  for (const RunConfig& c : cfgs) {
    const std::string text = serialize(c);
    INFO(text);
    CHECK(parse_config_json(text) == c);
    CHECK(serialize(parse_config_json(text)) == text);
    CHECK(Json::parse(text)["schema"] == 1);
  }

  // the same config through a file
  const std::string path = "test_cli_config.json";
  {
    std::ofstream out(path);
    out << serialize(cfgs[0]);
  }
  CHECK(parse_config({"--config", path}) == cfgs[0]);
  std::remove(path.c_str());

  SUBCASE("unknown keys name the valid ones") {
    auto bad = [](const std::string& text, const std::string& needle) {
      try {
        parse_config_json(text);
      } catch (const Error& e) {
        CHECK(e.exit_code() == 2);
        CHECK(std::string(e.what()).find(needle) != std::string::npos);
        return;
      }
      FAIL("accepted: " << text);
    };
    bad(R"({"command": "indicial", "colour": 1})", "valid keys: schema, command, metric, chart");
    bad(R"({"command": "indicial", "chart": {"m": 2}})", "valid keys: n, rho_star, t_max, points");
    bad(R"({"command": "indicial", "options": {"flavour": "x"}})", "valid keys: operator, c-shift");
    bad(R"({"command": "indicial", "tolerances": {"tol": 1}})", "this command takes none");
    bad(R"({"command": "yamabe", "metric": {"name": "hyperbolic", "params": {"q": 1}}})", "valid keys");
    bad(R"({"command": "indicial", "schema": 2})", "schema");
    bad(R"({"command": "indicial", "chart": {"n": "three"}})", "wrong type");
    bad(R"({"command": 7})", "command");
    bad("{", "malformed");
  }
}

TEST_CASE("indicial command") {
  // hyperbolic Laplacian, n = 3: s(s - 3) = 0
  const Json j = report(args({"indicial", "--operator", "laplacian", "--c-shift", "0", "--n", "3"}));
  REQUIRE(j["exponents"].size() == 2);
  CHECK(j["exponents"][0]["re"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(j["exponents"][1]["re"].get<double>() == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(j["exponents"][0]["mult"] == 1);
  CHECK(j["radius"].get<double>() == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(j["window"]["lo"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(j["window"]["hi"].get<double>() == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(j["map_residual"].get<double>() <= 1e-12);

  // constant operator D^2 - D + 1/2: s = 1/2 +- i/2, radius 0
  const Json k = report(args({"indicial", "--operator", "constant", "--n", "1", "--bbar", "-1", "--cbar", "0.5",
                              "--weight", "0.5"}));
  REQUIRE(k["exponents"].size() == 2);
  CHECK(std::abs(k["exponents"][0]["im"].get<double>()) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(k["radius"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(k["window"]["empty"] == true);
  CHECK(k["weight"]["admissible"] == false);
}

TEST_CASE("phg-solve command") {
  // resonant: n = 2, exponents {0, 2}; rho^2 (log rho) / I'(2) with I'(s) = 2s - 2
  const Json r = report(args({"phg-solve", "--source", "2,0,1", "--n", "2"}));
  REQUIRE(r["expansion"].size() == 1);
  CHECK(r["expansion"][0]["p"] == 1);
  CHECK(r["expansion"][0]["coeff"].get<double>() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r["has_log"] == true);

  // nonresonant: rho^1 / I(1), I(1) = 1 - 2
  const Json q = report(args({"phg-solve", "--source", "1,0,3", "--n", "2"}));
  REQUIRE(q["expansion"].size() == 1);
  CHECK(q["expansion"][0]["p"] == 0);
  CHECK(q["expansion"][0]["coeff"].get<double>() == doctest::Approx(-3.0).epsilon(1e-12));
  CHECK(q["has_log"] == false);

  // a non-model metric adds higher terms; the residual order reaches the target
  const Json m = report(args({"phg-solve", "--metric", "poly_perturbed", "--source", "1,0,1", "--target-order", "4"}));
  CHECK(m["expansion"].size() > 1);
  CHECK(m["residual_order"].get<double>() >= 4.0);
}

TEST_CASE("yamabe command") {
  const RunConfig c = args({"yamabe", "--metric", "hyperbolic", "--points", "256", "--format", "csv"});
  const RunResult r = execute(c);
  REQUIRE(r.exit_code == 0);
  const Json j = Json::parse(r.json);
  CHECK(j["final_residual"].get<double>() <= 1e-10);
  CHECK(j["sup_u"].get<double>() <= 1e-10);
  for (const char* k : {"iterations", "lambda", "N", "u_star", "final_residual"}) CHECK(j.contains(k));

  // CSV: header row, then 17 significant digits in scientific notation
  std::istringstream in(r.csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "rho,u,residual");
  const std::regex cell(R"(-?[0-9]\.[0-9]{16}e[+-][0-9]{2,3}|nan)");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string v;
    int cols = 0;
    while (std::getline(ls, v, ',')) {
      CHECK(std::regex_match(v, cell));
      ++cols;
    }
    CHECK(cols == 3);
    ++rows;
  }
  CHECK(rows == 256);

  // A = rho^2 against the formal expansion: phi = 1 + rho^2 / 3 + ...
  const Json a = report(args({"yamabe", "--metric", "hyperbolic", "--points", "512", "--A", "rho_power:s=2"}));
  REQUIRE(a["formal"]["available"] == true);
  for (const auto& row : a["formal"]["comparison"])
    CHECK(row["numeric"].get<double>() == doctest::Approx(row["formal"].get<double>()).epsilon(1e-6));
  CHECK(a["curvature_residual"].is_null());
}

TEST_CASE("classify command reproduces the rho sin(log rho) example") {
  const Json j = report(args({"classify", "--field", "rho_sin_log", "--decades", "5", "--holder-k", "0"}));
  for (const auto& m : j["script"])
    if (m["m"] == 1) CHECK(m["member"] == true);
  CHECK(j["extends_c0"] == true);
  CHECK(j["lipschitz"] == true);
  CHECK(j["derivative_extends"] == false);
  for (const auto& m : j["closure"]) CHECK(m["member"] == (m["k"] == 0));
}

TEST_CASE("regularize and htensor-check commands") {
  const RunResult r = execute(args({"regularize", "--field", "rho_power", "--field-param", "s=1", "--count", "9",
                                    "--rho-lo", "1e-3", "--format", "csv"}));
  REQUIRE(r.exit_code == 0);
  CHECK(r.csv.rfind("rho,tau,tau_reg,defect\n", 0) == 0);
  const Json j = Json::parse(r.json);
  CHECK(j["kernel"]["normalization"].get<double>() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(j["commutation_residual"].get<double>() <= 1e-6);

  const Json h = report(args({"htensor-check", "--metric", "hyperbolic"}));
  CHECK(h["invariance"]["max"].get<double>() <= 1e-8);
  CHECK(h["obstruction"]["applicable"] == true);
  CHECK(h["obstruction"]["h_vanishes"] == true);
  const Json p = report(args({"htensor-check", "--metric", "poly_perturbed"}));
  CHECK(p["obstruction"]["applicable"] == false);
}

TEST_CASE("exit codes per failure class") {
  CHECK(execute(args({"yamabe", "--metric", "hyperbolic", "--points", "128", "--tol", "1e-300"})).exit_code == 3);
  CHECK(execute(args({"phg-solve", "--metric", "poly_perturbed", "--source", "0.5,0,1", "--source", "0.7,0,1",
                      "--source", "0.9,0,1", "--target-order", "40"}))
            .exit_code == 5);
  // no catalog input reaches a barrier failure through the CLI; the class still maps to 4
  CHECK(barrier_error("x").exit_code() == 4);
  CHECK(config_error("x").exit_code() == 2);

  RunConfig bad = args({"indicial"});
  bad.options["operator"] = "cubic";
  CHECK(execute(bad).exit_code == 2);
}

TEST_CASE("WAHKIT_THREADS") {
  const RunConfig c = args({"indicial"});
  unsetenv("WAHKIT_THREADS");
  CHECK(thread_cap() == 1);
  setenv("WAHKIT_THREADS", "1000000", 1);
  CHECK(thread_cap() >= 1);
  CHECK(execute(c).exit_code == 0);
  setenv("WAHKIT_THREADS", "0", 1);
  CHECK(execute(c).exit_code == 2);
  setenv("WAHKIT_THREADS", "four", 1);
  CHECK(execute(c).exit_code == 2);
  unsetenv("WAHKIT_THREADS");
}

TEST_CASE("reports are byte-identical across runs") {
  const std::vector<RunConfig> cfgs = {
      args({"indicial", "--n", "2", "--c-shift", "1"}),
      args({"phg-solve", "--metric", "poly_perturbed", "--source", "1,0,1", "--target-order", "3"}),
      args({"yamabe", "--metric", "poly_perturbed", "--points", "128", "--format", "csv"}),
      args({"regularize", "--count", "9"}),
      args({"curvature-report", "--metric", "log_oscillation", "--count", "9", "--format", "csv"}),
  };
  for (const RunConfig& c : cfgs) {
    const RunResult a = execute(c), b = execute(c);
    REQUIRE(a.exit_code == 0);
    CHECK(a.json == b.json);
    CHECK(a.csv == b.csv);
    CHECK(a.json.find("time") == std::string::npos);
  }
}

TEST_CASE("coverage audit: every module operation is reachable from a subcommand") {
  const std::vector<std::string> required = {
      "geometry.make_collar_chart", "geometry.mobius_param", "geometry.boundary_mobius_param",
      "geometry.catalog_metric",

      "curvature.kn_product", "curvature.riemann_direct", "curvature.riem_via_identity",
      "curvature.ricci_via_identity", "curvature.scalar_via_identity", "curvature.riem_deviation_decomposition",
      "curvature.little_f", "curvature.taylor_defect", "curvature.decay_exponent", "curvature.wah_equivalence_report",

      "norms.weighted_holder_norm", "norms.weighted_sobolev_norm", "norms.script_c_norm", "norms.classify_regularity",

      "mollify.group_mul", "mollify.make_kernel", "mollify.convolve", "mollify.convolve_commutation_check",
      "mollify.regularize",

      "htensor.conformal_killing", "htensor.a_coeff", "htensor.h_tensor", "htensor.h_invariance_suite",
      "htensor.boundary_obstruction_check",

      "indicial.laplacian_ud", "indicial.indicial_map", "indicial.characteristic_exponents",
      "indicial.indicial_radius", "indicial.fredholm_window",

      "phg.phg_add", "phg.phg_mul", "phg.apply_indicial", "phg.solve_indicial_ode", "phg.expansion_match",
      "phg.lichnerowicz_expansion",

      "yamabe.linear_solve", "yamabe.negative_gauge", "yamabe.gauge_fix_scalar", "yamabe.barriers",
      "yamabe.choose_lambda", "yamabe.monotone_iterate", "yamabe.solve_lichnerowicz", "yamabe.solve_yamabe",
  };
  const std::vector<RunConfig> runs = {
      args({"curvature-report", "--metric", "poly_perturbed", "--count", "9"}),
      args({"classify", "--decades", "4", "--holder-k", "0", "--script-k", "1", "--script-m", "1"}),
      args({"regularize", "--count", "9"}),
      args({"htensor-check"}),
      args({"indicial"}),
      args({"phg-solve", "--source", "2,0,1"}),
      args({"yamabe", "--metric", "poly_perturbed", "--points", "256", "--gauge-fix", "true"}),
      args({"yamabe", "--metric", "hyperbolic", "--points", "256", "--A", "rho_power:s=2"}),
  };
  std::set<std::string> seen, commands;
  for (const RunConfig& c : runs) {
    const RunResult r = execute(c);
    INFO(c.command << ": " << r.error);
    REQUIRE(r.exit_code == 0);
    seen.insert(r.operations.begin(), r.operations.end());
    commands.insert(c.command);
  }
  CHECK(commands.size() == command_names().size());
  for (const std::string& op : required) {
    INFO(op);
    CHECK(seen.count(op) == 1);
  }
}
