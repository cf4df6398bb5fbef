#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "wahkit/geometry.hpp"

namespace wahkit {

constexpr int kSchemaVersion = 1;

// One run of the command-line tool. Command options are kept as strings, keyed by flag
// name without the leading dashes; parsing fills in every default.
struct RunConfig {
  std::string command;
  std::string metric;  // catalog name; empty when the command takes none
  ParamMap metric_params;
  int n = 2;
  double rho_star = 1.0;
  double t_max = 12.0;
  int chart_points = 64;
  std::map<std::string, double> tolerances;
  std::map<std::string, std::string> options;
  std::string output;  // empty writes to stdout
  std::string format = "json";

  bool operator==(const RunConfig&) const = default;
};

std::vector<std::string> command_names();

// Thrown for --help; carries the help text.
struct HelpRequest : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Arguments after the program name. `--config file.json` reads the whole config from a file
// and cannot be combined with other flags.
RunConfig parse_config(const std::vector<std::string>& args);
RunConfig parse_config_json(const std::string& text);
// Validates names and option keys and fills defaults; parse_config already does this.
RunConfig complete_config(RunConfig cfg);
std::string serialize(const RunConfig& cfg);

struct RunResult {
  int exit_code = 0;
  std::string json;
  std::string csv;  // empty for commands without a table
  std::string error;
  std::set<std::string> operations;  // module.operation names the run went through
};

// Runs without touching the disk.
RunResult execute(const RunConfig& cfg);
// Runs and writes the artifacts: JSON to `output` (stdout if empty) for format json; for csv the
// table goes to `output` and the JSON summary to `output`.json. Returns the exit code.
int run(const RunConfig& cfg);

// WAHKIT_THREADS, clamped to [1, hardware threads]; 1 when unset.
int thread_cap();

int cli_main(int argc, char** argv);

}  // namespace wahkit
