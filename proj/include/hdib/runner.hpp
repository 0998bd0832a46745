// Scenario-driven experiment runner: loads scenario configs, orchestrates the
// fiber calculus / Hodge engine / bundle / curvature / modular-family layers,
// runs the requested checks, and emits one JSON report plus one CSV table per
// check.  Reports are byte-stable: every float is formatted through the fixed
// scientific printer, reductions are sequential, and randomness is seeded per
// check from the scenario seed.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hdib/config.hpp"
#include "hdib/family.hpp"
#include "hdib/wp.hpp"

namespace hdib {

// a weight/twist table entry: coef * (fiber modes) * (base factor), added
// together with its complex conjugate so the field stays real
struct FieldTermSpec {
  enum class Base { constant, re, im, abs2, cross };
  std::array<std::pair<int, int>, 2> mode{{{0, 0}, {0, 0}}};
  Base base = Base::constant;
  int j = 0, k = 0;  // parameter indices for re/im/abs2 (j) and cross (j,k)
  double coef = 0.0;
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 1;

  bool has_fiber = false;
  FiberSpec fiber;
  int p = 1, q = 0;  // target bidegree

  int m = 1;                      // parameter count
  std::vector<double> gb_diag;    // base metric diagonal (empty = no base form)
  cplx gb_off = 0.0;              // (1,2) entry when m = 2
  double h_fd = 0.04;             // finite-difference step for the oracle route
  double eps = 1e-2;              // commutator regularization
  double radius = 0.4;            // parameter sampling radius (gate)
  std::vector<FieldTermSpec> weight_terms;
  std::vector<FieldTermSpec> twist_terms;

  std::vector<std::string> checks;
  std::vector<int> ladder;        // resolution ladder for --refine
  std::optional<double> closed_form_c;  // radial weight constant
  std::string gate_expect = "open";     // "open" or "blocked"
  std::optional<ModularSpec> modular;

  std::map<std::string, double> tol;  // named tolerances (defaults pinned)
};

// names of all supported checks, in canonical order
const std::vector<std::string>& known_checks();

// parse + validate; throws ConfigError with origin:line diagnostics
Scenario load_scenario(const Config& cfg);

struct RunOverrides {
  std::optional<int> resolution;
  std::optional<double> fd_step;
  std::optional<double> eps;
  std::optional<std::vector<std::string>> checks;
  std::optional<std::uint64_t> seed;
  bool refine = false;
};

struct Report {
  std::string name;
  bool pass = false;
  std::string json;  // serialized report, byte-stable for fixed config+seed
  std::vector<std::pair<std::string, std::string>> csvs;  // filename, content
  std::string summary;  // per-check PASS/FAIL lines for stdout
};

Report run_scenario(const Scenario& s, const RunOverrides& o);

// full command-line surface; returns the process exit code:
// 0 = all checks passed, 1 = some check failed, 2 = configuration error
int run_cli(int argc, const char* const* argv);

}  // namespace hdib
