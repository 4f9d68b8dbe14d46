#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jepamatch/config.hpp"

namespace jepamatch::verify {

struct Check {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// One line per check: "<suite>/<name> PASS|FAIL <detail> (<seconds>s)".
std::string format_check(const Check &c);
bool all_passed(const std::vector<Check> &checks);

struct SuiteOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 100;
  // Negative control: the tape gradient is scaled by 1 + 1e-3 before it is
  // compared with finite differences, so every gradient check must fail.
  bool corrupt_gradients = false;
};

// Tape gradients of every loss against central differences.
std::vector<Check> run_gradcheck(const SuiteOptions &opts);
// Fused SIGReg kernel against the brute-force reference and its closed forms.
std::vector<Check> run_sigreg_oracle(const SuiteOptions &opts);
// Threshold replay, masking and repulsion hand cases.
std::vector<Check> run_curriculum(const SuiteOptions &opts);

// Reference benchmark: 4-class Gaussian mixture, d = 32, 3000 iterations.
struct E2EOptions {
  std::vector<double> gammas{1.0, 10.0};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  // Margin (JEPAMatch mean accuracy minus baseline mean accuracy) per gamma
  // recorded from a previous full run; empty disables the comparison.
  std::vector<double> pinned_margins;
  double pin_tolerance = 0.005;
  bool verbose = false;
};

RunConfig reference_benchmark_config(double gamma, std::uint64_t seed);

// Supervised-only degeneracy, phase boundary and run determinism.
std::vector<Check> run_trainer_contracts(const SuiteOptions &opts);
std::vector<Check> run_e2e(const E2EOptions &opts);

std::vector<std::string> suite_names();
// Throws ConfigError("suite") for an unknown name. "e2e" runs the trainer
// contracts followed by the reference benchmark.
std::vector<Check> run_suite(const std::string &name, const SuiteOptions &opts);

} // namespace jepamatch::verify
