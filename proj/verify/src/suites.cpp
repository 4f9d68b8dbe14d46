#include "jepamatch/verify/suites.hpp"

#include <algorithm>
#include <cstdio>

#include "jepamatch/errors.hpp"

namespace jepamatch::verify {

std::string format_check(const Check &c) {
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.2f", c.seconds);
  return c.suite + "/" + c.name + (c.passed ? " PASS " : " FAIL ") + c.detail + " (" +
         secs + "s)";
}

bool all_passed(const std::vector<Check> &checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check &c) { return c.passed; });
}

std::vector<std::string> suite_names() {
  return {"gradcheck", "sigreg-oracle", "curriculum", "e2e"};
}

std::vector<Check> run_suite(const std::string &name, const SuiteOptions &opts) {
  if (name == "gradcheck")
    return run_gradcheck(opts);
  if (name == "sigreg-oracle")
    return run_sigreg_oracle(opts);
  if (name == "curriculum")
    return run_curriculum(opts);
  if (name == "e2e") {
    auto out = run_trainer_contracts(opts);
    auto bench = run_e2e(E2EOptions{});
    out.insert(out.end(), bench.begin(), bench.end());
    return out;
  }
  throw ConfigError("suite", "unknown suite '" + name +
                                 "' (expected gradcheck, sigreg-oracle, curriculum or e2e)");
}

} // namespace jepamatch::verify
