// Finite-difference verification of every differentiable building block:
// each loss term, each correlation kind, and both models on tiny configs.
#pragma once

#include <string>
#include <vector>

namespace segan::gradsuite {

struct CheckResult {
  std::string name;
  double worst_rel_err = 0.0;
  bool passed = false;
};

struct SuiteResult {
  std::vector<CheckResult> checks;
  double tolerance = 1e-5;
  bool all_passed() const;
  std::string report() const;  // one line per check
};

// Runs every check whose name contains `filter` (empty = all) against
// central finite differences at the given tolerance. Inputs are random
// 8x8-16x16 images, deterministic per run.
SuiteResult run_gradient_suite(const std::string& filter = "",
                               double tolerance = 1e-5);

}  // namespace segan::gradsuite
