#pragma once

// Built-in invariant suite: gradient checks, SimAM fixed points, residual
// identity, network structure, F1 oracle, feature and augmentation algebra.
// Each check carries its own small reference implementation.

#include <functional>
#include <string>
#include <vector>

namespace simres {

struct VerifyOptions {
  // Lambda used by the SimAM precondition check on a constant input. Setting
  // it to 0 is the fault-injection path: the check must then fail.
  double simam_lambda = 1e-4;
  // Exceeding this prints a warning; it never fails the suite.
  double soft_budget_seconds = 120.0;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  double seconds = 0.0;
  bool over_budget = false;

  bool passed() const;
  std::vector<std::string> failures() const;
};

std::vector<std::string> verify_check_names();

VerifyReport run_verify(const VerifyOptions& opts = {}, const std::function<void(const CheckResult&)>& on_check = {});

}  // namespace simres
