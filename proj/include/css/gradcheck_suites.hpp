#pragma once

#include <string>
#include <vector>

namespace css::gradcheck {

struct SuiteResult {
  std::string name;
  std::size_t trials = 0;
  double max_rel_err = 0.0;
  bool pass = false;
  double seconds = 0.0;
};

inline constexpr double kStep = 1e-5;
inline constexpr double kTol = 1e-4;

/// Finite-difference suites over randomized small shapes. Available names:
/// "numeric", "encoder", "spf", "objectives", "model".
std::vector<std::string> suite_names();
SuiteResult run_suite(const std::string& name, std::size_t trials, std::uint64_t seed);
/// All suites with their default trial counts; pass = every suite passed.
std::vector<SuiteResult> run_all(std::uint64_t seed);

}  // namespace css::gradcheck
