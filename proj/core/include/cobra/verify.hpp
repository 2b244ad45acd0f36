#pragma once

// Self-check of every module invariant, runnable from the CLI.

#include <cstdint>
#include <string>
#include <vector>

namespace cobra::verify {

struct VerifyOptions {
  std::uint64_t seed = 0;
  // Fault injection: perturb the first kernel tap inside the LTI suite so
  // the convolution no longer matches c . b_bar.
  bool corrupt_kernel = false;
  // Skip the wall-clock suites (scaling ratios, throughput timing).
  bool skip_timing = false;
  // Only run suites whose name is listed (empty: all).
  std::vector<std::string> only;
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::size_t cases = 0;
  double seconds = 0.0;
  std::string detail;
};

struct VerifyReport {
  std::vector<SuiteResult> suites;

  bool passed() const;
  std::string text() const;
  std::string json() const;
};

std::vector<std::string> suite_names();
VerifyReport run_verify(const VerifyOptions& opts = {});

}  // namespace cobra::verify
