#pragma once

// End-to-end verification suite: analytic/simulation agreement, monotonicity
// theorems, scaled-down figure reproductions, determinism and I/O exactness.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace maskpos::acceptance {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Options {
  std::size_t trials = 20000;
  unsigned workers = 0;
  std::uint64_t seed = 0x5EED;
  std::filesystem::path scratch_dir;  // empty -> a fresh directory under the system temp dir
};

std::vector<CriterionResult> run_all(const Options& options,
                                     const std::function<void(const CriterionResult&)>& on_result = {});

std::string format_line(const CriterionResult& result);

}  // namespace maskpos::acceptance
