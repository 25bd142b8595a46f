// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: maskpos_acceptance [trials] [workers]

#include <cstdlib>
#include <iostream>

#include "maskpos/acceptance.hpp"

int main(int argc, char** argv) {
  maskpos::acceptance::Options opts;
  if (argc > 1) opts.trials = std::strtoull(argv[1], nullptr, 10);
  if (argc > 2) opts.workers = static_cast<unsigned>(std::strtoul(argv[2], nullptr, 10));
  try {
    const auto results = maskpos::acceptance::run_all(opts, [](const auto& r) {
      std::cout << maskpos::acceptance::format_line(r) << std::endl;
    });
    std::size_t failed = 0;
    for (const auto& r : results) failed += r.passed ? 0 : 1;
    std::cout << results.size() - failed << "/" << results.size() << " criteria passed\n";
    return failed == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "acceptance suite aborted: " << e.what() << "\n";
    return 2;
  }
}
