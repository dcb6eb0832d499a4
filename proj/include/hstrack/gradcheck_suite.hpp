#pragma once

#include <string>
#include <vector>

namespace hstrack {

struct GradCheckEntry {
  std::string name;
  double max_error = 0.0;  // worst over seeds
  double tolerance = 1e-4;
  bool passed = false;
};

/// Finite-difference checks for every catalogued op plus the composed
/// modules (wavelet transforms, WMP block, prompt fusion, prediction head,
/// and the four losses). `filter` selects entries by substring; empty runs
/// all. `seeds` independent random restarts per entry, eps = 1e-5.
std::vector<GradCheckEntry> run_gradcheck_suite(const std::string& filter,
                                                int seeds);

}  // namespace hstrack
