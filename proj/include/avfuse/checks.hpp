#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace avf {

inline constexpr double kLayerGradTolerance = 1e-6;
inline constexpr double kComposedGradTolerance = 1e-4;

struct GradCheckEntry {
  std::string name;
  bool composed = false;
  double tolerance = kLayerGradTolerance;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

// Finite-difference check of every layer, every fusion variant and the full
// model in each variant, on small random fp64 instances drawn from seed.
std::vector<GradCheckEntry> gradient_suite(std::uint64_t seed = 1);

std::string gradient_suite_report(const std::vector<GradCheckEntry>& entries);

}  // namespace avf
