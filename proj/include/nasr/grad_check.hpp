#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace nasr {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coords = 0;
  std::string worst;

  bool passed() const { return max_rel_error <= tolerance; }
};

// Central differences against backward() for every differentiable primitive,
// on random inputs drawn from `seed`. Tolerance 1e-5.
std::vector<GradCheckResult> primitive_grad_checks(std::uint64_t seed);

// Both training losses on a 3-step route over a 5-node graph with a
// randomly initialised small model, plus the value estimate on its own.
// Tolerance 1e-4.
std::vector<GradCheckResult> loss_grad_checks(std::uint64_t seed);

std::vector<GradCheckResult> run_grad_checks(std::uint64_t seed);

}  // namespace nasr
