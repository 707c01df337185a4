// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "diagdistill/tensor.hpp"

namespace diag {

/// One analytic gradient and the scalar function it differentiates, both
/// built from a seed.
struct GradProbe {
  ScalarFn f;
  Tensor at;
  Tensor analytic;
};

struct GradCase {
  std::string name;
  std::function<GradProbe(std::uint64_t seed)> make;
};

/// Every analytic gradient the trainers rely on.
const std::vector<GradCase>& gradient_registry();

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t seeds = 0;
};

/// Central differences against each registered gradient over `seeds` seeds.
std::vector<GradCheckResult> run_gradcheck(std::size_t seeds, double h = 1e-5,
                                           std::uint64_t base_seed = 0);

}  // namespace diag
