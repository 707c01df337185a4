// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace diag {

/// Denoising steps allocated to each chunk, in generation order.
class StepSchedule {
 public:
  StepSchedule() = default;
  explicit StepSchedule(std::vector<int> steps, bool cyclic_extension = false,
                        bool require_monotone = false);

  const std::vector<int>& steps() const { return steps_; }
  std::size_t chunks() const { return steps_.size(); }
  bool cyclic_extension() const { return cyclic_; }
  int total_steps() const;
  bool is_monotone_non_increasing() const;

  // Steps for chunk k (0-based); wraps when cyclic, throws otherwise.
  int steps_for_chunk(std::size_t k) const;

  // Digit string, e.g. "4322222".
  std::string str() const;

  friend bool operator==(const StepSchedule&, const StepSchedule&) = default;

 private:
  std::vector<int> steps_;
  bool cyclic_ = false;
};

/// Abstract per-forward cost model used for latency/throughput accounting.
struct CostModel {
  double cost_per_forward = 1.0;
  int frames_per_chunk = 3;
  int nfe_multiplier = 2;

  void validate() const;
};

struct Accounting {
  std::string schedule;
  int nfe = 0;
  double first_chunk_latency = 0.0;
  double in_flight_latency = 0.0;
  double throughput = 0.0;
};

StepSchedule parse_schedule(std::string_view digits);

int nfe_count(const StepSchedule& sched, const CostModel& cost = {});

/// Per-step timesteps from 1000 down to 100: [1000] for one step,
/// [1000, 100] for two, rounded linear interpolation otherwise.
std::vector<int> timesteps_for(int steps);

Accounting simulate(const StepSchedule& sched, const CostModel& cost = {});

StepSchedule extend_cyclically(const StepSchedule& sched, std::size_t chunks);

}  // namespace diag
