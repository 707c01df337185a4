// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/step_planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "diagdistill/error.hpp"

namespace diag {

namespace {
constexpr int kFirstTimestep = 1000;
constexpr int kLastTimestep = 100;
}  // namespace

StepSchedule::StepSchedule(std::vector<int> steps, bool cyclic_extension, bool require_monotone)
    : steps_(std::move(steps)), cyclic_(cyclic_extension) {
  if (steps_.empty()) throw ConfigError("step schedule must have at least one chunk");
  for (int s : steps_) {
    if (s < 1) throw ConfigError("step counts must be >= 1");
  }
  if (require_monotone && !is_monotone_non_increasing()) {
    throw ConfigError("step schedule " + str() + " is not monotonically non-increasing");
  }
}

int StepSchedule::total_steps() const { return std::accumulate(steps_.begin(), steps_.end(), 0); }

bool StepSchedule::is_monotone_non_increasing() const {
  return std::is_sorted(steps_.rbegin(), steps_.rend());
}

int StepSchedule::steps_for_chunk(std::size_t k) const {
  if (k < steps_.size()) return steps_[k];
  if (!cyclic_ || steps_.empty()) {
    throw ConfigError("schedule " + str() + " has no entry for chunk " + std::to_string(k) +
                      " and cyclic extension is off");
  }
  return steps_[k % steps_.size()];
}

std::string StepSchedule::str() const {
  std::string out;
  for (int s : steps_) out += std::to_string(s);
  return out;
}

void CostModel::validate() const {
  if (!(cost_per_forward > 0.0) || frames_per_chunk <= 0 || nfe_multiplier <= 0) {
    throw ConfigError("cost model fields must be positive");
  }
}

StepSchedule parse_schedule(std::string_view digits) {
  if (digits.empty()) throw ParseError("empty schedule");
  std::vector<int> steps;
  steps.reserve(digits.size());
  for (char c : digits) {
    if (c < '1' || c > '9') {
      throw ParseError(std::string("invalid schedule character '") + c + "' in \"" +
                       std::string(digits) + "\" (digits 1-9 only)");
    }
    steps.push_back(c - '0');
  }
  return StepSchedule(std::move(steps));
}

int nfe_count(const StepSchedule& sched, const CostModel& cost) {
  return cost.nfe_multiplier * sched.total_steps();
}

std::vector<int> timesteps_for(int steps) {
  if (steps < 1) throw RangeError("timesteps_for: steps must be >= 1");
  if (steps == 1) return {kFirstTimestep};
  std::vector<int> out(static_cast<std::size_t>(steps));
  const double span = kFirstTimestep - kLastTimestep;
  for (int i = 0; i < steps; ++i) {
    const double v = kFirstTimestep - span * i / (steps - 1);
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(v));
  }
  return out;
}

Accounting simulate(const StepSchedule& sched, const CostModel& cost) {
  cost.validate();
  Accounting acc;
  acc.schedule = sched.str();
  acc.nfe = nfe_count(sched, cost);
  const auto& s = sched.steps();
  acc.first_chunk_latency = s.front() * cost.cost_per_forward;
  int worst_later = 0;
  for (std::size_t k = 1; k < s.size(); ++k) worst_later = std::max(worst_later, s[k]);
  acc.in_flight_latency = worst_later * cost.cost_per_forward;
  const double frames = static_cast<double>(cost.frames_per_chunk) * static_cast<double>(s.size());
  acc.throughput = frames / (sched.total_steps() * cost.cost_per_forward);
  return acc;
}

StepSchedule extend_cyclically(const StepSchedule& sched, std::size_t chunks) {
  if (chunks < 1) throw RangeError("extend_cyclically: chunks must be >= 1");
  std::vector<int> out(chunks);
  const auto& base = sched.steps();
  for (std::size_t k = 0; k < chunks; ++k) out[k] = base[k % base.size()];
  return StepSchedule(std::move(out), sched.cyclic_extension());
}

}  // namespace diag
