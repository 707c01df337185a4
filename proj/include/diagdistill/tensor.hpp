// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "diagdistill/error.hpp"

namespace diag {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of 64-bit reals.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  // Throws NumericError naming `what` when any entry is NaN or Inf.
  void require_finite(const std::string& what) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// out = a*x + b*y
Tensor axpby(double a, const Tensor& x, double b, const Tensor& y);
Tensor operator+(const Tensor& x, const Tensor& y);
Tensor operator-(const Tensor& x, const Tensor& y);
Tensor operator*(double s, const Tensor& x);
Tensor& operator+=(Tensor& x, const Tensor& y);

double dot(const Tensor& x, const Tensor& y);
double sum(const Tensor& x);
double mean(const Tensor& x);
double norm2(const Tensor& x);
double max_abs(const Tensor& x);
// Mean of squared differences; shapes must match.
double mse(const Tensor& x, const Tensor& y);

/// xoshiro256** seeded through splitmix64. This is the only generator used
/// anywhere in the library; the integer stream is identical on every
/// platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of mantissa.
  double uniform();
  // Uniform on (0, 1]; never returns 0.
  double uniform_open0();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Integer uniform on [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();

  // Independent stream keyed by (seed, stream). Does not advance *this.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// I.i.d. standard normal entries via Box-Muller on the Rng integer stream.
Tensor gaussian_sample(Rng& rng, const Shape& shape);
Tensor uniform_sample(Rng& rng, const Shape& shape, double lo, double hi);

using ScalarFn = std::function<double(const Tensor&)>;

/// Central-difference gradient of `f` at `x`. Throws NumericError naming
/// the coordinate when an evaluation is not finite.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
double relative_error(const Tensor& analytic, const Tensor& numeric);

}  // namespace diag
