// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace makeup {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IndexList = std::vector<Index>;

// Cohort indicator: source rows carry outcomes, target rows do not.
enum class Cohort : std::uint8_t { kSource = 1, kTarget = 0 };

// Subgroup indicator: the minority group is the estimation target.
enum class Subgroup : std::uint8_t { kMinority = 0, kMajority = 1 };

inline const char* to_string(Cohort s) {
  return s == Cohort::kSource ? "source" : "target";
}
inline const char* to_string(Subgroup r) {
  return r == Subgroup::kMajority ? "majority" : "minority";
}

// Invalid or inconsistent inputs (dataset construction, file schemas).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Objective unbounded below along some coefficient direction.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, Index direction)
      : std::runtime_error(what), direction_(direction) {}
  Index direction() const { return direction_; }

 private:
  Index direction_ = -1;
};

// Degenerate second-moment matrix in a node-wise regression.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Seed splitting rule: stream k of a root seed. Replicate and sub-task
// streams are derived with fixed k so outputs do not depend on scheduling.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(root ^ splitmix64(stream + 1));
}

// Static-partition parallel loop; results must go to pre-assigned slots so
// the output is identical for any thread count.
template <class Fn>
void parallel_for(Index n, Index threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  const Index k = std::min<Index>(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(k));
  for (Index t = 0; t < k; ++t) {
    pool.emplace_back([&, t] {
      for (Index i = t; i < n; i += k) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace makeup
