// Copyright 2026 The bnlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace bnlab {

// Seeded random stream. The engine is std::mt19937_64, whose output sequence
// is fixed by the standard; the uniform and normal transforms are implemented
// here rather than through <random> distributions, whose algorithms differ
// between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller; consumes exactly two uniforms per draw.
  double normal(double mean = 0.0, double stddev = 1.0);
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  // Independent child stream keyed on the parent's seed, not on how far the
  // parent has advanced, so the child is the same whatever was drawn before.
  Rng split(std::uint64_t key) const { return Rng(mix(seed_, key)); }
  Rng split(std::initializer_list<std::uint64_t> keys) const;

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t key);

 private:

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace bnlab
