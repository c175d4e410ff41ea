// Copyright (c) 2026 The misp authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "misp/common.hpp"

namespace misp {

// Deterministic random stream. All draws are hand-rolled on top of the raw
// 64-bit engine output so sequences are reproducible bit-for-bit from a seed,
// independent of standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed), seed_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [lo, hi] inclusive.
  std::int64_t randint(std::int64_t lo, std::int64_t hi) {
    check<ParameterError>(lo <= hi, "randint: empty range [", lo, ", ", hi,
                          "]");
    std::uint64_t span = std::uint64_t(hi - lo) + 1;
    if (span == 0) return std::int64_t(gen_());  // full 64-bit range
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return lo + std::int64_t(v % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; always consumes exactly two draws.
  double normal() {
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) {
    return mean + stddev * normal();
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(randint(0, std::int64_t(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream derived from the construction seed; distinct
  // ids give distinct streams regardless of how much this one has drawn.
  Rng fork(std::uint64_t id) const {
    std::uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ull * (id + 1));
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    x = x ^ (x >> 31);
    return Rng(x);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_ << " " << seed_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> gen_ >> seed_;
    check<MetadataError>(bool(is), "Rng::deserialize: malformed state");
  }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_ = 0;
};

}  // namespace misp
