// Copyright (c) 2026 emovoc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
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
#include <stdexcept>
#include <string>

namespace emovoc {

// Error taxonomy. The CLI maps these onto exit codes:
//   ConfigError -> 2, NumericError -> 3, DataError/FormatError/LabelError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct LabelError : Error {
  using Error::Error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Named substream derivation used everywhere a component needs its own RNG
// stream (bootstrap resamples, per-epoch shuffles, per-utterance synthesis).
// Pinned so independent re-implementations can reproduce the stream.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull));
}

// mt19937_64 with hand-specified output transforms. The std distributions are
// implementation-defined, so uniform/gaussian draws are spelled out here to
// keep corpora and training runs byte-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n). Modulo reduction; bias is negligible for the small n used here.
  std::int64_t uniform_int(std::int64_t n) {
    if (n <= 0) throw ContractError("Rng::uniform_int: n must be positive");
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Box-Muller, cosine branch only.
  double gaussian() {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Fisher-Yates; std::shuffle is not reproducible across standard libraries.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace emovoc
