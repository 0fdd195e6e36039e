/*
 * Copyright 2026 The fedssl-backdoor Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FSSL_RNG_HPP_
#define FSSL_RNG_HPP_

#include <cstdint>
#include <algorithm>
#include <initializer_list>
#include <random>
#include <vector>

namespace fssl {

// SplitMix64 finaliser; used to derive independent stream seeds.
inline std::uint64_t MixSeed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives a stream seed from a root seed and a list of tags (client id,
// round, purpose...). Order of tags matters.
inline std::uint64_t DeriveSeed(std::uint64_t root,
                                std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = MixSeed(root);
  for (std::uint64_t t : tags) s = MixSeed(s ^ MixSeed(t + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream tags for DeriveSeed.
enum class Stream : std::uint64_t {
  kPartition = 1,
  kSelection,
  kClientTrain,
  kInjector,
  kMalicious,
  kProbe,
  kDefense,
  kInit,
  kData,
  kEval,
  kMonitor,
};

inline std::uint64_t Tag(Stream s) { return static_cast<std::uint64_t>(s); }

// Thin wrapper over mt19937_64 with the handful of draws this project needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double Uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double Normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  bool Bernoulli(double p) { return Uniform() < p; }
  std::int64_t UniformInt(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  std::uint64_t NextU64() { return engine_(); }

  template <typename T>
  void Shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fssl

#endif  // FSSL_RNG_HPP_
