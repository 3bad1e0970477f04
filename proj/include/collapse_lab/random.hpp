// Copyright 2026 The collapse-lab Authors
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

// Counter-based randomness. Every variate is a pure function of
// (master_seed, trajectory_index, lane, counter); there is no generator state to
// share between threads, so ensembles are reproducible under any scheduling.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace collapse_lab {

struct RandomnessSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t trajectory_index = 0;

  friend bool operator==(const RandomnessSpec&, const RandomnessSpec&) = default;
};

/// Independent sub-streams of one trajectory.
enum class Lane : std::uint32_t {
  wiener = 0,     // Gaussian increments of the driving noise
  telegraph = 1,  // waiting times of the hidden Markov chain
  observation = 2,
  auxiliary = 3,
};

namespace detail {

// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u, kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u, kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

inline std::array<std::uint32_t, 4> random_block(const RandomnessSpec& spec, Lane lane, std::uint64_t counter) {
  const std::uint64_t traj = spec.trajectory_index;
  const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                                         static_cast<std::uint32_t>(traj), static_cast<std::uint32_t>(traj >> 32)};
  const std::uint64_t key64 = spec.master_seed ^ (static_cast<std::uint64_t>(lane) * 0x9E3779B97F4A7C15ull);
  return philox4x32(ctr, {static_cast<std::uint32_t>(key64), static_cast<std::uint32_t>(key64 >> 32)});
}

// 53-bit uniform in (0, 1].
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
}

// Two independent standard normals (Box-Muller) from one Philox block.
inline std::array<double, 2> normal_pair(const std::array<std::uint32_t, 4>& block) {
  const double u1 = to_open_unit(block[0], block[1]);
  const double u2 = to_open_unit(block[2], block[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(phi), r * std::sin(phi)};
}

}  // namespace detail

/// Standard normal variate number `index` of a lane.
inline double standard_normal(const RandomnessSpec& spec, Lane lane, std::uint64_t index) {
  const auto pair = detail::normal_pair(detail::random_block(spec, lane, index / 2));
  return pair[index % 2];
}

/// Uniform variate in (0, 1].
inline double uniform_open(const RandomnessSpec& spec, Lane lane, std::uint64_t index) {
  const auto block = detail::random_block(spec, lane, index / 2);
  return index % 2 == 0 ? detail::to_open_unit(block[0], block[1]) : detail::to_open_unit(block[2], block[3]);
}

/// Wiener increment over step `step`: Normal(0, dt).
inline double gaussian_increment(const RandomnessSpec& spec, std::uint64_t step, double dt) {
  return std::sqrt(dt) * standard_normal(spec, Lane::wiener, step);
}

/// Sequential reader over one lane. Caches the Box-Muller pair, so reading steps in
/// order costs one Philox block per two variates; values equal standard_normal().
class NormalStream {
 public:
  NormalStream(RandomnessSpec spec, Lane lane = Lane::wiener) : spec_(spec), lane_(lane) {}

  double operator()(std::uint64_t index) {
    const std::uint64_t block = index / 2;
    if (block != cached_block_) {
      pair_ = detail::normal_pair(detail::random_block(spec_, lane_, block));
      cached_block_ = block;
    }
    return pair_[index % 2];
  }

 private:
  RandomnessSpec spec_;
  Lane lane_;
  std::uint64_t cached_block_ = ~std::uint64_t{0};
  std::array<double, 2> pair_{};
};

}  // namespace collapse_lab
