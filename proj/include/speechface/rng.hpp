// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <cstdint>

namespace speechface {

// Deterministic 64-bit PRNG (splitmix64, Vigna 2015). Chosen over
// std:: distributions because the exact output stream is part of the
// reproducibility contract: identical seeds must give bit-identical
// initializations on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

// Stateless mixing of a few integers into one 64-bit value; used for
// reproducible per-(sequence, frame, channel) noise without carrying
// generator state around.
inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  Rng r(a * 0x9e3779b97f4a7c15ULL + b * 0xd1b54a32d192ed03ULL + c + 1);
  return r.next_u64();
}

}  // namespace speechface
