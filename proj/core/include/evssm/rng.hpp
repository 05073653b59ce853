#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace evssm {

// Deterministic random source. All distribution transforms are implemented
// here rather than with std:: distributions, whose output is
// implementation-defined; two builds of this library produce identical
// streams for identical seeds.
//
// Seed derivation scheme: independent streams are obtained with
// Rng::derive(seed, {tags...}), which mixes the tag path through splitmix64.
// Workers never share an Rng; each (purpose, epoch, sample) tuple gets its
// own derived stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static std::uint64_t mix(std::uint64_t x);
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // inclusive bounds, lo <= hi
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  double exponential(double mean);
  bool bernoulli(double p);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0;
};

}  // namespace evssm
