#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace gcav {

uint64_t fnv1a64(std::string_view s);
uint64_t splitmix64_next(uint64_t& state);

// One named substream of the global seed. All randomness in the pipeline is
// drawn through streams so that independent jobs (CAV runs, per-layer
// trainers, per-example attacks) can draw without sharing state and a given
// (seed, name) pair always yields the same sequence. The generator is
// splitmix64 with hand-rolled uniform/gaussian conversion, so sequences do
// not depend on the standard library's distribution implementations.
class RngStream {
 public:
  RngStream() : RngStream(0, "default") {}
  RngStream(uint64_t seed, std::string_view name);

  uint64_t next_u64();

  // [0, 1)
  double uniform();
  float uniform(float lo, float hi);

  // standard normal via Box-Muller; the spare value is cached
  float gaussian();
  float gaussian(float mean, float stddev);

  // [0, n)
  int uniform_int(int n);

  const std::string& name() const { return name_; }

 private:
  uint64_t state_;
  std::string name_;
  bool has_spare_ = false;
  float spare_ = 0.0f;
};

// Hands out named streams derived from one experiment seed.
class RngService {
 public:
  explicit RngService(uint64_t seed) : seed_(seed) {}
  RngStream stream(std::string_view name) const { return RngStream(seed_, name); }
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
};

}  // namespace gcav
