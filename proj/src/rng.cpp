#include "gcav/rng.hpp"

#include <cmath>

namespace gcav {

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t splitmix64_next(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RngStream::RngStream(uint64_t seed, std::string_view name) : name_(name) {
  uint64_t s = seed ^ fnv1a64(name);
  // one warm-up mix so that nearby seeds do not produce nearby streams
  state_ = s;
  (void)splitmix64_next(state_);
}

uint64_t RngStream::next_u64() { return splitmix64_next(state_); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

float RngStream::uniform(float lo, float hi) {
  return lo + static_cast<float>(uniform()) * (hi - lo);
}

float RngStream::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0,1] so the log is finite
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = static_cast<float>(r * std::sin(theta));
  has_spare_ = true;
  return static_cast<float>(r * std::cos(theta));
}

float RngStream::gaussian(float mean, float stddev) {
  return mean + stddev * gaussian();
}

int RngStream::uniform_int(int n) {
  // modulo bias is negligible for desk-scale n against 2^64
  return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

}  // namespace gcav
