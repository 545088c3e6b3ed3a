#pragma once

#include <cstdint>
#include <string_view>

namespace igam {

// Deterministic splitmix64 stream. All randomness in a run flows from one
// root seed split into named streams ("init/student", "attack", ...), so a
// component can be re-run in isolation without disturbing the others. The
// uniform/normal draws are computed from raw bits rather than
// std::*_distribution, which keeps sequences identical across standard
// libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // Derived stream: same root seed + same name => same stream.
  Rng stream(std::string_view name) const;

  uint64_t next_u64();
  double uniform();                          // [0, 1)
  double uniform(double lo, double hi);      // [lo, hi)
  double normal();                           // standard normal, Box-Muller
  int uniform_int(int lo, int hi);           // inclusive range

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace igam
