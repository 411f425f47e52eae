#pragma once
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace hedge {

// Deterministic RNG with hand-rolled distributions. std::mt19937_64 has a
// pinned-down spec, but std::normal_distribution & friends do not — their
// output differs across standard libraries, which would make "same seed, same
// dataset, same training run" a lie. So the engine is std, the distributions
// are ours.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t raw() { return engine_(); }

  // uniform on [0,1) with 53 random mantissa bits
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  uint64_t uniform_int(uint64_t n);

  // standard normal via Box–Muller, one spare cached
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {  // Fisher–Yates
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Full-state round trip (engine + cached normal spare) for checkpoints.
  std::string serialize() const;
  static Rng deserialize(const std::string& text);

  bool operator==(const Rng& o) const;

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Seed fan-out: one master seed deterministically yields independent
// per-subsystem streams, so e.g. changing eval repeats never perturbs
// training randomness. Rule: splitmix64(master ^ fnv1a64(tag) ^ index).
uint64_t fnv1a64(const std::string& s);
uint64_t splitmix64(uint64_t x);
uint64_t derive_seed(uint64_t master, const std::string& tag, uint64_t index = 0);

}  // namespace hedge
