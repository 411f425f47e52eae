#include "hedge/rng.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "hedge/errors.hpp"

namespace hedge {

uint64_t Rng::uniform_int(uint64_t n) {
  if (n == 0) throw Error("uniform_int: n must be positive");
  // rejection to kill modulo bias
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box–Muller; u1 nudged away from 0 so log stays finite
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << " " << (have_spare_ ? 1 : 0) << " ";
  uint64_t bits;
  static_assert(sizeof bits == sizeof spare_);
  std::memcpy(&bits, &spare_, sizeof bits);
  os << bits;  // exact: double stored as its bit pattern
  return os.str();
}

Rng Rng::deserialize(const std::string& text) {
  Rng r;
  std::istringstream is(text);
  is >> r.engine_;
  int flag = 0;
  uint64_t bits = 0;
  is >> flag >> bits;
  r.have_spare_ = flag != 0;
  std::memcpy(&r.spare_, &bits, sizeof bits);
  if (is.fail()) throw Error("Rng::deserialize: malformed state string");
  return r;
}

bool Rng::operator==(const Rng& o) const {
  return engine_ == o.engine_ && have_spare_ == o.have_spare_ &&
         (have_spare_ ? spare_ == o.spare_ : true);
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, const std::string& tag, uint64_t index) {
  return splitmix64(master ^ fnv1a64(tag) ^ (index * 0x9e3779b97f4a7c15ull));
}

}  // namespace hedge
