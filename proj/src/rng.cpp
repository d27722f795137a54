#include "difaug/rng.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include "difaug/error.hpp"

namespace difaug {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::uniform_int(std::uint64_t max_inclusive) {
  if (max_inclusive == std::numeric_limits<std::uint64_t>::max()) return engine_();
  const std::uint64_t range = max_inclusive + 1;
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return v % range;
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // 1 - uniform() lies in (0, 1], keeping the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << (has_cached_normal_ ? 1 : 0) << ' ';
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", cached_normal_);
  os << buf;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  std::mt19937_64 engine;
  int cached = 0;
  std::string normal_text;
  if (!(is >> engine >> cached >> normal_text)) {
    throw ParseError("malformed RNG state string");
  }
  engine_ = engine;
  has_cached_normal_ = cached != 0;
  cached_normal_ = std::strtod(normal_text.c_str(), nullptr);
}

bool operator==(const Rng& a, const Rng& b) {
  return a.engine_ == b.engine_ && a.has_cached_normal_ == b.has_cached_normal_ &&
         (!a.has_cached_normal_ || a.cached_normal_ == b.cached_normal_);
}

}  // namespace difaug
