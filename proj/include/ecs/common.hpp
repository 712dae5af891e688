#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ecs {

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/index mismatches: wrong dimensions, out-of-range slice indices.
struct shape_error : error {
  using error::error;
};

// Bad numeric values: non-finite tensors, targets outside their domain,
// degenerate statistics.
struct value_error : error {
  using error::error;
};

// Malformed or truncated files.
struct format_error : error {
  using error::error;
};

// Invalid configuration: broken invariants, impossible tile plans,
// markers outside the mask, failed synthetic placement.
struct config_error : error {
  using error::error;
};

inline void check(bool cond, const char* msg) {
  if (!cond) throw error(msg);
}

inline void check_shape(bool cond, const std::string& msg) {
  if (!cond) throw shape_error(msg);
}

// Deterministic random stream. std::mt19937_64 has a standard-pinned
// sequence; the distributions here are hand-rolled because the standard
// library distribution objects are implementation-defined.
class rng {
 public:
  explicit rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  float uniform_f(float lo, float hi) {
    return static_cast<float>(uniform(lo, hi));
  }

  // uniform integer in [lo, hi] inclusive
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  // standard normal via Box-Muller
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Fisher-Yates; std::shuffle is implementation-defined, this is not.
  template <class Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ecs
