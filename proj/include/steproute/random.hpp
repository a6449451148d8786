#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <json.hpp>

namespace steproute {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Splittable seed scheme: child streams are a pure function of (parent, tag),
/// so per-episode randomness never depends on scheduling order.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t parent, std::string_view name);

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

double sample_beta(Rng& rng, double a, double b);

/// Parametric distribution spec as it appears in config files:
/// {"kind": "beta", "a", "b"} | {"kind": "lognormal_int", "mu", "sigma", "min"} |
/// {"kind": "point", "value"} | {"kind": "uniform_int", "lo", "hi"}.
struct Distribution {
  enum class Kind { Beta, LognormalInt, Point, UniformInt };

  Kind kind = Kind::Point;
  double a = 1.0;  // beta a | lognormal mu | point value | uniform lo
  double b = 1.0;  // beta b | lognormal sigma | uniform hi
  double min = 1.0;

  static Distribution beta(double a, double b) { return {Kind::Beta, a, b, 0.0}; }
  static Distribution lognormal_int(double mu, double sigma, double min = 1.0) { return {Kind::LognormalInt, mu, sigma, min}; }
  static Distribution point(double value) { return {Kind::Point, value, 0.0, 0.0}; }
  static Distribution uniform_int(std::int64_t lo, std::int64_t hi) {
    return {Kind::UniformInt, static_cast<double>(lo), static_cast<double>(hi), 0.0};
  }

  double sample(Rng& rng) const;
  std::int64_t sample_int(Rng& rng) const;
  double mean() const;

  /// Smallest and largest values the distribution can produce.
  double support_lo() const;
  double support_hi() const;
  bool is_integer_valued() const;
};

Distribution distribution_from_json(const nlohmann::json& j, const std::string& path);
nlohmann::json to_json(const Distribution& d);

}  // namespace steproute
