#include "steproute/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "steproute/error.hpp"

namespace steproute {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
  return splitmix64(splitmix64(parent) ^ (tag * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

std::uint64_t derive_seed(std::uint64_t parent, std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return derive_seed(parent, h);
}

double sample_beta(Rng& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  if (x + y <= 0.0) return a >= b ? 1.0 : 0.0;
  return x / (x + y);
}

double Distribution::sample(Rng& rng) const {
  switch (kind) {
    case Kind::Beta: return sample_beta(rng, a, b);
    case Kind::Point: return a;
    case Kind::LognormalInt:
    case Kind::UniformInt: return static_cast<double>(sample_int(rng));
  }
  return a;
}

std::int64_t Distribution::sample_int(Rng& rng) const {
  switch (kind) {
    case Kind::LognormalInt: {
      std::normal_distribution<double> n(a, b);
      const double v = std::exp(n(rng));
      return std::max(static_cast<std::int64_t>(min), static_cast<std::int64_t>(std::llround(std::min(v, 1e15))));
    }
    case Kind::UniformInt: {
      std::uniform_int_distribution<std::int64_t> u(static_cast<std::int64_t>(a), static_cast<std::int64_t>(b));
      return u(rng);
    }
    case Kind::Point: return static_cast<std::int64_t>(std::llround(a));
    case Kind::Beta: return static_cast<std::int64_t>(std::llround(sample_beta(rng, a, b)));
  }
  return 0;
}

double Distribution::mean() const {
  switch (kind) {
    case Kind::Beta: return a / (a + b);
    case Kind::Point: return a;
    case Kind::UniformInt: return 0.5 * (a + b);
    case Kind::LognormalInt: {
      // E[max(min, round(exp(mu + sigma z)))] by midpoint quadrature over z.
      constexpr int n = 8000;
      constexpr double lo = -9.0, hi = 9.0;
      const double dz = (hi - lo) / n;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        const double z = lo + (i + 0.5) * dz;
        const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
        const double v = std::max(min, static_cast<double>(std::llround(std::exp(a + b * z))));
        acc += v * pdf * dz;
      }
      return acc;
    }
  }
  return a;
}

double Distribution::support_lo() const {
  switch (kind) {
    case Kind::Beta: return 0.0;
    case Kind::Point: return a;
    case Kind::UniformInt: return a;
    case Kind::LognormalInt: return min;
  }
  return a;
}

double Distribution::support_hi() const {
  switch (kind) {
    case Kind::Beta: return 1.0;
    case Kind::Point: return a;
    case Kind::UniformInt: return b;
    case Kind::LognormalInt: return std::numeric_limits<double>::infinity();
  }
  return a;
}

bool Distribution::is_integer_valued() const {
  switch (kind) {
    case Kind::Beta: return false;
    case Kind::Point: return a == std::floor(a);
    case Kind::UniformInt:
    case Kind::LognormalInt: return true;
  }
  return false;
}

namespace {

double number_at(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw Error(ErrorCode::ConfigError, path + "." + key + ": expected a number");
  }
  return j[key].get<double>();
}

}  // namespace

Distribution distribution_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw Error(ErrorCode::ConfigError, path + ".kind: expected a string");
  }
  const auto kind = j["kind"].get<std::string>();
  Distribution d;
  if (kind == "beta") {
    d = Distribution::beta(number_at(j, "a", path), number_at(j, "b", path));
    if (!(d.a > 0 && d.b > 0)) throw Error(ErrorCode::ConfigError, path + ": beta parameters must be positive");
  } else if (kind == "lognormal_int") {
    const double min = j.contains("min") ? number_at(j, "min", path) : 1.0;
    d = Distribution::lognormal_int(number_at(j, "mu", path), number_at(j, "sigma", path), min);
    if (!(d.b >= 0)) throw Error(ErrorCode::ConfigError, path + ".sigma: must be nonnegative");
  } else if (kind == "point") {
    d = Distribution::point(number_at(j, "value", path));
  } else if (kind == "uniform_int") {
    const double lo = number_at(j, "lo", path);
    const double hi = number_at(j, "hi", path);
    if (lo != std::floor(lo) || hi != std::floor(hi) || lo > hi) {
      throw Error(ErrorCode::ConfigError, path + ": uniform_int needs integer lo <= hi");
    }
    d = Distribution::uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi));
  } else {
    throw Error(ErrorCode::ConfigError, path + ".kind: unknown distribution '" + kind + "'");
  }
  return d;
}

nlohmann::json to_json(const Distribution& d) {
  switch (d.kind) {
    case Distribution::Kind::Beta: return {{"kind", "beta"}, {"a", d.a}, {"b", d.b}};
    case Distribution::Kind::LognormalInt: return {{"kind", "lognormal_int"}, {"mu", d.a}, {"sigma", d.b}, {"min", d.min}};
    case Distribution::Kind::Point: return {{"kind", "point"}, {"value", d.a}};
    case Distribution::Kind::UniformInt:
      return {{"kind", "uniform_int"}, {"lo", static_cast<std::int64_t>(d.a)}, {"hi", static_cast<std::int64_t>(d.b)}};
  }
  return {};
}

}  // namespace steproute
