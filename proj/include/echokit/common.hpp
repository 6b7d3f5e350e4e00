#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace echokit {

// Base class for everything thrown by the library. Subclasses mirror the
// failure categories callers are expected to distinguish.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

// Malformed on-disk data (bad magic, bad key, wrong value type).
class FormatError : public Error { using Error::Error; };

// Shapes or byte counts disagree with what a header or config promised.
class DimensionError : public Error { using Error::Error; };

// An in-memory value violates a type invariant (overlap, bad range, ...).
class ValidationError : public Error { using Error::Error; };

// Unparseable text input; message carries the line number.
class ParseError : public Error { using Error::Error; };

// Argument outside its documented range.
class RangeError : public Error { using Error::Error; };

// Not enough frames/samples to run the requested analysis.
class InsufficientDataError : public Error { using Error::Error; };

// Two frame-synchronous streams do not share a clock or differ too much
// in length to be zipped together.
class ClockError : public Error { using Error::Error; };

// Training failed: a token got zero occupancy, the loss diverged, ...
class TrainingError : public Error { using Error::Error; };

// A prompt word is missing from the lexicon.
class OovError : public Error { using Error::Error; };

// Viterbi found no complete path through an alignment graph.
class AlignFailureError : public Error { using Error::Error; };

// A metric's denominator is empty; refuse to emit NaN.
class UndefinedMetricError : public Error { using Error::Error; };

// I/O failure, message carries the path.
class IoError : public Error { using Error::Error; };

// Round-half-to-even; used everywhere a time is mapped onto a frame clock
// so mapping is deterministic and bias-free.
inline long round_even(double x) {
  return static_cast<long>(std::nearbyint(x));
}

// Deterministic, splittable PRNG (splitmix64 stream seeded per use-site).
// std RNG engines are avoided for the distributions, whose output is
// implementation-defined; this keeps byte-identical runs a library
// guarantee instead of a libstdc++ accident.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Derives an independent stream, e.g. one per session index.
  Rng split(std::uint64_t key) const {
    Rng r(state_ ^ (0x9e3779b97f4a7c15ull * (key + 1)));
    r.next_u64();
    return r;
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // index in [0, n)
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Standard normal via Box-Muller; caches the spare draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

// length-prefixed little-endian primitives shared by the binary file formats
namespace detail {

inline void write_string(std::ostream &os, const std::string &s) {
  std::uint32_t n = static_cast<std::uint32_t>(s.size());
  os.write(reinterpret_cast<const char *>(&n), sizeof n);
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream &is) {
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char *>(&n), sizeof n);
  if (!is || n > (1u << 20)) throw FormatError("corrupt string length in binary file");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw FormatError("truncated string in binary file");
  return s;
}

template <typename T>
inline void write_pod(std::ostream &os, T v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

template <typename T>
inline T read_pod(std::istream &is) {
  T v{};
  is.read(reinterpret_cast<char *>(&v), sizeof v);
  if (!is) throw FormatError("truncated binary file");
  return v;
}

inline void write_doubles(std::ostream &os, const std::vector<double> &v) {
  write_pod<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char *>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream &is) {
  std::uint64_t n = read_pod<std::uint64_t>(is);
  if (n > (1ull << 28)) throw FormatError("implausible array length in binary file");
  std::vector<double> v(n);
  is.read(reinterpret_cast<char *>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw FormatError("truncated array in binary file");
  return v;
}

}  // namespace detail

}  // namespace echokit
