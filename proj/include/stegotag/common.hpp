#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace stegotag {

// Error taxonomy. The CLI maps ConfigError/UsageError to exit code 2 and
// everything else to 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct GeometryError : Error {
  using Error::Error;
};
struct NoPoseError : Error {
  using Error::Error;
};
struct TrainingError : Error {
  using Error::Error;
};

/// Deterministic random stream. All stochastic pipeline stages draw from one
/// of these rather than a global generator, so runs are reproducible and
/// streams can be handed to parallel workers independently. The state
/// serializes to text for checkpointing; distributions are implemented here
/// (not via std:: distribution objects) so the draw sequence is fixed.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : gen_(seed), seed_base_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    // Rejection sampling over the smallest covering power-of-two range.
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(gen_());  // full 64-bit range
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t draw = gen_();
    while (draw >= limit) draw = gen_();
    return lo + static_cast<int64_t>(draw % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Derive an independently seeded child stream (stable given the parent
  /// seed and tag; does not consume parent state).
  RngStream child(uint64_t tag) const {
    return RngStream(mix(seed_base_, tag));
  }

  std::string serialize() const;
  static RngStream deserialize(const std::string& text);

 private:
  RngStream() : gen_(0) {}
  static uint64_t mix(uint64_t a, uint64_t b);

  std::mt19937_64 gen_;
  uint64_t seed_base_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;

  friend RngStream make_stream(uint64_t seed, uint64_t tag);
};

/// Canonical way to build a named stream from a run seed: stable across
/// runs, distinct per tag.
RngStream make_stream(uint64_t seed, uint64_t tag);

// Stream tags used across the pipeline; keeping them in one table avoids
// accidental reuse.
namespace stream_tag {
inline constexpr uint64_t kDatasetOrder = 1;
inline constexpr uint64_t kSceneSampling = 2;
inline constexpr uint64_t kPrinterNoise = 3;
inline constexpr uint64_t kCameraNoise = 4;
inline constexpr uint64_t kCodeIds = 5;
inline constexpr uint64_t kInit = 6;
inline constexpr uint64_t kEval = 7;
inline constexpr uint64_t kSynthCorpus = 8;
}  // namespace stream_tag

}  // namespace stegotag
