#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>

#include "stegotag/common.hpp"

namespace stegotag {

/// 36-bit marker message. Bit 0 is the most significant bit of the hex
/// rendering; symbol k (k = 0..5) is the 6-bit group starting at bit 6k.
class CodeId {
 public:
  static constexpr int kBits = 36;
  static constexpr uint64_t kSpace = 1ULL << kBits;  // 2^36 distinct ids

  CodeId() = default;
  explicit CodeId(uint64_t value);

  int bit(int i) const { return static_cast<int>((value_ >> (kBits - 1 - i)) & 1); }
  int symbol(int k) const { return static_cast<int>((value_ >> (6 * (5 - k))) & 0x3F); }
  CodeId with_symbol(int k, int sym) const;
  uint64_t value() const { return value_; }

  std::string to_hex() const;  // 9 zero-padded hex digits
  static CodeId from_hex(const std::string& hex);

  /// Float vector of length 36 with entries in {0,1}.
  torch::Tensor to_tensor(torch::Dtype dtype = torch::kFloat32) const;
  static CodeId from_tensor(const torch::Tensor& bits);  // threshold at 0.5

  bool operator==(const CodeId&) const = default;

 private:
  uint64_t value_ = 0;
};

/// 24-bit payload used in error-corrected mode; symbol k (k = 0..3) is the
/// 6-bit group starting at bit 6k.
class Payload {
 public:
  static constexpr int kBits = 24;
  static constexpr uint32_t kSpace = 1u << kBits;  // 2^24 distinct payloads

  Payload() = default;
  explicit Payload(uint32_t value);

  int symbol(int k) const { return static_cast<int>((value_ >> (6 * (3 - k))) & 0x3F); }
  uint32_t value() const { return value_; }

  std::string to_hex() const;  // 6 zero-padded hex digits
  static Payload from_hex(const std::string& hex);

  bool operator==(const Payload&) const = default;

 private:
  uint32_t value_ = 0;
};

/// Uniform random 36-bit id.
CodeId random_id(RngStream& rng);

/// Systematic RS(6,4) over GF(2^6), primitive polynomial x^6 + x + 1,
/// generator roots {a, a^2}. The four payload symbols become codeword
/// symbols 0..3 and two check symbols are appended; any single corrupted
/// symbol is repairable on decode.
CodeId rs_encode(const Payload& payload);

/// Decode with single-symbol correction. Returns nullopt when the error
/// pattern is detectably uncorrectable (never silently miscorrects a
/// detectable pattern).
std::optional<Payload> rs_decode(const CodeId& id);

}  // namespace stegotag
