#include "stegotag/idcodec.hpp"

#include <array>
#include <charconv>
#include <cstdio>

namespace stegotag {
namespace {

// GF(2^6) arithmetic with primitive polynomial x^6 + x + 1 (0x43).
struct Gf64 {
  std::array<int, 64> log{};
  std::array<int, 126> exp{};

  Gf64() {
    int x = 1;
    for (int i = 0; i < 63; ++i) {
      exp[i] = x;
      log[x] = i;
      x <<= 1;
      if (x & 0x40) x ^= 0x43;
    }
    for (int i = 63; i < 126; ++i) exp[i] = exp[i - 63];
  }

  int mul(int a, int b) const {
    if (a == 0 || b == 0) return 0;
    return exp[log[a] + log[b]];
  }
  int div(int a, int b) const {
    if (b == 0) throw ContractError("gf64 division by zero");
    if (a == 0) return 0;
    return exp[(log[a] - log[b] + 63) % 63];
  }
  int pow_alpha(int e) const { return exp[((e % 63) + 63) % 63]; }
};

const Gf64& gf() {
  static const Gf64 table;
  return table;
}

// Generator g(x) = (x - a)(x - a^2) = x^2 + g1 x + g0.
struct Generator {
  int g1, g0;
  Generator() {
    const auto& f = gf();
    g1 = f.pow_alpha(1) ^ f.pow_alpha(2);
    g0 = f.mul(f.pow_alpha(1), f.pow_alpha(2));
  }
};

const Generator& gen() {
  static const Generator g;
  return g;
}

uint64_t parse_hex(const std::string& hex, int digits, const char* what) {
  if (hex.size() != static_cast<size_t>(digits)) {
    throw DataError(std::string(what) + ": expected " + std::to_string(digits) +
                    " hex digits, got '" + hex + "'");
  }
  uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), value, 16);
  if (ec != std::errc() || ptr != hex.data() + hex.size()) {
    throw DataError(std::string(what) + ": invalid hex '" + hex + "'");
  }
  return value;
}

}  // namespace

CodeId::CodeId(uint64_t value) : value_(value) {
  if (value >= kSpace) throw ContractError("code id exceeds 36 bits");
}

CodeId CodeId::with_symbol(int k, int sym) const {
  const int shift = 6 * (5 - k);
  const uint64_t cleared = value_ & ~(0x3FULL << shift);
  return CodeId(cleared | (static_cast<uint64_t>(sym & 0x3F) << shift));
}

std::string CodeId::to_hex() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%09llx", static_cast<unsigned long long>(value_));
  return buf;
}

CodeId CodeId::from_hex(const std::string& hex) {
  return CodeId(parse_hex(hex, 9, "code id"));
}

torch::Tensor CodeId::to_tensor(torch::Dtype dtype) const {
  auto t = torch::empty({kBits}, dtype);
  for (int i = 0; i < kBits; ++i) t[i] = static_cast<double>(bit(i));
  return t;
}

CodeId CodeId::from_tensor(const torch::Tensor& bits) {
  if (bits.numel() != kBits) throw ContractError("expected 36 entries for a code id");
  auto flat = bits.detach().to(torch::kFloat64).reshape({kBits});
  uint64_t value = 0;
  for (int i = 0; i < kBits; ++i) {
    value = (value << 1) | (flat[i].item<double>() > 0.5 ? 1u : 0u);
  }
  return CodeId(value);
}

Payload::Payload(uint32_t value) : value_(value) {
  if (value >= kSpace) throw ContractError("payload exceeds 24 bits");
}

std::string Payload::to_hex() const {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%06x", value_);
  return buf;
}

Payload Payload::from_hex(const std::string& hex) {
  return Payload(static_cast<uint32_t>(parse_hex(hex, 6, "payload")));
}

CodeId random_id(RngStream& rng) {
  return CodeId(rng.next_u64() >> (64 - CodeId::kBits));
}

CodeId rs_encode(const Payload& payload) {
  const auto& f = gf();
  const auto& g = gen();
  // Message polynomial m3..m0 at degrees 5..2; divide m(x)*x^2 by g(x).
  int r1 = 0, r0 = 0;  // remainder coefficients for x^1, x^0
  for (int k = 0; k < 4; ++k) {
    const int lead = payload.symbol(k) ^ r1;
    r1 = r0 ^ f.mul(lead, g.g1);
    r0 = f.mul(lead, g.g0);
  }
  uint64_t value = static_cast<uint64_t>(payload.value()) << 12;
  value |= static_cast<uint64_t>(r1) << 6;
  value |= static_cast<uint64_t>(r0);
  return CodeId(value);
}

std::optional<Payload> rs_decode(const CodeId& id) {
  const auto& f = gf();
  // Codeword symbol k sits at polynomial degree 5-k.
  int s1 = 0, s2 = 0;
  for (int k = 0; k < 6; ++k) {
    const int c = id.symbol(k);
    if (c == 0) continue;
    const int deg = 5 - k;
    s1 ^= f.mul(c, f.pow_alpha(deg));
    s2 ^= f.mul(c, f.pow_alpha(2 * deg));
  }

  CodeId corrected = id;
  if (s1 != 0 || s2 != 0) {
    if (s1 == 0 || s2 == 0) return std::nullopt;  // not a single-symbol pattern
    const int deg = (f.log[s2] - f.log[s1] + 63) % 63;
    if (deg > 5) return std::nullopt;  // error locator outside the codeword
    const int magnitude = f.div(s1, f.pow_alpha(deg));
    const int k = 5 - deg;
    corrected = id.with_symbol(k, id.symbol(k) ^ magnitude);
  }
  return Payload(static_cast<uint32_t>(corrected.value() >> 12));
}

}  // namespace stegotag
