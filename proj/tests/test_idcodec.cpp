#include "test_util.hpp"

#include <optional>
#include <vector>

#include "stegotag/common.hpp"
#include "stegotag/idcodec.hpp"

using namespace stegotag;

namespace {

// Independent GF(2^6) multiply: peasant multiplication with reduction by
// x^6 + x + 1 (0x43). Deliberately table-free so it cannot share a bug with
// the implementation under test.
int gf_mul_oracle(int a, int b) {
  int acc = 0;
  while (b) {
    if (b & 1) acc ^= a;
    b >>= 1;
    a <<= 1;
    if (a & 0x40) a ^= 0x43;
  }
  return acc & 0x3F;
}

int gf_pow_oracle(int base, int e) {
  int acc = 1;
  for (int i = 0; i < e; ++i) acc = gf_mul_oracle(acc, base);
  return acc;
}

// Evaluate the codeword polynomial sum_k sym(k) * x^(5-k) at x.
int eval_codeword(const CodeId& c, int x) {
  int acc = 0;
  for (int k = 0; k < 6; ++k) acc = gf_mul_oracle(acc, x) ^ c.symbol(k);
  return acc;
}

}  // namespace

TEST_SUITE_BEGIN("idcodec");

TEST_CASE("capacity constants") {
  CHECK(CodeId::kBits == 36);
  CHECK(CodeId::kSpace == (1ULL << 36));
  CHECK(Payload::kBits == 24);
  CHECK(Payload::kSpace == (1u << 24));
}

TEST_CASE("gf oracle sanity: alpha has order 63") {
  // x^6 + x + 1 is primitive, so alpha = x generates the full group.
  CHECK(gf_pow_oracle(2, 63) == 1);
  for (int e = 1; e < 63; ++e) CHECK(gf_pow_oracle(2, e) != 1);
}

TEST_CASE("bit and symbol accessors agree with the packing") {
  CodeId id(0x123456789ULL);
  CHECK(id.to_hex() == "123456789");
  // Bit 0 is the MSB of the hex rendering.
  CHECK(id.bit(0) == 0);
  CHECK(id.bit(3) == 1);  // leading nibble 0x1
  CHECK(id.bit(35) == 1);  // trailing nibble 0x9
  // Symbols are consecutive 6-bit groups from the top.
  uint64_t packed = 0;
  for (int k = 0; k < 6; ++k) packed = (packed << 6) | id.symbol(k);
  CHECK(packed == id.value());
  // Bits of symbol k are bits 6k..6k+5.
  for (int k = 0; k < 6; ++k) {
    int sym = 0;
    for (int b = 0; b < 6; ++b) sym = (sym << 1) | id.bit(6 * k + b);
    CHECK(sym == id.symbol(k));
  }
}

TEST_CASE("hex round trip and validation") {
  RngStream rng(21);
  for (int i = 0; i < 200; ++i) {
    CodeId id = random_id(rng);
    CHECK(CodeId::from_hex(id.to_hex()) == id);
  }
  CHECK(CodeId(0).to_hex() == "000000000");
  CHECK(Payload(0xABCDEF).to_hex() == "abcdef");
  CHECK(Payload::from_hex("abcdef").value() == 0xABCDEFu);
  CHECK_THROWS_AS(CodeId::from_hex("12345678"), DataError);    // too short
  CHECK_THROWS_AS(CodeId::from_hex("1234567890"), DataError);  // too long
  CHECK_THROWS_AS(CodeId::from_hex("12345678g"), DataError);   // bad digit
  CHECK_THROWS_AS(Payload::from_hex("12345"), DataError);
}

TEST_CASE("tensor round trip and thresholding") {
  RngStream rng(22);
  for (int i = 0; i < 50; ++i) {
    CodeId id = random_id(rng);
    auto t = id.to_tensor();
    CHECK(t.sizes() == torch::IntArrayRef{36});
    CHECK(t.dtype() == torch::kFloat32);
    auto minmax = torch::aminmax(t);
    CHECK(std::get<0>(minmax).item<float>() >= 0.0f);
    CHECK(std::get<1>(minmax).item<float>() <= 1.0f);
    CHECK(CodeId::from_tensor(t) == id);
    // Perturb below the 0.5 threshold; decoding is unchanged.
    auto noisy = t.clone();
    for (int b = 0; b < 36; ++b) {
      noisy[b] = noisy[b].item<float>() + static_cast<float>(0.8 * rng.uniform() - 0.4);
    }
    CHECK(CodeId::from_tensor(noisy) == id);
  }
  CHECK_THROWS_AS(CodeId::from_tensor(torch::zeros({35})), ContractError);
}

TEST_CASE("random_id covers bits uniformly") {
  RngStream rng(23);
  std::vector<int> ones(36, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    CodeId id = random_id(rng);
    for (int b = 0; b < 36; ++b) ones[b] += id.bit(b);
  }
  for (int b = 0; b < 36; ++b) {
    double mean = static_cast<double>(ones[b]) / n;
    CHECK(mean > 0.47);
    CHECK(mean < 0.53);
  }
}

TEST_CASE("encode is systematic") {
  RngStream rng(24);
  for (int i = 0; i < 500; ++i) {
    Payload p(static_cast<uint32_t>(rng.uniform_int(0, Payload::kSpace - 1)));
    CodeId c = rs_encode(p);
    for (int k = 0; k < 4; ++k) CHECK(c.symbol(k) == p.symbol(k));
  }
}

TEST_CASE("every codeword has the generator roots alpha and alpha^2") {
  RngStream rng(25);
  const int alpha = 2, alpha2 = 4;
  for (int i = 0; i < 2000; ++i) {
    Payload p(static_cast<uint32_t>(rng.uniform_int(0, Payload::kSpace - 1)));
    CodeId c = rs_encode(p);
    CHECK(eval_codeword(c, alpha) == 0);
    CHECK(eval_codeword(c, alpha2) == 0);
  }
}

TEST_CASE("known answer: payload symbols (0,0,0,1)") {
  // m(x)*x^2 = x^2; g(x) = (x + a)(x + a^2) = x^2 + 6x + 8 for a = 2.
  // Remainder is 6x + 8, so the check symbols are 6 and 8.
  Payload p(1);
  CodeId c = rs_encode(p);
  CHECK(c.symbol(0) == 0);
  CHECK(c.symbol(1) == 0);
  CHECK(c.symbol(2) == 0);
  CHECK(c.symbol(3) == 1);
  CHECK(c.symbol(4) == 6);
  CHECK(c.symbol(5) == 8);
  CHECK(c.to_hex() == "000001188");
  CHECK(rs_encode(Payload(0)) == CodeId(0));
}

TEST_CASE("clean round trip over 10k random payloads") {
  RngStream rng(26);
  for (int i = 0; i < 10000; ++i) {
    Payload p(static_cast<uint32_t>(rng.uniform_int(0, Payload::kSpace - 1)));
    auto back = rs_decode(rs_encode(p));
    REQUIRE(back.has_value());
    CHECK(*back == p);
  }
}

TEST_CASE("exhaustive single-symbol correction on 100 codewords") {
  RngStream rng(27);
  for (int i = 0; i < 100; ++i) {
    Payload p(static_cast<uint32_t>(rng.uniform_int(0, Payload::kSpace - 1)));
    CodeId c = rs_encode(p);
    for (int pos = 0; pos < 6; ++pos) {
      for (int err = 1; err < 64; ++err) {
        CodeId bad = c.with_symbol(pos, c.symbol(pos) ^ err);
        auto back = rs_decode(bad);
        REQUIRE(back.has_value());
        CHECK(*back == p);
      }
    }
  }
}

TEST_CASE("double-symbol errors never decode to the original payload") {
  // Distance-3 code: a word two symbol errors away is outside the radius-1
  // ball of the true codeword, so decode either flags it or lands elsewhere.
  RngStream rng(28);
  int flagged = 0;
  const int n = 3000;
  for (int i = 0; i < n; ++i) {
    Payload p(static_cast<uint32_t>(rng.uniform_int(0, Payload::kSpace - 1)));
    CodeId c = rs_encode(p);
    int pos1 = static_cast<int>(rng.uniform_int(0, 5));
    int pos2 = (pos1 + 1 + static_cast<int>(rng.uniform_int(0, 4))) % 6;
    int e1 = 1 + static_cast<int>(rng.uniform_int(0, 62));
    int e2 = 1 + static_cast<int>(rng.uniform_int(0, 62));
    CodeId bad = c.with_symbol(pos1, c.symbol(pos1) ^ e1);
    bad = bad.with_symbol(pos2, bad.symbol(pos2) ^ e2);
    auto back = rs_decode(bad);
    if (!back.has_value()) {
      flagged++;
    } else {
      CHECK(*back != p);
    }
  }
  // A good share of double errors point at an impossible locator, so the
  // decoder must reject a nontrivial fraction outright.
  CHECK(flagged > n / 10);
}

TEST_SUITE_END();
