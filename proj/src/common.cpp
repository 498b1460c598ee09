#include "stegotag/common.hpp"

#include <sstream>

namespace stegotag {

uint64_t RngStream::mix(uint64_t a, uint64_t b) {
  // splitmix64 finalizer over the combined words.
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RngStream make_stream(uint64_t seed, uint64_t tag) {
  return RngStream(RngStream::mix(seed, tag));
}

std::string RngStream::serialize() const {
  std::ostringstream out;
  out << seed_base_ << ' ' << has_spare_ << ' ';
  out.precision(17);
  out << spare_ << ' ' << gen_;
  return out.str();
}

RngStream RngStream::deserialize(const std::string& text) {
  RngStream s;
  std::istringstream in(text);
  in >> s.seed_base_ >> s.has_spare_ >> s.spare_ >> s.gen_;
  if (!in) throw DataError("malformed rng stream state");
  return s;
}

}  // namespace stegotag
