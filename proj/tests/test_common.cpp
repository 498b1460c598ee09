#include "test_util.hpp"

#include <cmath>
#include <set>
#include <vector>

#include "stegotag/common.hpp"

using namespace stegotag;

TEST_SUITE_BEGIN("common");

TEST_CASE("rng uniform stays in [0,1) and covers the range") {
  RngStream rng(42);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("rng uniform mean and variance match U[0,1)") {
  RngStream rng(7);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    sum += u;
    sumsq += u * u;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
  CHECK(var == doctest::Approx(1.0 / 12.0).epsilon(0.02));
}

TEST_CASE("rng normal moments match N(0,1)") {
  RngStream rng(11);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0, sum4 = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    sum += z;
    sumsq += z * z;
    sum4 += z * z * z * z;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
  // Kurtosis of a Gaussian is 3.
  CHECK(sum4 / n == doctest::Approx(3.0).epsilon(0.1));
}

TEST_CASE("rng uniform_int is unbiased over a small range") {
  RngStream rng(3);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) counts[rng.uniform_int(0, 6)]++;
  for (int c : counts) CHECK(c == doctest::Approx(n / 7.0).epsilon(0.05));
}

TEST_CASE("same seed gives identical sequences") {
  RngStream a(123), b(123);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform_int(0, 999) == b.uniform_int(0, 999));
  }
}

TEST_CASE("different stream tags decorrelate") {
  RngStream a = make_stream(5, stream_tag::kPrinterNoise);
  RngStream b = make_stream(5, stream_tag::kCameraNoise);
  int agree = 0;
  for (int i = 0; i < 1000; ++i) {
    if (a.uniform_int(0, 1) == b.uniform_int(0, 1)) agree++;
  }
  // Independent fair coins agree about half the time.
  CHECK(agree > 400);
  CHECK(agree < 600);
}

TEST_CASE("serialize/deserialize resumes the exact sequence") {
  RngStream rng(99);
  for (int i = 0; i < 137; ++i) rng.normal();  // leave a Box-Muller spare in flight
  std::string state = rng.serialize();

  std::vector<double> expect;
  for (int i = 0; i < 50; ++i) expect.push_back(rng.normal());

  RngStream restored = RngStream::deserialize(state);
  for (int i = 0; i < 50; ++i) CHECK(restored.normal() == expect[i]);
}

TEST_CASE("deserialize rejects malformed state") {
  CHECK_THROWS_AS(RngStream::deserialize(""), DataError);
  CHECK_THROWS_AS(RngStream::deserialize("not a state"), DataError);
}

TEST_CASE("child streams differ from parent and from each other") {
  RngStream parent(17);
  RngStream c1 = parent.child(1);
  RngStream c2 = parent.child(2);
  std::set<uint64_t> firsts;
  firsts.insert(static_cast<uint64_t>(parent.uniform() * (1ULL << 53)));
  firsts.insert(static_cast<uint64_t>(c1.uniform() * (1ULL << 53)));
  firsts.insert(static_cast<uint64_t>(c2.uniform() * (1ULL << 53)));
  CHECK(firsts.size() == 3);
}

TEST_CASE("error taxonomy is catchable via the base class") {
  auto boom = []() { throw ConfigError("bad knob"); };
  CHECK_THROWS_AS(boom(), Error);
  try {
    throw GeometryError("degenerate quad");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "degenerate quad");
  }
}

TEST_SUITE_END();
