#include <doctest.h>

#include <cmath>

#include "moem/random.hpp"

using namespace moem;

TEST_CASE("philox4x32-10 matches the published known-answer vectors") {
  using A4 = std::array<std::uint32_t, 4>;
  CHECK(Philox4x32::generate({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(Philox4x32::generate({~0u, ~0u, ~0u, ~0u}, {~0u, ~0u}) ==
        A4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        A4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are reproducible and distinct") {
  Philox4x32 a(7), b(7), c(8), s(7, 1);
  bool differs_seed = false, differs_stream = false;
  for (int i = 0; i < 64; ++i) {
    const auto x = a(), y = b(), z = c(), w = s();
    CHECK(x == y);
    differs_seed = differs_seed || x != z;
    differs_stream = differs_stream || x != w;
  }
  CHECK(differs_seed);
  CHECK(differs_stream);
}

TEST_CASE("uniform draws lie strictly inside (0, 1)") {
  Philox4x32 rng(3);
  double sum = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
}

TEST_CASE("normal sampler has unit variance and zero mean") {
  Philox4x32 rng(11);
  NormalSampler normal(rng);
  const int n = 400000;
  double s1 = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = normal();
    s1 += x;
    s2 += x * x;
  }
  CHECK(std::abs(s1 / n) < 4 / std::sqrt(double(n)));
  CHECK(std::abs(s2 / n - 1) < 4 * std::sqrt(2.0 / n));
  CHECK(normal.unit_vector(9).norm() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("derived seeds are distinct per index") {
  CHECK(derive_seed(2024, 0) == 2024);
  CHECK(derive_seed(2024, 1) != derive_seed(2024, 2));
}
