#include "f2d2/rng.hpp"

#include <doctest.h>

#include <cmath>

using f2d2::RngStream;

// Known-answer vectors published with the Random123 reference implementation.
TEST_CASE("Philox4x32-10 known-answer vectors") {
  using A4 = std::array<std::uint32_t, 4>;
  CHECK(f2d2::philox4x32_10({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(f2d2::philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        A4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(f2d2::philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        A4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are reproducible and seekable") {
  RngStream a(42), b(42);
  for (int i = 0; i < 5; ++i) CHECK(a.next_u64() == b.next_u64());
  const std::uint64_t pos = a.position();
  const std::uint64_t next = a.next_u64();
  RngStream c(42, pos);
  CHECK(c.next_u64() == next);
}

TEST_CASE("named streams differ by name and seed") {
  auto a = RngStream::named(0, "data/teacher");
  auto b = RngStream::named(0, "probe/teacher");
  auto c = RngStream::named(1, "data/teacher");
  CHECK(a.key() != b.key());
  CHECK(a.key() != c.key());
  CHECK(RngStream::named(0, "data/teacher").key() == a.key());
}

TEST_CASE("uniform, normal and rademacher moments") {
  RngStream rng(7);
  Eigen::MatrixXd u(20000, 1), n(20000, 1), r(20000, 1);
  rng.fill_uniform(u);
  rng.fill_normal(n);
  rng.fill_rademacher(r);
  CHECK(u.minCoeff() >= 0.0);
  CHECK(u.maxCoeff() < 1.0);
  CHECK(u.mean() == doctest::Approx(0.5).epsilon(0.02));
  CHECK(std::abs(n.mean()) < 0.03);
  CHECK((n.array().square().mean()) == doctest::Approx(1.0).epsilon(0.03));
  CHECK((r.array().abs() == 1.0).all());
  CHECK(std::abs(r.mean()) < 0.03);
  for (int i = 0; i < 1000; ++i) CHECK(rng.index(7) < 7u);
}
