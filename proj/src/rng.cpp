#include "f2d2/rng.hpp"

#include <cmath>
#include <numbers>

namespace f2d2 {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u;
constexpr std::uint32_t kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u;
constexpr std::uint32_t kW1 = 0xBB67AE85u;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> c,
                                           std::array<std::uint32_t, 2> k) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kW0;
    k[1] += kW1;
  }
  return c;
}

RngStream::RngStream(std::uint64_t key, std::uint64_t position) : key_(key), position_(position) {}

RngStream RngStream::named(std::uint64_t seed, std::string_view name) {
  return RngStream(splitmix64(splitmix64(seed) ^ fnv1a(name)));
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t block = position_ >> 1;
  const auto word = static_cast<unsigned>(position_ & 1u);
  ++position_;
  const auto out = philox4x32_10(
      {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32), 0u, 0u},
      {static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)});
  const std::uint32_t lo = out[2 * word];
  const std::uint32_t hi = out[2 * word + 1];
  return (static_cast<std::uint64_t>(hi) << 32) | lo;
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::index(std::uint64_t n) {
  // Lemire's multiply-shift; bias is below 2^-64 * n and irrelevant here.
  const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::uint64_t>(m >> 64);
}

double RngStream::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void RngStream::fill_uniform(Eigen::MatrixXd& m, double lo, double hi) {
  double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = uniform(lo, hi);
}

void RngStream::fill_normal(Eigen::MatrixXd& m) {
  double* p = m.data();
  const Eigen::Index n = m.size();
  Eigen::Index i = 0;
  for (; i + 1 < n; i += 2) {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    p[i] = r * std::cos(a);
    p[i + 1] = r * std::sin(a);
  }
  if (i < n) p[i] = normal();
}

void RngStream::fill_rademacher(Eigen::MatrixXd& m) {
  double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = rademacher();
}

}  // namespace f2d2
