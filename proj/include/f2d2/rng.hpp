#pragma once

// Counter-based random streams.
//
// Each stream is Philox4x32-10 (Salmon et al., SC'11) keyed by a 64-bit key and
// driven by a 64-bit block counter. One block yields two 64-bit words. The
// stream position is the number of 64-bit words consumed, so a stream is fully
// described by (key, position) and can be saved and restored exactly.
//
// Named streams derive their key from (seed, name), which gives independent
// streams for data, probes, initialisation, and so on from one run seed.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string_view>

namespace f2d2 {

class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t key, std::uint64_t position = 0);

  /// Stream keyed by the run seed and a stream name.
  static RngStream named(std::uint64_t seed, std::string_view name);

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return position_; }
  void seek(std::uint64_t position) { position_ = position; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t index(std::uint64_t n);
  /// Standard normal via Box-Muller; consumes two words.
  double normal();
  /// +1 or -1 with equal probability.
  double rademacher() { return (next_u64() >> 63) != 0 ? 1.0 : -1.0; }

  void fill_uniform(Eigen::MatrixXd& m, double lo = 0.0, double hi = 1.0);
  /// Fills column-major pairs from a single Box-Muller draw each.
  void fill_normal(Eigen::MatrixXd& m);
  void fill_rademacher(Eigen::MatrixXd& m);

 private:
  std::uint64_t key_ = 0;
  std::uint64_t position_ = 0;
};

/// Raw Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

}  // namespace f2d2
