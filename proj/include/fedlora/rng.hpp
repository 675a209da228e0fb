#pragma once

#include <array>
#include <cstdint>

namespace fedlora {

/// Deterministic PRNG stream: xoshiro256** seeded through splitmix64, with
/// Box-Muller for Gaussians. The same seed and call sequence reproduce the
/// same samples bit-exactly on any platform. A stream is single-owner;
/// parallel users must split(), never share.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "xoshiro256**+box-muller";

  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1), 53-bit resolution.
  double next_double();
  /// Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double next_gaussian();

  /// Derive an independent child stream; the parent state is untouched.
  Rng split(std::uint64_t stream_id) const;

  std::uint64_t seed() const { return seed_; }
  /// Number of raw 64-bit draws so far (the stream position).
  std::uint64_t position() const { return draws_; }

  std::array<std::uint64_t, 4> state() const { return state_; }
  /// Rebuild a stream mid-flight (checkpoint resume).
  static Rng restore(std::uint64_t seed, std::array<std::uint64_t, 4> state,
                     std::uint64_t position);

 private:
  Rng() = default;

  std::array<std::uint64_t, 4> state_{};
  std::uint64_t seed_ = 0;
  std::uint64_t draws_ = 0;
};

}  // namespace fedlora
