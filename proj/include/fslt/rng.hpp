#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fslt/arch.hpp"
#include "fslt/tensor.hpp"

namespace fslt {

/// Bumped whenever any draw produced from a StreamKey changes. Packed tickets record it.
inline constexpr std::uint16_t kRngSchemeVersion = 1;

enum class Purpose : std::uint32_t {
  weights = 0,
  scores = 1,
  prune_mask = 2,
  lock_mask = 3,  // reserved: scheme v1 draws pruned and locked sets from one prune_mask permutation
  data_split = 4,
  ssa_trial = 5,
};

struct StreamKey {
  std::uint64_t global_seed = 0;
  std::uint64_t layer_index = 0;
  Purpose purpose = Purpose::weights;

  friend bool operator==(const StreamKey&, const StreamKey&) = default;
};

/// Philox4x32-10 block function (Salmon et al., Random123).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// Counter-based random stream. Draw n is a pure function of (key, n):
/// Philox4x32-10 keyed by the global seed, with counter words (n_lo, n_hi, layer, purpose).
/// The stream also keeps a cursor so it can be used sequentially.
class Stream {
 public:
  explicit Stream(StreamKey key);

  const StreamKey& key() const { return key_; }

  /// The four 32-bit words of block n.
  std::array<std::uint32_t, 4> block(std::uint64_t n) const;
  /// 64 random bits of draw n.
  std::uint64_t bits(std::uint64_t n) const;
  /// U[0, 1) with 53 bits of resolution.
  double uniform(std::uint64_t n) const;
  /// Standard normal from the full block of draw n (Box-Muller).
  double normal(std::uint64_t n) const;
  /// Uniform integer in [0, bound), bound > 0 (multiply-shift on 64 bits).
  std::uint64_t below(std::uint64_t n, std::uint64_t bound) const;

  std::uint64_t next_bits() { return bits(cursor_++); }
  double next_uniform() { return uniform(cursor_++); }
  double next_normal() { return normal(cursor_++); }
  std::uint64_t next_below(std::uint64_t bound) { return below(cursor_++, bound); }
  std::uint64_t position() const { return cursor_; }

 private:
  StreamKey key_;
  std::array<std::uint32_t, 2> philox_key_;
  std::uint64_t cursor_ = 0;
};

inline Stream stream(const StreamKey& key) { return Stream(key); }

/// First `m` entries of a uniform random permutation of [0, n) (forward Fisher-Yates; step i
/// uses draw i of `key`). m == n gives a full permutation.
std::vector<std::uint32_t> partial_permutation(std::size_t n, std::size_t m, const StreamKey& key);

enum class InitKind : std::uint8_t { kaiming_uniform = 0, kaiming_normal = 1, signed_kaiming_constant = 2 };

std::string to_string(InitKind kind);
InitKind init_kind_from_string(const std::string& name);

struct InitSpec {
  InitKind kind = InitKind::kaiming_uniform;
  double sparsity_for_scaling = 0.0;  // SKC only; must be < 1
};

/// Random weights of a parameterized layer. Element i uses draw i of `key`.
///   kaiming_uniform:         U(-b, b), b = sqrt(6 / fan_in)
///   kaiming_normal:          N(0, 2 / fan_in)
///   signed_kaiming_constant: +-sqrt(2 / fan_in) / sqrt(1 - k_l), equiprobable sign
Tensor init_weights(const LayerSpec& spec, const InitSpec& init, const StreamKey& key);

/// Edge-popup scores, N(0, 2 / fan_in).
Tensor init_scores(const LayerSpec& spec, const StreamKey& key);

/// Magnitude used by signed_kaiming_constant for a layer.
float skc_magnitude(std::size_t fan_in, double layer_sparsity);

}  // namespace fslt
