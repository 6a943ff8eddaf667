#include "fslt/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace fslt {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

Stream::Stream(StreamKey key)
    : key_(key),
      philox_key_{static_cast<std::uint32_t>(key.global_seed), static_cast<std::uint32_t>(key.global_seed >> 32)} {}

std::array<std::uint32_t, 4> Stream::block(std::uint64_t n) const {
  // The layer word folds the upper half of layer_index in so 64-bit indices stay distinct.
  const auto layer = static_cast<std::uint32_t>(key_.layer_index) ^
                     (static_cast<std::uint32_t>(key_.layer_index >> 32) * 0x85EBCA6Bu);
  return philox4x32({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(n >> 32), layer,
                     static_cast<std::uint32_t>(key_.purpose)},
                    philox_key_);
}

std::uint64_t Stream::bits(std::uint64_t n) const {
  const auto b = block(n);
  return (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
}

double Stream::uniform(std::uint64_t n) const { return static_cast<double>(bits(n) >> 11) * 0x1.0p-53; }

double Stream::normal(std::uint64_t n) const {
  const auto b = block(n);
  const std::uint64_t w0 = (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
  const std::uint64_t w1 = (static_cast<std::uint64_t>(b[2]) << 32) | b[3];
  // u1 in (0, 1] so the log is finite.
  const double u1 = (static_cast<double>(w0 >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(w1 >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Stream::below(std::uint64_t n, std::uint64_t bound) const {
  if (bound == 0) throw std::invalid_argument("Stream::below: bound must be positive");
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits(n)) * bound) >> 64);
}

std::vector<std::uint32_t> partial_permutation(std::size_t n, std::size_t m, const StreamKey& key) {
  if (m > n) throw std::invalid_argument("partial_permutation: m exceeds n");
  const Stream rng(key);
  std::vector<std::uint32_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
  for (std::size_t i = 0; i < m && i + 1 < n; ++i) {
    const std::size_t j = i + rng.below(i, n - i);
    std::swap(perm[i], perm[j]);
  }
  perm.resize(m);
  return perm;
}

std::string to_string(InitKind kind) {
  switch (kind) {
    case InitKind::kaiming_uniform: return "kaiming_uniform";
    case InitKind::kaiming_normal: return "kaiming_normal";
    case InitKind::signed_kaiming_constant: return "signed_kaiming_constant";
  }
  return "unknown";
}

InitKind init_kind_from_string(const std::string& name) {
  if (name == "kaiming_uniform" || name == "ku") return InitKind::kaiming_uniform;
  if (name == "kaiming_normal" || name == "kn") return InitKind::kaiming_normal;
  if (name == "signed_kaiming_constant" || name == "skc") return InitKind::signed_kaiming_constant;
  throw std::invalid_argument("unknown init kind '" + name + "'");
}

float skc_magnitude(std::size_t fan_in, double layer_sparsity) {
  if (!(layer_sparsity >= 0.0 && layer_sparsity < 1.0))
    throw std::invalid_argument("SKC scaling sparsity must lie in [0, 1), got " + std::to_string(layer_sparsity));
  return static_cast<float>(std::sqrt(2.0 / static_cast<double>(fan_in)) / std::sqrt(1.0 - layer_sparsity));
}

Tensor init_weights(const LayerSpec& spec, const InitSpec& init, const StreamKey& key) {
  if (!spec.has_params()) throw std::invalid_argument(to_string(spec.kind) + " layer has no weights to initialize");
  const Stream rng(key);
  const double fan_in = static_cast<double>(spec.fan_in());
  Tensor w(spec.weight_shape());
  switch (init.kind) {
    case InitKind::kaiming_uniform: {
      const double bound = std::sqrt(6.0 / fan_in);
      for (std::size_t i = 0; i < w.numel(); ++i) w.data[i] = static_cast<float>((2.0 * rng.uniform(i) - 1.0) * bound);
      break;
    }
    case InitKind::kaiming_normal: {
      const double stddev = std::sqrt(2.0 / fan_in);
      for (std::size_t i = 0; i < w.numel(); ++i) w.data[i] = static_cast<float>(rng.normal(i) * stddev);
      break;
    }
    case InitKind::signed_kaiming_constant: {
      const float mag = skc_magnitude(spec.fan_in(), init.sparsity_for_scaling);
      for (std::size_t i = 0; i < w.numel(); ++i) w.data[i] = (rng.bits(i) >> 63) ? mag : -mag;
      break;
    }
  }
  return w;
}

Tensor init_scores(const LayerSpec& spec, const StreamKey& key) {
  if (!spec.has_params()) throw std::invalid_argument(to_string(spec.kind) + " layer has no scores");
  const Stream rng(key);
  const double stddev = std::sqrt(2.0 / static_cast<double>(spec.fan_in()));
  Tensor s(spec.weight_shape());
  for (std::size_t i = 0; i < s.numel(); ++i) s.data[i] = static_cast<float>(rng.normal(i) * stddev);
  return s;
}

}  // namespace fslt
