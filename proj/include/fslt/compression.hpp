#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fslt/search.hpp"

namespace fslt {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Format or RNG-scheme version differs from what this build writes.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Stored counts contradict each other or the architecture.
class CountError : public FormatError {
 public:
  using FormatError::FormatError;
};

inline constexpr std::uint16_t kFormatVersion = 1;

enum class Codec : std::uint8_t { raw = 0 };

/// One parameterized layer: freeze counts plus the supermask over its FREE positions.
struct LayerRecord {
  std::uint32_t layer_index = 0;  // ordinal among parameterized layers
  Shape shape;
  std::uint64_t pruned = 0;
  std::uint64_t locked = 0;
  double realized_sparsity = 0.0;
  std::uint64_t bit_count = 0;  // == numel - pruned - locked
  std::vector<std::uint8_t> bits;  // little-endian, bit 0 of byte 0 = first FREE position

  friend bool operator==(const LayerRecord&, const LayerRecord&) = default;
};

struct PackedTicket {
  std::uint16_t format_version = kFormatVersion;
  std::uint16_t rng_scheme_version = kRngSchemeVersion;
  Codec codec = Codec::raw;
  InitKind init = InitKind::kaiming_uniform;
  Strategy strategy = Strategy::epl;
  std::uint64_t seed = 0;
  double slt_sparsity = 0.0;
  double freeze_ratio = 0.0;
  double prune_ratio = 0.0;
  double lock_ratio = 0.0;
  ArchSpec arch;
  NormState norm;
  std::vector<LayerRecord> layers;

  friend bool operator==(const PackedTicket&, const PackedTicket&) = default;
};

/// Supermask over FREE positions plus normalization statistics. Throws std::invalid_argument
/// for SKC models whose weights were not rescaled with finalize_scaling().
PackedTicket make_packed(const TicketModel& model);
/// Inference-ready model: weights and freeze mask regenerated from the seed, supermask overlaid.
TicketModel restore(const PackedTicket& packed);

std::vector<std::uint8_t> encode(const PackedTicket& packed);
PackedTicket decode(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> pack(const TicketModel& model);
TicketModel unpack(std::span<const std::uint8_t> bytes);

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

struct SizeReport {
  std::uint64_t supermask_bits = 0;
  std::uint64_t bn_param_bits = 0;

  std::uint64_t total_bits() const { return supermask_bits + bn_param_bits; }
  std::uint64_t total_bytes() const { return (total_bits() + 7) / 8; }
  /// 10^6 bytes
  double megabytes() const { return static_cast<double>(total_bytes()) / 1e6; }
  /// 2^20 bytes
  double mebibytes() const { return static_cast<double>(total_bytes()) / 1048576.0; }

  friend bool operator==(const SizeReport&, const SizeReport&) = default;
};

/// 1 bit per FREE position, 32 bits per stored normalization statistic.
SizeReport account_size(const FreezePlan& plan, std::size_t norm_statistics);
SizeReport account_size(const TicketModel& model);
/// Trained dense weights at 32 bits each.
SizeReport weight_training_size(std::size_t params, std::size_t norm_statistics);

}  // namespace fslt
