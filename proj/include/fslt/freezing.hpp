#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fslt/arch.hpp"
#include "fslt/tensor.hpp"

namespace fslt {

class PlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layer-wise ratio allocation strategy.
enum class Strategy : std::uint8_t {
  epl = 0,  // equal number of remaining weights per layer
  erk = 1,  // remaining density proportional to the Erdos-Renyi-Kernel scale
};

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

/// Global pre-pruning and locking ratios.
struct Proportion {
  double prune = 0.0;
  double lock = 0.0;
};

/// Centers the searchable region on the target sparsity k:
/// P_r = clamp(k - (1 - F_r) / 2, 0, F_r), L_r = F_r - P_r.
Proportion plan_proportion(double freeze_ratio, double slt_sparsity);

/// (C_in + C_out + k_h + k_w) / (C_in C_out k_h k_w); dense layers use (in + out) / (in out).
double erk_scale(const LayerSpec& spec);

/// Number of weights kept (not removed) per parameterized layer when `global_ratio` of all
/// weights is removed. The global kept count is N - round(global_ratio * N) exactly.
/// Exempt layers keep everything. EPL waterfills equal shares; ERK scales densities with a
/// common factor, capping at 1 and redistributing the excess. Integer counts come from
/// largest-remainder rounding with ties broken by ascending layer index.
std::vector<std::size_t> allocate_layerwise(std::span<const LayerSpec> param_layers, double global_ratio,
                                            Strategy strategy, std::span<const bool> exempt = {});
std::vector<std::size_t> allocate_layerwise(const ArchSpec& arch, double global_ratio, Strategy strategy,
                                            std::span<const bool> exempt = {});

struct LayerFreeze {
  std::size_t size = 0;
  std::size_t pruned = 0;
  std::size_t locked = 0;

  std::size_t frozen() const { return pruned + locked; }
  std::size_t free() const { return size - pruned - locked; }
  double prune_ratio() const { return static_cast<double>(pruned) / static_cast<double>(size); }
  double lock_ratio() const { return static_cast<double>(locked) / static_cast<double>(size); }
  double freeze_ratio() const { return static_cast<double>(frozen()) / static_cast<double>(size); }

  friend bool operator==(const LayerFreeze&, const LayerFreeze&) = default;
};

struct FreezePlan {
  double freeze_ratio = 0.0;
  double prune_ratio = 0.0;
  double lock_ratio = 0.0;
  Strategy strategy = Strategy::epl;
  std::vector<LayerFreeze> layers;

  std::size_t total_params() const;
  std::size_t total_pruned() const;
  std::size_t total_locked() const;
  std::size_t total_free() const;
  /// Parameterized layers whose every weight is pre-pruned.
  std::vector<std::size_t> collapsed_layers() const;
  /// Throws PlanError if per-layer counts are inconsistent.
  void validate() const;

  friend bool operator==(const FreezePlan&, const FreezePlan&) = default;
};

struct PlanOptions {
  Strategy strategy = Strategy::epl;
  bool exempt_boundary_layers = false;  // leave the first and last parameterized layers unfrozen
  std::optional<double> prune_override;  // explicit P_r; bypasses plan_proportion
  std::optional<double> lock_override;   // explicit L_r; bypasses plan_proportion
};

/// Global ratios from plan_proportion (or the overrides), then per-layer pruned counts from
/// allocate_layerwise(P_r) and frozen counts from allocate_layerwise(F_r); locked = frozen - pruned.
FreezePlan build_freeze_plan(const ArchSpec& arch, double freeze_ratio, double slt_sparsity,
                             const PlanOptions& options = {});

/// Same as build_freeze_plan with explicit global ratios.
FreezePlan build_freeze_plan_from_ratios(const ArchSpec& arch, double prune_ratio, double lock_ratio,
                                         const PlanOptions& options = {});

/// Per-parameter freezing state. The underlying value is the ternary encoding.
enum class FreezeState : std::int8_t { pruned = -1, free = 0, locked = 1 };

struct FreezeMask {
  std::vector<std::vector<FreezeState>> layers;

  std::size_t count(FreezeState s) const;
  std::size_t count(std::size_t layer, FreezeState s) const;

  friend bool operator==(const FreezeMask&, const FreezeMask&) = default;
};

/// Per layer, a seeded uniform permutation of flat indices: the first `pruned` entries are
/// PRUNED, the next `locked` LOCKED, the rest FREE. Layer l draws from
/// StreamKey{seed, l, prune_mask}.
FreezeMask materialize_mask(const FreezePlan& plan, std::uint64_t seed);

using TernaryMask = std::vector<std::vector<std::int8_t>>;

TernaryMask encode_ternary(const FreezeMask& mask);
/// Throws PlanError on values outside {-1, 0, 1}.
FreezeMask decode_ternary(const TernaryMask& codes);

/// m_p (1 = kept) and m_l (1 = locked) of one layer as float tensors.
Tensor prune_keep_tensor(const FreezeMask& mask, std::size_t layer, const Shape& shape);
Tensor lock_tensor(const FreezeMask& mask, std::size_t layer, const Shape& shape);

/// (m_p * (1 - m_l) + m_l) * w for every layer: the source network with pruned weights zeroed.
TensorList frozen_weights(std::span<const Tensor> weights, const FreezeMask& mask);

}  // namespace fslt
