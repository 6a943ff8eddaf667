#include "fslt/freezing.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "fslt/rng.hpp"

namespace fslt {

std::string to_string(Strategy s) { return s == Strategy::epl ? "epl" : "erk"; }

Strategy strategy_from_string(const std::string& name) {
  if (name == "epl" || name == "EPL") return Strategy::epl;
  if (name == "erk" || name == "ERK") return Strategy::erk;
  throw PlanError("unknown strategy '" + name + "' (expected epl or erk)");
}

Proportion plan_proportion(double freeze_ratio, double slt_sparsity) {
  if (!(freeze_ratio >= 0.0 && freeze_ratio < 1.0))
    throw PlanError("freeze ratio must lie in [0, 1), got " + std::to_string(freeze_ratio));
  if (!(slt_sparsity > 0.0 && slt_sparsity < 1.0))
    throw PlanError("SLT sparsity must lie in (0, 1), got " + std::to_string(slt_sparsity));
  Proportion p;
  p.prune = std::clamp(slt_sparsity - (1.0 - freeze_ratio) / 2.0, 0.0, freeze_ratio);
  p.lock = freeze_ratio - p.prune;
  return p;
}

double erk_scale(const LayerSpec& spec) {
  if (spec.kind == LayerKind::conv2d) {
    const double cin = static_cast<double>(spec.in_features), cout = static_cast<double>(spec.out_features);
    const double kh = static_cast<double>(spec.kernel_h), kw = static_cast<double>(spec.kernel_w);
    return (cin + cout + kh + kw) / (cin * cout * kh * kw);
  }
  if (spec.kind == LayerKind::dense) {
    const double in = static_cast<double>(spec.in_features), out = static_cast<double>(spec.out_features);
    return (in + out) / (in * out);
  }
  throw PlanError(to_string(spec.kind) + " layer has no ERK scale");
}

namespace {

// Fractional parts closer than this are treated as equal so the index tie-break decides.
constexpr long double kFracTolerance = 1e-9L;

std::vector<std::size_t> round_largest_remainder(const std::vector<long double>& shares,
                                                 std::span<const std::size_t> caps, std::size_t total) {
  const std::size_t n = shares.size();
  std::vector<std::size_t> out(n);
  std::vector<long double> frac(n);
  std::size_t assigned = 0;
  for (std::size_t l = 0; l < n; ++l) {
    const long double s = std::clamp<long double>(shares[l], 0.0L, static_cast<long double>(caps[l]));
    out[l] = std::min(caps[l], static_cast<std::size_t>(std::floor(s)));
    frac[l] = s - static_cast<long double>(out[l]);
    assigned += out[l];
  }
  if (assigned > total) throw PlanError("largest-remainder rounding overshoot");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (std::fabs(frac[a] - frac[b]) > kFracTolerance) return frac[a] > frac[b];
    return false;  // stable: ascending index
  });
  std::size_t remaining = total - assigned;
  for (std::size_t pass = 0; remaining > 0 && pass < 2; ++pass)
    for (std::size_t l : order) {
      if (remaining == 0) break;
      if (out[l] < caps[l]) {
        ++out[l];
        --remaining;
      }
    }
  if (remaining != 0) throw PlanError("largest-remainder rounding cannot place all units");
  return out;
}

}  // namespace

std::vector<std::size_t> allocate_layerwise(std::span<const LayerSpec> layers, double global_ratio, Strategy strategy,
                                            std::span<const bool> exempt) {
  if (layers.empty()) throw PlanError("allocation needs at least one parameterized layer");
  if (!(global_ratio >= 0.0 && global_ratio <= 1.0))
    throw PlanError("global ratio must lie in [0, 1], got " + std::to_string(global_ratio));
  if (!exempt.empty() && exempt.size() != layers.size()) throw PlanError("exempt flags do not match layer count");
  const std::size_t n = layers.size();
  std::vector<std::size_t> sizes(n);
  std::size_t total = 0;
  for (std::size_t l = 0; l < n; ++l) {
    if (!layers[l].has_params()) throw PlanError("allocation over a parameterless layer");
    sizes[l] = layers[l].param_count();
    total += sizes[l];
  }
  const auto removed = static_cast<std::size_t>(std::llround(global_ratio * static_cast<double>(total)));
  auto is_exempt = [&](std::size_t l) { return !exempt.empty() && exempt[l]; };

  std::vector<std::size_t> keep(n, 0);
  std::size_t eligible_total = 0;
  for (std::size_t l = 0; l < n; ++l) {
    if (is_exempt(l))
      keep[l] = sizes[l];
    else
      eligible_total += sizes[l];
  }
  if (removed > eligible_total)
    throw PlanError("cannot remove " + std::to_string(removed) + " weights from " + std::to_string(eligible_total) +
                    " non-exempt weights");
  const std::size_t target = eligible_total - removed;

  if (strategy == Strategy::epl) {
    // Integer waterfill: equal shares, layers smaller than their share keep everything.
    std::vector<bool> capped(n, false);
    std::size_t left = target, open = 0;
    for (std::size_t l = 0; l < n; ++l) open += is_exempt(l) ? 0 : 1;
    bool changed = true;
    while (changed && open > 0) {
      changed = false;
      for (std::size_t l = 0; l < n; ++l) {
        if (is_exempt(l) || capped[l]) continue;
        // share = left / open; cap when the layer cannot hold it.
        if (sizes[l] * open <= left) {
          capped[l] = true;
          keep[l] = sizes[l];
          left -= sizes[l];
          --open;
          changed = true;
        }
      }
    }
    if (open > 0) {
      const std::size_t base = left / open;
      std::size_t extra = left % open;
      for (std::size_t l = 0; l < n; ++l) {
        if (is_exempt(l) || capped[l]) continue;
        keep[l] = base + (extra > 0 ? 1 : 0);
        if (extra > 0) --extra;
      }
    }
    return keep;
  }

  // ERK: density_l = min(1, c * scale_l) with c chosen to hit the kept total.
  std::vector<long double> scale(n, 0.0L);
  for (std::size_t l = 0; l < n; ++l) scale[l] = erk_scale(layers[l]);
  std::vector<bool> dense(n, false);
  long double factor = 0.0L;
  for (;;) {
    long double dense_keep = 0.0L, weighted = 0.0L;
    for (std::size_t l = 0; l < n; ++l) {
      if (is_exempt(l)) continue;
      if (dense[l])
        dense_keep += static_cast<long double>(sizes[l]);
      else
        weighted += scale[l] * static_cast<long double>(sizes[l]);
    }
    factor = weighted > 0.0L ? (static_cast<long double>(target) - dense_keep) / weighted : 0.0L;
    std::size_t worst = n;
    for (std::size_t l = 0; l < n; ++l) {
      if (is_exempt(l) || dense[l]) continue;
      if (factor * scale[l] > 1.0L && (worst == n || scale[l] > scale[worst])) worst = l;
    }
    if (worst == n) break;
    dense[worst] = true;
  }
  std::vector<long double> shares;
  std::vector<std::size_t> caps;
  std::vector<std::size_t> index;
  for (std::size_t l = 0; l < n; ++l) {
    if (is_exempt(l)) continue;
    const long double density = dense[l] ? 1.0L : factor * scale[l];
    shares.push_back(density * static_cast<long double>(sizes[l]));
    caps.push_back(sizes[l]);
    index.push_back(l);
  }
  const auto rounded = round_largest_remainder(shares, caps, target);
  for (std::size_t i = 0; i < index.size(); ++i) keep[index[i]] = rounded[i];
  return keep;
}

std::vector<std::size_t> allocate_layerwise(const ArchSpec& arch, double global_ratio, Strategy strategy,
                                            std::span<const bool> exempt) {
  std::vector<LayerSpec> params;
  for (const auto& spec : arch.layers)
    if (spec.has_params()) params.push_back(spec);
  return allocate_layerwise(params, global_ratio, strategy, exempt);
}

std::size_t FreezePlan::total_params() const {
  std::size_t s = 0;
  for (const auto& l : layers) s += l.size;
  return s;
}
std::size_t FreezePlan::total_pruned() const {
  std::size_t s = 0;
  for (const auto& l : layers) s += l.pruned;
  return s;
}
std::size_t FreezePlan::total_locked() const {
  std::size_t s = 0;
  for (const auto& l : layers) s += l.locked;
  return s;
}
std::size_t FreezePlan::total_free() const { return total_params() - total_pruned() - total_locked(); }

std::vector<std::size_t> FreezePlan::collapsed_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (layers[l].pruned == layers[l].size) out.push_back(l);
  return out;
}

void FreezePlan::validate() const {
  if (layers.empty()) throw PlanError("freeze plan has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (layers[l].size == 0 || layers[l].pruned + layers[l].locked > layers[l].size)
      throw PlanError("freeze plan layer " + std::to_string(l) + " counts exceed layer size");
}

FreezePlan build_freeze_plan_from_ratios(const ArchSpec& arch, double prune_ratio, double lock_ratio,
                                         const PlanOptions& options) {
  if (!(prune_ratio >= 0.0 && lock_ratio >= 0.0 && prune_ratio + lock_ratio <= 1.0))
    throw PlanError("invalid ratios: prune " + std::to_string(prune_ratio) + ", lock " + std::to_string(lock_ratio));
  const auto sizes = arch.param_counts();
  const std::size_t n = sizes.size();
  auto exempt = std::make_unique<bool[]>(n);
  if (options.exempt_boundary_layers && n > 0) exempt[0] = exempt[n - 1] = true;
  const std::span<const bool> exempt_span(exempt.get(), options.exempt_boundary_layers ? n : 0);

  const double freeze_ratio = prune_ratio + lock_ratio;
  const auto keep_after_prune = allocate_layerwise(arch, prune_ratio, options.strategy, exempt_span);
  const auto keep_after_freeze = allocate_layerwise(arch, freeze_ratio, options.strategy, exempt_span);

  std::vector<std::size_t> pruned(n), frozen(n);
  for (std::size_t l = 0; l < n; ++l) {
    pruned[l] = sizes[l] - keep_after_prune[l];
    frozen[l] = sizes[l] - keep_after_freeze[l];
  }
  // Repair rounding cases where a layer would prune more than it freezes: move one frozen unit at a
  // time from the layer with the largest lock surplus.
  for (;;) {
    std::size_t deficit = n;
    for (std::size_t l = 0; l < n; ++l)
      if (frozen[l] < pruned[l]) {
        deficit = l;
        break;
      }
    if (deficit == n) break;
    std::size_t donor = n;
    for (std::size_t l = 0; l < n; ++l)
      if (frozen[l] > pruned[l] && (donor == n || frozen[l] - pruned[l] > frozen[donor] - pruned[donor])) donor = l;
    if (donor == n) throw PlanError("cannot repair negative locking count in layer " + std::to_string(deficit));
    ++frozen[deficit];
    --frozen[donor];
  }

  FreezePlan plan;
  plan.prune_ratio = prune_ratio;
  plan.lock_ratio = lock_ratio;
  plan.freeze_ratio = freeze_ratio;
  plan.strategy = options.strategy;
  for (std::size_t l = 0; l < n; ++l) plan.layers.push_back({sizes[l], pruned[l], frozen[l] - pruned[l]});
  plan.validate();
  return plan;
}

FreezePlan build_freeze_plan(const ArchSpec& arch, double freeze_ratio, double slt_sparsity,
                             const PlanOptions& options) {
  if (options.prune_override || options.lock_override) {
    const double prune = options.prune_override.value_or(freeze_ratio - options.lock_override.value_or(0.0));
    const double lock = options.lock_override.value_or(freeze_ratio - prune);
    return build_freeze_plan_from_ratios(arch, prune, lock, options);
  }
  if (freeze_ratio == 0.0) return build_freeze_plan_from_ratios(arch, 0.0, 0.0, options);
  const auto p = plan_proportion(freeze_ratio, slt_sparsity);
  auto plan = build_freeze_plan_from_ratios(arch, p.prune, p.lock, options);
  plan.freeze_ratio = freeze_ratio;
  return plan;
}

std::size_t FreezeMask::count(FreezeState s) const {
  std::size_t c = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) c += count(l, s);
  return c;
}

std::size_t FreezeMask::count(std::size_t layer, FreezeState s) const {
  return static_cast<std::size_t>(std::count(layers.at(layer).begin(), layers.at(layer).end(), s));
}

FreezeMask materialize_mask(const FreezePlan& plan, std::uint64_t seed) {
  plan.validate();
  FreezeMask mask;
  mask.layers.resize(plan.layers.size());
  for (std::size_t l = 0; l < plan.layers.size(); ++l) {
    const auto& lf = plan.layers[l];
    auto& states = mask.layers[l];
    states.assign(lf.size, FreezeState::free);
    const std::size_t frozen = lf.frozen();
    if (frozen == 0) continue;
    const auto perm = partial_permutation(lf.size, frozen, StreamKey{seed, l, Purpose::prune_mask});
    for (std::size_t i = 0; i < lf.pruned; ++i) states[perm[i]] = FreezeState::pruned;
    for (std::size_t i = lf.pruned; i < frozen; ++i) states[perm[i]] = FreezeState::locked;
  }
  return mask;
}

TernaryMask encode_ternary(const FreezeMask& mask) {
  TernaryMask out(mask.layers.size());
  for (std::size_t l = 0; l < mask.layers.size(); ++l) {
    out[l].reserve(mask.layers[l].size());
    for (auto s : mask.layers[l]) out[l].push_back(static_cast<std::int8_t>(s));
  }
  return out;
}

FreezeMask decode_ternary(const TernaryMask& codes) {
  FreezeMask mask;
  mask.layers.resize(codes.size());
  for (std::size_t l = 0; l < codes.size(); ++l) {
    mask.layers[l].reserve(codes[l].size());
    for (auto c : codes[l]) {
      if (c < -1 || c > 1) throw PlanError("ternary code " + std::to_string(c) + " outside {-1, 0, 1}");
      mask.layers[l].push_back(static_cast<FreezeState>(c));
    }
  }
  return mask;
}

Tensor prune_keep_tensor(const FreezeMask& mask, std::size_t layer, const Shape& shape) {
  Tensor t(shape);
  const auto& states = mask.layers.at(layer);
  if (states.size() != t.numel()) throw ShapeError("freeze mask layer size does not match shape");
  for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = states[i] == FreezeState::pruned ? 0.0f : 1.0f;
  return t;
}

Tensor lock_tensor(const FreezeMask& mask, std::size_t layer, const Shape& shape) {
  Tensor t(shape);
  const auto& states = mask.layers.at(layer);
  if (states.size() != t.numel()) throw ShapeError("freeze mask layer size does not match shape");
  for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = states[i] == FreezeState::locked ? 1.0f : 0.0f;
  return t;
}

TensorList frozen_weights(std::span<const Tensor> weights, const FreezeMask& mask) {
  if (weights.size() != mask.layers.size()) throw ShapeError("weights and freeze mask disagree on layer count");
  TensorList out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto mp = prune_keep_tensor(mask, l, weights[l].shape);
    const auto ml = lock_tensor(mask, l, weights[l].shape);
    Tensor w = weights[l];
    for (std::size_t i = 0; i < w.numel(); ++i) w.data[i] *= mp.data[i] * (1.0f - ml.data[i]) + ml.data[i];
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace fslt
