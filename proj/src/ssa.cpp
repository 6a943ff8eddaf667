#include "fslt/ssa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fslt {

namespace {

struct HalfSum {
  double sum;
  std::uint32_t mask;
};

// All subset sums of `vals`, sorted ascending, built by repeated merging.
std::vector<HalfSum> sorted_subset_sums(const std::vector<double>& vals) {
  std::vector<HalfSum> sums{{0.0, 0u}};
  std::vector<HalfSum> shifted, merged;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    shifted.resize(sums.size());
    for (std::size_t j = 0; j < sums.size(); ++j) shifted[j] = {sums[j].sum + vals[i], sums[j].mask | (1u << i)};
    merged.resize(sums.size() * 2);
    std::merge(sums.begin(), sums.end(), shifted.begin(), shifted.end(), merged.begin(),
               [](const HalfSum& a, const HalfSum& b) { return a.sum < b.sum; });
    sums.swap(merged);
  }
  return sums;
}

struct Halves {
  std::vector<std::size_t> free;
  std::size_t split = 0;
  std::vector<HalfSum> left, right;
};

Halves build_halves(const SsaTrial& trial) {
  Halves h;
  h.free = trial.free_indices();
  if (h.free.size() > kExactSolverLimit)
    throw SsaSizeError(std::to_string(h.free.size()) + " free variables exceed the exact-solver limit of " +
                       std::to_string(kExactSolverLimit) + "; use solve_greedy");
  h.split = h.free.size() / 2;
  std::vector<double> a, b;
  for (std::size_t i = 0; i < h.free.size(); ++i) (i < h.split ? a : b).push_back(trial.values[h.free[i]]);
  h.left = sorted_subset_sums(a);
  h.right = sorted_subset_sums(b);
  return h;
}

// Closest pair sum to `goal`: returns (left index, right index).
std::pair<std::size_t, std::size_t> closest_pair(const Halves& h, double goal) {
  std::size_t i = 0, j = h.right.size() - 1, bi = 0, bj = j;
  double best = INFINITY;
  while (true) {
    const double s = h.left[i].sum + h.right[j].sum;
    const double err = std::fabs(goal - s);
    if (err < best) {
      best = err;
      bi = i;
      bj = j;
    }
    if (s < goal) {
      if (++i == h.left.size()) break;
    } else {
      if (j == 0) break;
      --j;
    }
  }
  return {bi, bj};
}

std::vector<std::size_t> subset_from(const Halves& h, std::uint32_t left_mask, std::uint32_t right_mask) {
  std::vector<std::size_t> subset;
  for (std::size_t i = 0; i < h.free.size(); ++i) {
    const bool on = i < h.split ? (left_mask >> i) & 1u : (right_mask >> (i - h.split)) & 1u;
    if (on) subset.push_back(h.free[i]);
  }
  return subset;
}

}  // namespace

double SsaTrial::locked_sum() const {
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (available[i] && locked[i]) s += values[i];
  return s;
}

std::vector<std::size_t> SsaTrial::free_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (available[i] && !locked[i]) idx.push_back(i);
  return idx;
}

SsaTrial sample_trial(std::size_t n, double p, double q, double target, double eps, const StreamKey& key) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in (0, 1]");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("q must lie in [0, 1]");
  const Stream rng(key);
  SsaTrial t;
  t.target = target;
  t.eps = eps;
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = rng.block(i);
    const std::uint64_t w = (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
    t.values.push_back(2.0 * (static_cast<double>(w >> 11) * 0x1.0p-53) - 1.0);
    t.available.push_back(static_cast<double>(b[2]) * 0x1.0p-32 < p ? 1 : 0);
    t.locked.push_back(static_cast<double>(b[3]) * 0x1.0p-32 < q ? 1 : 0);
  }
  return t;
}

double achieved_error(const SsaTrial& trial, const std::vector<std::size_t>& subset) {
  double s = trial.locked_sum();
  for (auto i : subset) s += trial.values[i];
  return std::fabs(trial.target - s);
}

SsaSolution solve_exact(const SsaTrial& trial) {
  const auto h = build_halves(trial);
  const auto [i, j] = closest_pair(h, trial.target - trial.locked_sum());
  SsaSolution sol;
  sol.subset = subset_from(h, h.left[i].mask, h.right[j].mask);
  sol.error = achieved_error(trial, sol.subset);
  return sol;
}

SsaSolution solve_brute_force(const SsaTrial& trial) {
  const auto free = trial.free_indices();
  if (free.size() > kBruteForceLimit)
    throw SsaSizeError(std::to_string(free.size()) + " free variables exceed the brute-force limit of " +
                       std::to_string(kBruteForceLimit));
  SsaSolution best{INFINITY, {}};
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << free.size()); ++mask) {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < free.size(); ++i)
      if ((mask >> i) & 1u) subset.push_back(free[i]);
    const double err = achieved_error(trial, subset);
    if (err < best.error) best = {err, std::move(subset)};
  }
  return best;
}

SsaSolution solve_greedy(const SsaTrial& trial) {
  auto free = trial.free_indices();
  std::stable_sort(free.begin(), free.end(), [&](std::size_t a, std::size_t b) {
    return std::fabs(trial.values[a]) > std::fabs(trial.values[b]);
  });
  double residual = trial.target - trial.locked_sum();
  SsaSolution sol;
  for (auto i : free) {
    if (std::fabs(residual - trial.values[i]) < std::fabs(residual)) {
      residual -= trial.values[i];
      sol.subset.push_back(i);
    }
  }
  std::sort(sol.subset.begin(), sol.subset.end());
  sol.error = achieved_error(trial, sol.subset);
  return sol;
}

std::vector<double> exact_errors(const SsaTrial& trial, const std::vector<double>& targets) {
  const auto h = build_halves(trial);
  const double base = trial.locked_sum();
  std::vector<double> errors;
  for (double z : targets) {
    const auto [i, j] = closest_pair(h, z - base);
    errors.push_back(std::fabs(z - base - (h.left[i].sum + h.right[j].sum)));
  }
  return errors;
}

std::string to_string(SsaSolver solver) { return solver == SsaSolver::exact ? "exact" : "greedy"; }

double CurvePoint::std_error() const {
  if (trials == 0) return 0.0;
  const double r = success_rate();
  return std::sqrt(r * (1.0 - r) / static_cast<double>(trials));
}

std::vector<double> target_grid(std::size_t count) {
  if (count == 0) throw std::invalid_argument("target grid needs at least one point");
  if (count == 1) return {0.0};
  std::vector<double> grid(count);
  for (std::size_t i = 0; i < count; ++i)
    grid[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(count - 1);
  return grid;
}

std::optional<TailFit> fit_tail(const std::vector<CurvePoint>& points) {
  std::vector<double> xs, ys;
  for (const auto& pt : points) {
    if (pt.trials == 0 || pt.successes == pt.trials) continue;
    xs.push_back(static_cast<double>(pt.n));
    ys.push_back(std::log(1.0 - pt.success_rate()));
  }
  if (xs.size() < 3) return std::nullopt;
  const double k = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / k;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / k;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  TailFit fit;
  fit.points = xs.size();
  fit.slope = sxx > 0 ? sxy / sxx : 0.0;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0 && sxx > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

SuccessCurve estimate_success(const std::vector<std::size_t>& n_grid, double p, double q, double eps,
                              const std::vector<double>& targets, std::size_t trials, std::uint64_t seed) {
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  if (targets.empty()) throw std::invalid_argument("target grid is empty");
  for (double z : targets)
    if (!(z >= -1.0 && z <= 1.0)) throw std::invalid_argument("targets must lie in [-1, 1]");
  SuccessCurve curve;
  curve.p = p;
  curve.q = q;
  curve.eps = eps;
  curve.targets = targets;
  for (std::size_t n : n_grid) {
    CurvePoint pt;
    pt.n = n;
    pt.trials = trials;
    pt.solver = n <= kExactSolverLimit ? SsaSolver::exact : SsaSolver::greedy;
    for (std::size_t t = 0; t < trials; ++t) {
      auto trial = sample_trial(n, p, q, 0.0, eps, StreamKey{seed, (static_cast<std::uint64_t>(n) << 32) | t, Purpose::ssa_trial});
      bool ok = true;
      if (pt.solver == SsaSolver::exact) {
        for (double e : exact_errors(trial, targets)) ok = ok && e <= eps;
      } else {
        for (double z : targets) {
          trial.target = z;
          if (solve_greedy(trial).error > eps) {
            ok = false;
            break;
          }
        }
      }
      pt.successes += ok ? 1 : 0;
    }
    curve.points.push_back(pt);
  }
  curve.tail_fit = fit_tail(curve.points);
  return curve;
}

LockedMassCheck locked_mass_check(double alpha, std::size_t m, std::size_t trials, std::uint64_t seed) {
  LockedMassCheck check;
  check.alpha = alpha;
  check.m = m;
  check.trials = trials;
  check.bound = 2.0 * std::exp(-1.5 * alpha * alpha * static_cast<double>(m));
  for (std::size_t t = 0; t < trials; ++t) {
    const Stream rng(StreamKey{seed, (std::uint64_t{1} << 63) | t, Purpose::ssa_trial});
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += 2.0 * rng.uniform(i) - 1.0;
    check.violations += std::fabs(s) > alpha * static_cast<double>(m) ? 1 : 0;
  }
  return check;
}

}  // namespace fslt
