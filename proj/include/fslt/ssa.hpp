#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fslt/rng.hpp"

namespace fslt {

/// Instance too large for the exact solver.
class SsaSizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kExactSolverLimit = 40;
inline constexpr std::size_t kBruteForceLimit = 24;

/// Random variables X_i ~ U(-1, 1) with availability M_i ~ Ber(p) and lock M'_i ~ Ber(q).
/// Locked available terms are always summed; a subset of the free available ones is chosen.
struct SsaTrial {
  std::vector<double> values;
  std::vector<std::uint8_t> available;  // M_i
  std::vector<std::uint8_t> locked;     // M'_i
  double target = 0.0;
  double eps = 0.0;

  std::size_t size() const { return values.size(); }
  /// sum of M_i M'_i X_i
  double locked_sum() const;
  /// Indices with M_i = 1 and M'_i = 0, ascending.
  std::vector<std::size_t> free_indices() const;
};

struct SsaSolution {
  double error = 0.0;
  std::vector<std::size_t> subset;  // ascending indices into the trial
};

/// iid draws: variable i uses block i of `key` (X from words 0-1, M from word 2, M' from word 3).
SsaTrial sample_trial(std::size_t n, double p, double q, double target, double eps, const StreamKey& key);

/// |target - locked_sum - sum_{i in subset} X_i|
double achieved_error(const SsaTrial& trial, const std::vector<std::size_t>& subset);

/// Global optimum over subsets of the free variables. Throws SsaSizeError above kExactSolverLimit.
SsaSolution solve_exact(const SsaTrial& trial);
/// Plain enumeration; throws SsaSizeError above kBruteForceLimit.
SsaSolution solve_brute_force(const SsaTrial& trial);
/// Largest |value| first, include a value iff it shrinks |residual|. Never better than exact.
SsaSolution solve_greedy(const SsaTrial& trial);

/// Best error for every target in `targets` against one draw of variables, ignoring trial.target.
std::vector<double> exact_errors(const SsaTrial& trial, const std::vector<double>& targets);

enum class SsaSolver : std::uint8_t { exact = 0, greedy = 1 };
std::string to_string(SsaSolver solver);

struct CurvePoint {
  std::size_t n = 0;
  SsaSolver solver = SsaSolver::exact;
  std::size_t successes = 0;
  std::size_t trials = 0;

  double success_rate() const { return trials ? static_cast<double>(successes) / static_cast<double>(trials) : 0.0; }
  /// Binomial standard error of success_rate().
  double std_error() const;
};

/// Least-squares line through (n, log(1 - success)) for points with success < 1.
struct TailFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;
};

struct SuccessCurve {
  double p = 1.0;
  double q = 0.0;
  double eps = 0.0;
  std::vector<double> targets;
  std::vector<CurvePoint> points;
  std::optional<TailFit> tail_fit;  // empirical; present when at least 3 points are estimable
};

/// `count` evenly spaced targets in [-1, 1].
std::vector<double> target_grid(std::size_t count = 21);

/// Trial t at size n uses StreamKey{seed, (n << 32) | t, ssa_trial}. A trial succeeds when every
/// target is reachable within eps. Sizes up to kExactSolverLimit use the exact solver; larger ones
/// use greedy, which only under-counts successes.
SuccessCurve estimate_success(const std::vector<std::size_t>& n_grid, double p, double q, double eps,
                              const std::vector<double>& targets, std::size_t trials, std::uint64_t seed);

std::optional<TailFit> fit_tail(const std::vector<CurvePoint>& points);

/// Frequency of |sum of m U(-1, 1) draws| > alpha m, against the bound 2 exp(-3 alpha^2 m / 2).
struct LockedMassCheck {
  double alpha = 0.0;
  std::size_t m = 0;
  std::size_t trials = 0;
  std::size_t violations = 0;
  double bound = 0.0;

  double violation_rate() const { return trials ? static_cast<double>(violations) / static_cast<double>(trials) : 0.0; }
};

LockedMassCheck locked_mass_check(double alpha, std::size_t m, std::size_t trials, std::uint64_t seed);

}  // namespace fslt
