#include <doctest.h>

#include <cmath>

#include "fslt/ssa.hpp"
#include "oracles.hpp"

using namespace fslt;

namespace {

SsaTrial make(std::vector<double> x, std::vector<std::uint8_t> avail, std::vector<std::uint8_t> lock, double z) {
  SsaTrial t;
  t.values = std::move(x);
  t.available = std::move(avail);
  t.locked = std::move(lock);
  t.target = z;
  t.eps = 0.01;
  return t;
}

std::vector<double> free_values(const SsaTrial& t) {
  std::vector<double> v;
  for (auto i : t.free_indices()) v.push_back(t.values[i]);
  return v;
}

}  // namespace

TEST_CASE("constructed exact instance") {
  const auto t = make({0.5, -0.25, 0.125}, {1, 1, 1}, {0, 0, 0}, 0.375);
  const auto sol = solve_exact(t);
  CHECK(sol.error == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(sol.subset == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("locked terms are always included") {
  const auto t = make({0.4, 0.3}, {1, 1}, {1, 0}, 0.1);
  CHECK(t.locked_sum() == 0.4);
  const auto sol = solve_exact(t);
  CHECK(sol.error == doctest::Approx(0.3));
  CHECK(sol.subset.empty());
  CHECK(solve_brute_force(t).error == doctest::Approx(0.3));
}

TEST_CASE("greedy on dyadic values and the empty free set") {
  const auto t = make({0.5, 0.25, 0.125}, {1, 1, 1}, {0, 0, 0}, 0.875);
  CHECK(solve_greedy(t).error == 0.0);
  const auto e = make({0.5, 0.25}, {0, 1}, {0, 1}, 0.9);
  CHECK(solve_greedy(e).error == doctest::Approx(0.65));
  CHECK(solve_greedy(e).subset.empty());
}

TEST_CASE("sampling degeneracies and determinism") {
  const StreamKey key{1, 2, Purpose::ssa_trial};
  const auto plain = sample_trial(64, 1.0, 0.0, 0.0, 0.05, key);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(plain.available[i] == 1);
    CHECK(plain.locked[i] == 0);
    CHECK(std::fabs(plain.values[i]) <= 1.0);
  }
  const auto again = sample_trial(64, 1.0, 0.0, 0.0, 0.05, key);
  CHECK(again.values == plain.values);
  const auto frozen = sample_trial(4000, 0.7, 0.2, 0.0, 0.05, key);
  std::size_t avail = 0, locked = 0;
  for (std::size_t i = 0; i < 4000; ++i) {
    avail += frozen.available[i];
    locked += frozen.locked[i];
  }
  CHECK(std::fabs(avail / 4000.0 - 0.7) < 0.03);
  CHECK(std::fabs(locked / 4000.0 - 0.2) < 0.03);
  CHECK_THROWS(sample_trial(4, 0.0, 0.0, 0.0, 0.1, key));
}

TEST_CASE("meet-in-the-middle equals brute force") {
  for (std::uint64_t t = 0; t < 30; ++t) {
    auto trial = sample_trial(16, 0.8, 0.2, 0.0, 0.05, {t, 0, Purpose::ssa_trial});
    for (double z : {-0.9, -0.3, 0.0, 0.45, 1.0}) {
      trial.target = z;
      const auto exact = solve_exact(trial);
      const double reference = oracle::subset_sum_min_error(free_values(trial), trial.locked_sum(), z);
      CHECK(exact.error == doctest::Approx(reference).epsilon(1e-12));
      CHECK(solve_brute_force(trial).error == doctest::Approx(reference).epsilon(1e-12));
      CHECK(exact.error == doctest::Approx(achieved_error(trial, exact.subset)).epsilon(1e-12));
      for (auto i : exact.subset) CHECK((trial.available[i] && !trial.locked[i]));
    }
  }
}

TEST_CASE("greedy never beats exact") {
  for (std::uint64_t t = 0; t < 40; ++t) {
    auto trial = sample_trial(20, 0.9, 0.1, 0.0, 0.05, {t, 1, Purpose::ssa_trial});
    for (double z : {-0.7, 0.1, 0.8}) {
      trial.target = z;
      CHECK(solve_greedy(trial).error >= solve_exact(trial).error - 1e-12);
    }
  }
}

TEST_CASE("batch errors agree with single solves") {
  const auto trial = sample_trial(22, 1.0, 0.0, 0.0, 0.05, {3, 3, Purpose::ssa_trial});
  const auto grid = target_grid(21);
  const auto errors = exact_errors(trial, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto t = trial;
    t.target = grid[i];
    CHECK(errors[i] == doctest::Approx(solve_exact(t).error).epsilon(1e-12));
  }
}

TEST_CASE("instance size limits") {
  CHECK_THROWS_AS(solve_exact(sample_trial(41, 1.0, 0.0, 0.0, 0.1, {1, 0, Purpose::ssa_trial})), SsaSizeError);
  CHECK_THROWS_AS(solve_brute_force(sample_trial(25, 1.0, 0.0, 0.0, 0.1, {1, 0, Purpose::ssa_trial})), SsaSizeError);
  CHECK_NOTHROW(solve_greedy(sample_trial(200, 1.0, 0.0, 0.0, 0.1, {1, 0, Purpose::ssa_trial})));
}

TEST_CASE("target grid") {
  const auto g = target_grid(21);
  CHECK(g.size() == 21);
  CHECK(g.front() == -1.0);
  CHECK(g.back() == 1.0);
  CHECK(g[10] == doctest::Approx(0.0));
}

TEST_CASE("success curve edges") {
  const auto curve = estimate_success({1, 24}, 1.0, 0.0, 0.01, target_grid(21), 50, 7);
  CHECK(curve.points[0].success_rate() == 0.0);
  CHECK(curve.points[1].success_rate() > 0.5);
  for (const auto& p : curve.points) CHECK(p.solver == SsaSolver::exact);
  const auto big = estimate_success({48}, 1.0, 0.0, 0.05, target_grid(5), 5, 7);
  CHECK(big.points[0].solver == SsaSolver::greedy);
  CHECK_THROWS(estimate_success({8}, 1.0, 0.0, 0.05, {1.5}, 5, 7));
}

TEST_CASE("tail fit on an exact exponential") {
  std::vector<CurvePoint> pts;
  for (std::size_t n : {4, 8, 12, 16}) {
    CurvePoint p;
    p.n = n;
    p.trials = 1000000;
    p.successes = static_cast<std::size_t>(std::llround(p.trials * (1.0 - std::exp(-0.25 * n))));
    pts.push_back(p);
  }
  const auto fit = fit_tail(pts);
  REQUIRE(fit);
  CHECK(fit->slope == doctest::Approx(-0.25).epsilon(1e-3));
  CHECK(fit->r_squared > 0.999);
}

TEST_CASE("locked mass stays under the Hoeffding rate") {
  const auto check = locked_mass_check(0.3, 50, 20000, 1);
  CHECK(check.bound == doctest::Approx(2.0 * std::exp(-1.5 * 0.09 * 50)));
  CHECK(check.violation_rate() <= check.bound);
}
