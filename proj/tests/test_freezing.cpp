#include <doctest.h>

#include <random>

#include "fslt/freezing.hpp"
#include "oracles.hpp"

using namespace fslt;

TEST_CASE("prune:lock proportion centers the search window on k") {
  auto p = plan_proportion(0.8, 0.5);
  CHECK(p.prune == doctest::Approx(0.4));
  CHECK(p.lock == doctest::Approx(0.4));
  p = plan_proportion(0.8, 0.05);
  CHECK(p.prune == 0.0);
  CHECK(p.lock == doctest::Approx(0.8));
  p = plan_proportion(0.8, 0.95);
  CHECK(p.prune == doctest::Approx(0.8));
  CHECK(p.lock == doctest::Approx(0.0));
  p = plan_proportion(0.0, 0.3);
  CHECK(p.prune == 0.0);
  CHECK(p.lock == 0.0);
  CHECK_THROWS_AS(plan_proportion(1.0, 0.5), PlanError);
  CHECK_THROWS_AS(plan_proportion(0.5, 0.0), PlanError);
  CHECK_THROWS_AS(plan_proportion(-0.1, 0.5), PlanError);
}

TEST_CASE("proportion invariants over random inputs") {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double f = u(gen) * 0.999, k = 0.001 + u(gen) * 0.998;
    const auto p = plan_proportion(f, k);
    REQUIRE(p.prune >= 0.0);
    REQUIRE(p.lock >= 0.0);
    REQUIRE(p.prune + p.lock == doctest::Approx(f));
    const bool unclamped = k - (1 - f) / 2 >= 0 && k - (1 - f) / 2 <= f;
    if (unclamped) REQUIRE((p.prune + 1.0 - p.lock) / 2 == doctest::Approx(k));
  }
}

TEST_CASE("EPL allocation matches the waterfill oracle") {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const auto layers = oracle::random_param_layers(gen);
    const double r = u(gen);
    std::vector<std::size_t> sizes;
    std::size_t total = 0;
    for (const auto& l : layers) {
      sizes.push_back(l.param_count());
      total += l.param_count();
    }
    const auto keep = allocate_layerwise(layers, r, Strategy::epl);
    CHECK(keep == oracle::epl_keep(sizes, total - static_cast<std::size_t>(std::llround(r * total))));
  }
}

TEST_CASE("ERK allocation matches the bisection oracle") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const auto layers = oracle::random_param_layers(gen);
    const double r = u(gen);
    std::size_t total = 0;
    for (const auto& l : layers) total += l.param_count();
    const auto keep = allocate_layerwise(layers, r, Strategy::erk);
    CHECK(keep == oracle::erk_keep(layers, total - static_cast<std::size_t>(std::llround(r * total))));
  }
}

TEST_CASE("ERK keeps small layers denser") {
  const std::vector<LayerSpec> layers{LayerSpec::conv(3, 16, 3, 3), LayerSpec::conv(16, 64, 3, 3), LayerSpec::dense(1024, 10)};
  const auto keep = allocate_layerwise(layers, 0.7, Strategy::erk);
  CHECK(double(keep[0]) / layers[0].param_count() > double(keep[1]) / layers[1].param_count());
}

TEST_CASE("exempt layers keep everything") {
  const auto arch = make_convnet(2, {1, 28, 28}, 10, 0.25, false);
  PlanOptions opt;
  opt.exempt_boundary_layers = true;
  const auto plan = build_freeze_plan(arch, 0.5, 0.5, opt);
  CHECK(plan.layers.front().frozen() == 0);
  CHECK(plan.layers.back().frozen() == 0);
  CHECK(plan.total_pruned() + plan.total_locked() == static_cast<std::size_t>(std::llround(0.5 * plan.total_params())));
}

TEST_CASE("freeze plan totals follow the global ratios") {
  const auto arch = make_convnet(6, {3, 32, 32}, 10, 1.0, false);
  for (auto strategy : {Strategy::epl, Strategy::erk}) {
    PlanOptions opt;
    opt.strategy = strategy;
    const auto plan = build_freeze_plan(arch, 0.6, 0.5, opt);
    const double n = plan.total_params();
    CHECK(plan.total_pruned() == static_cast<std::size_t>(std::llround(0.3 * n)));
    CHECK(plan.total_pruned() + plan.total_locked() == static_cast<std::size_t>(std::llround(0.6 * n)));
    for (const auto& l : plan.layers) CHECK(l.pruned + l.locked <= l.size);
  }
  const auto dense = build_freeze_plan(arch, 0.0, 0.5);
  CHECK(dense.total_free() == dense.total_params());
}

TEST_CASE("explicit ratio overrides bypass the proportion rule") {
  const auto arch = make_convnet(2, {1, 28, 28}, 10, 0.25, false);
  PlanOptions opt;
  opt.prune_override = 0.1;
  const auto plan = build_freeze_plan(arch, 0.6, 0.5, opt);
  CHECK(plan.prune_ratio == doctest::Approx(0.1));
  CHECK(plan.lock_ratio == doctest::Approx(0.5));
}

TEST_CASE("materialized masks have exact, disjoint counts") {
  const auto arch = make_convnet(6, {3, 32, 32}, 10, 0.25, false);
  const auto plan = build_freeze_plan(arch, 0.5, 0.6);
  const auto mask = materialize_mask(plan, 11);
  for (std::size_t l = 0; l < plan.layers.size(); ++l) {
    CHECK(mask.count(l, FreezeState::pruned) == plan.layers[l].pruned);
    CHECK(mask.count(l, FreezeState::locked) == plan.layers[l].locked);
  }
  CHECK(materialize_mask(plan, 11) == mask);
  CHECK(materialize_mask(plan, 12) != mask);
}

TEST_CASE("ternary encoding round-trips and rejects bad codes") {
  const auto arch = make_convnet(2, {1, 8, 8}, 3, 0.125, false);
  const auto mask = materialize_mask(build_freeze_plan(arch, 0.5, 0.5), 4);
  const auto codes = encode_ternary(mask);
  CHECK(decode_ternary(codes) == mask);
  auto bad = codes;
  bad[0][0] = 2;
  CHECK_THROWS_AS(decode_ternary(bad), PlanError);
}

TEST_CASE("frozen weights zero pruned positions and keep locked ones") {
  FreezeMask mask;
  mask.layers = {{FreezeState::pruned, FreezeState::free, FreezeState::locked}};
  TensorList w{Tensor({1, 3}, {1.0f, 2.0f, 3.0f})};
  const auto fw = frozen_weights(w, mask);
  CHECK(fw[0].data == std::vector<float>{0.0f, 2.0f, 3.0f});
  CHECK(prune_keep_tensor(mask, 0, {1, 3}).data == std::vector<float>{0, 1, 1});
  CHECK(lock_tensor(mask, 0, {1, 3}).data == std::vector<float>{0, 0, 1});
}

TEST_CASE("collapsed layers are reported") {
  FreezePlan plan;
  plan.layers = {{10, 10, 0}, {10, 2, 3}};
  CHECK(plan.collapsed_layers() == std::vector<std::size_t>{0});
  plan.layers.push_back({5, 4, 4});
  CHECK_THROWS_AS(plan.validate(), PlanError);
}
