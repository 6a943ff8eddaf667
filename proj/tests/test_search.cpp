#include <doctest.h>

#include <cmath>

#include "fslt/harness.hpp"
#include "fslt/search.hpp"

using namespace fslt;

namespace {

ArchSpec toy_mlp() { return make_arch("mlp", {16}, 4, 1.0, false, {32, 32}); }

std::size_t active(const TensorList& mask) {
  std::size_t n = 0;
  for (const auto& m : mask)
    for (float v : m.data) n += v != 0.0f;
  return n;
}

}  // namespace

TEST_CASE("model construction is seed-deterministic") {
  const auto arch = toy_mlp();
  const auto plan = build_freeze_plan(arch, 0.4, 0.5);
  const auto a = make_ticket_model(arch, plan, 0.5, InitKind::kaiming_uniform, 3);
  const auto b = make_ticket_model(arch, plan, 0.5, InitKind::kaiming_uniform, 3);
  CHECK(a.weights == b.weights);
  CHECK(a.scores == b.scores);
  CHECK(a.freeze == b.freeze);
  CHECK(make_ticket_model(arch, plan, 0.5, InitKind::kaiming_uniform, 4).weights != a.weights);
}

TEST_CASE("effective mask has the exact active count and respects freezing") {
  const auto arch = toy_mlp();
  for (double k : {0.3, 0.5, 0.7}) {
    const auto plan = build_freeze_plan(arch, 0.5, k);
    const auto model = make_ticket_model(arch, plan, k, InitKind::kaiming_normal, 1);
    const auto mask = effective_mask(model);
    CHECK(active(mask) == model.required_active());
    for (std::size_t l = 0; l < mask.size(); ++l)
      for (std::size_t i = 0; i < mask[l].numel(); ++i) {
        if (model.freeze.layers[l][i] == FreezeState::locked) CHECK(mask[l].data[i] == 1.0f);
        if (model.freeze.layers[l][i] == FreezeState::pruned) CHECK(mask[l].data[i] == 0.0f);
      }
  }
}

TEST_CASE("top-k keeps the highest free scores with index tie-breaks") {
  FreezeMask freeze;
  freeze.layers = {{FreezeState::free, FreezeState::locked, FreezeState::free},
                   {FreezeState::free, FreezeState::pruned, FreezeState::free}};
  TensorList scores{Tensor({1, 3}, {0.5f, -9.0f, 0.1f}), Tensor({1, 3}, {0.5f, 9.0f, 0.2f})};
  // N = 6; two active = the locked one plus one of the tied 0.5 scores, taken from the lower layer.
  auto mask = effective_mask(scores, freeze, 2.0 / 3.0);
  CHECK(mask[0].data == std::vector<float>{1, 1, 0});
  CHECK(mask[1].data == std::vector<float>{0, 0, 0});
  mask = effective_mask(scores, freeze, 0.5);
  CHECK(mask[0].data == std::vector<float>{1, 1, 0});
  CHECK(mask[1].data == std::vector<float>{1, 0, 0});
  mask = effective_mask(scores, freeze, 1.0 / 6.0);
  CHECK(mask[0].data == std::vector<float>{1, 1, 1});
  CHECK(mask[1].data == std::vector<float>{1, 0, 1});
  CHECK_THROWS_AS(effective_mask(scores, freeze, 0.0), WindowError);  // needs the pruned slot
  CHECK_THROWS_AS(effective_mask(scores, freeze, 0.95), WindowError);  // below the locked count
}

TEST_CASE("top-k is invariant to a positive rescaling of the scores") {
  const auto arch = toy_mlp();
  const auto model = make_ticket_model(arch, build_freeze_plan(arch, 0.4, 0.5), 0.5, InitKind::kaiming_uniform, 9);
  auto scaled = model.scores;
  for (auto& t : scaled)
    for (auto& v : t.data) v *= 4.0f;
  CHECK(effective_mask(scaled, model.freeze, 0.5) == effective_mask(model));
}

TEST_CASE("score gradient is zero outside the free region") {
  const auto arch = toy_mlp();
  const auto model = make_ticket_model(arch, build_freeze_plan(arch, 0.6, 0.5), 0.5, InitKind::kaiming_uniform, 2);
  TensorList g;
  for (const auto& w : model.weights) g.emplace_back(w.shape, 1.0f);
  const auto gs = score_gradient(model, g);
  for (std::size_t l = 0; l < gs.size(); ++l)
    for (std::size_t i = 0; i < gs[l].numel(); ++i) {
      if (model.freeze.layers[l][i] == FreezeState::free)
        CHECK(gs[l].data[i] == model.weights[l].data[i]);
      else
        CHECK(gs[l].data[i] == 0.0f);
    }
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(0.1, 0, 100) == doctest::Approx(0.1));
  CHECK(cosine_lr(0.1, 50, 100) == doctest::Approx(0.05));
  CHECK(cosine_lr(0.1, 100, 100) == doctest::Approx(0.0));
}

TEST_CASE("optimizers touch only free scores") {
  const auto arch = toy_mlp();
  const auto model = make_ticket_model(arch, build_freeze_plan(arch, 0.6, 0.5), 0.5, InitKind::kaiming_uniform, 2);
  for (auto kind : {OptimizerKind::sgd_momentum, OptimizerKind::adamw}) {
    SearchConfig cfg;
    cfg.optimizer = kind;
    auto scores = model.scores;
    ScoreOptimizer opt(cfg, scores);
    TensorList g;
    for (const auto& s : scores) g.emplace_back(s.shape, 0.3f);
    opt.step(scores, g, model.freeze, 0, 10);
    for (std::size_t l = 0; l < scores.size(); ++l)
      for (std::size_t i = 0; i < scores[l].numel(); ++i)
        if (model.freeze.layers[l][i] == FreezeState::free)
          CHECK(scores[l].data[i] != model.scores[l].data[i]);
        else
          CHECK(scores[l].data[i] == model.scores[l].data[i]);
  }
}

TEST_CASE("sgd momentum update follows v = m v + g + wd s") {
  SearchConfig cfg;
  cfg.lr0 = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.01;
  TensorList s{Tensor({1, 1}, 2.0f)};
  FreezeMask freeze;
  freeze.layers = {{FreezeState::free}};
  ScoreOptimizer opt(cfg, s);
  TensorList g{Tensor({1, 1}, 1.0f)};
  opt.step(s, g, freeze, 0, 0);  // T = 0 keeps lr constant
  const float v1 = 1.0f + 0.01f * 2.0f;
  const float s1 = 2.0f - 0.1f * v1;
  CHECK(s[0].data[0] == doctest::Approx(s1));
  opt.step(s, g, freeze, 0, 0);
  const float v2 = 0.9f * v1 + 1.0f + 0.01f * s1;
  CHECK(s[0].data[0] == doctest::Approx(s1 - 0.1f * v2));
}

TEST_CASE("search learns a toy problem and leaves weights untouched") {
  const auto data = load_dataset("toy_gaussians", "", 5);
  const auto arch = make_arch("mlp", data.input_shape, data.num_classes, 1.0, false, {32, 32});
  const auto model = make_ticket_model(arch, build_freeze_plan(arch, 0.4, 0.5), 0.5, InitKind::kaiming_uniform, 5);
  SearchConfig cfg;
  cfg.lr0 = 0.5;
  cfg.epochs = 5;
  cfg.batch_size = 64;
  std::size_t steps = 0;
  const auto result = search(model, cfg, data.train, data.val, [&](const StepInfo& info) {
    ++steps;
    REQUIRE(active(*info.mask) == model.required_active());
  });
  CHECK(steps == 5 * ((data.train.size() + 63) / 64));
  CHECK(result.model.weights == model.weights);
  CHECK(result.model.freeze == model.freeze);
  CHECK(result.best_val_acc > 0.6);
  CHECK(evaluate(result.model, data.test) > 0.6);
  const auto again = search(model, cfg, data.train, data.val);
  CHECK(again.model.scores == result.model.scores);
}

TEST_CASE("SKC rescaling with realized layer sparsity keeps predictions") {
  const auto data = load_dataset("toy_gaussians", "", 1);
  const auto arch = make_arch("mlp", data.input_shape, data.num_classes, 1.0, false, {32, 32});
  auto model = make_ticket_model(arch, build_freeze_plan(arch, 0.4, 0.5), 0.5, InitKind::signed_kaiming_constant, 1);
  const auto mask = inference_mask(model);
  const auto before = infer(arch, model.weights, mask, data.test.inputs, model.norm);
  finalize_scaling(model);
  const auto after = infer(arch, model.weights, mask, data.test.inputs, model.norm);
  CHECK(accuracy(before, data.test.labels) == accuracy(after, data.test.labels));
}

TEST_CASE("search config validation") {
  SearchConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(optimizer_from_string("adamw") == OptimizerKind::adamw);
  CHECK_THROWS(optimizer_from_string("rmsprop"));
}
