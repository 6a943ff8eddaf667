#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fslt/compression.hpp"
#include "fslt/harness.hpp"

using namespace fslt;

namespace {

struct Searched {
  Dataset data;
  TicketModel model;
};

Searched searched_toy(std::uint64_t seed, InitKind init, bool batchnorm = false) {
  Searched s{load_dataset("toy_gaussians", "", seed), {}};
  const auto arch = make_arch("mlp", s.data.input_shape, s.data.num_classes, 1.0, batchnorm, {24, 24});
  SearchConfig cfg;
  cfg.lr0 = 0.5;
  cfg.epochs = 2;
  cfg.batch_size = 100;
  auto result = search(make_ticket_model(arch, build_freeze_plan(arch, 0.5, 0.5), 0.5, init, seed), cfg,
                       s.data.train, s.data.val);
  finalize_scaling(result.model);
  s.model = std::move(result.model);
  return s;
}

}  // namespace

TEST_CASE("pack and unpack reproduce logits bit for bit") {
  for (auto init : {InitKind::kaiming_uniform, InitKind::signed_kaiming_constant}) {
    const auto s = searched_toy(3, init, true);
    const auto bytes = pack(s.model);
    const auto restored = unpack(bytes);
    CHECK(restored.weights == s.model.weights);
    CHECK(restored.freeze == s.model.freeze);
    CHECK(restored.norm == s.model.norm);
    CHECK(restored.scores.empty());
    const auto& x = s.data.test.inputs;
    CHECK(infer(s.model.arch, s.model.weights, inference_mask(s.model), x, s.model.norm) ==
          infer(restored.arch, restored.weights, inference_mask(restored), x, restored.norm));
    CHECK(pack(restored) == bytes);
  }
}

TEST_CASE("file round trip") {
  const auto s = searched_toy(4, InitKind::kaiming_uniform);
  const auto path = std::filesystem::temp_directory_path() / "fslt_roundtrip.ftkt";
  write_bytes(path, pack(s.model));
  CHECK(unpack(read_bytes(path)).supermask == inference_mask(s.model));
  std::filesystem::remove(path);
}

TEST_CASE("a fully frozen layer has an empty bitmap") {
  const auto arch = make_arch("mlp", {16}, 4, 1.0, false, {32, 32});
  FreezePlan plan;
  plan.layers = {{512, 0, 512}, {1024, 0, 0}, {128, 0, 0}};
  plan.lock_ratio = plan.freeze_ratio = 512.0 / 1664.0;
  const auto model = make_ticket_model(arch, plan, 0.5, InitKind::kaiming_uniform, 1);
  const auto packed = make_packed(model);
  CHECK(packed.layers[0].bit_count == 0);
  CHECK(packed.layers[0].bits.empty());
  CHECK(unpack(encode(packed)).supermask == effective_mask(model));
}

TEST_CASE("tampering is detected") {
  const auto s = searched_toy(5, InitKind::kaiming_uniform);
  const auto bytes = pack(s.model);
  for (std::size_t pos : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] ^= 0x01;
    CHECK_THROWS_AS(unpack(bad), ChecksumError);
  }
  CHECK_THROWS_AS(unpack(std::span(bytes).first(bytes.size() - 7)), FormatError);
}

TEST_CASE("version and count mismatches are explicit errors") {
  const auto s = searched_toy(6, InitKind::kaiming_uniform);
  auto packed = make_packed(s.model);
  auto other = packed;
  other.rng_scheme_version = kRngSchemeVersion + 1;
  CHECK_THROWS_AS(unpack(encode(other)), VersionError);
  other = packed;
  other.format_version = kFormatVersion + 1;
  CHECK_THROWS_AS(unpack(encode(other)), VersionError);
  other = packed;
  other.layers[1].pruned += 1;
  CHECK_THROWS_AS(unpack(encode(other)), CountError);
  other = packed;
  other.layers[0].realized_sparsity += 0.05;
  CHECK_THROWS_AS(unpack(encode(other)), CountError);
  other = packed;
  other.layers[0].bits[0] ^= 0x01;
  CHECK_THROWS_AS(unpack(encode(other)), CountError);
}

TEST_CASE("SKC tickets must be rescaled before packing") {
  const auto data = load_dataset("toy_gaussians", "", 2);
  const auto arch = make_arch("mlp", data.input_shape, data.num_classes, 1.0, false, {16});
  auto model = make_ticket_model(arch, build_freeze_plan(arch, 0.2, 0.7), 0.7, InitKind::signed_kaiming_constant, 2);
  CHECK_THROWS_AS(pack(model), std::invalid_argument);
  finalize_scaling(model);
  CHECK_NOTHROW(pack(model));
}

TEST_CASE("size counts one bit per free position") {
  const auto arch = make_mlp(100, {}, 10, false);
  const auto plan = build_freeze_plan(arch, 0.6, 0.5);
  const auto size = account_size(plan, 0);
  CHECK(size.supermask_bits == 400);
  CHECK(size.total_bytes() == 50);
}

TEST_CASE("Conv6 accounting") {
  const auto arch = make_convnet(6, {3, 32, 32}, 10, 1.0, false);
  const auto dense = account_size(build_freeze_plan(arch, 0.0, 0.5), 0);
  const auto frozen = account_size(build_freeze_plan(arch, 0.5, 0.5), 0);
  CHECK(dense.total_bytes() == 282648);
  CHECK(frozen.total_bytes() == 141324);
  CHECK(dense.mebibytes() == doctest::Approx(0.2696).epsilon(1e-3));
  CHECK(weight_training_size(arch.total_params(), 0).mebibytes() == doctest::Approx(8.63).epsilon(1e-3));
}

TEST_CASE("size properties") {
  const auto arch = make_convnet(4, {3, 32, 32}, 10, 0.5, true);
  const std::size_t stats = NormState::init(arch).statistic_count();
  const auto dense = account_size(build_freeze_plan(arch, 0.0, 0.5), stats);
  CHECK(dense.supermask_bits == arch.total_params());
  CHECK(dense.bn_param_bits == 32 * stats);
  std::uint64_t previous = dense.supermask_bits + 1;
  for (double f : {0.0, 0.2, 0.4, 0.6, 0.8}) {
    const auto s = account_size(build_freeze_plan(arch, f, 0.5), stats);
    CHECK(s.supermask_bits < previous);
    CHECK(s.supermask_bits == arch.total_params() - static_cast<std::size_t>(std::llround(f * arch.total_params())));
    previous = s.supermask_bits;
  }
  auto a = make_ticket_model(arch, build_freeze_plan(arch, 0.4, 0.5), 0.5, InitKind::kaiming_uniform, 1);
  auto b = make_ticket_model(arch, build_freeze_plan(arch, 0.4, 0.5), 0.5, InitKind::kaiming_normal, 2);
  CHECK(account_size(a) == account_size(b));
}
