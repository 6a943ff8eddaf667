#include <doctest.h>

#include <cmath>
#include <set>

#include "fslt/rng.hpp"

using namespace fslt;

TEST_CASE("philox4x32-10 known-answer vectors") {
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == std::array<std::uint32_t, 4>{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        std::array<std::uint32_t, 4>{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        std::array<std::uint32_t, 4>{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are pure functions of key and index") {
  const Stream a({42, 3, Purpose::weights}), b({42, 3, Purpose::weights});
  for (std::uint64_t i = 0; i < 100; ++i) CHECK(a.bits(i) == b.bits(i));
  CHECK(Stream({42, 3, Purpose::scores}).bits(0) != a.bits(0));
  CHECK(Stream({42, 4, Purpose::weights}).bits(0) != a.bits(0));
  CHECK(Stream({43, 3, Purpose::weights}).bits(0) != a.bits(0));
  CHECK(Stream({42, std::uint64_t{1} << 32, Purpose::weights}).bits(0) != Stream({42, 0, Purpose::weights}).bits(0));
}

TEST_CASE("uniform and normal draws have the right moments") {
  const Stream s({7, 0, Purpose::weights});
  const int n = 200000;
  double su = 0, su2 = 0, sn = 0, sn2 = 0, sn4 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform(i), z = s.normal(i);
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    su2 += u * u;
    sn += z;
    sn2 += z * z;
    sn4 += z * z * z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(su2 / n - (su / n) * (su / n) == doctest::Approx(1.0 / 12).epsilon(0.02));
  CHECK(std::fabs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
  CHECK(sn4 / n == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("below() stays in range and covers it") {
  const Stream s({1, 0, Purpose::data_split});
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    const auto v = s.below(i, 7);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  CHECK_THROWS_AS(s.below(0, 0), std::invalid_argument);
}

TEST_CASE("partial permutation is a prefix of a permutation") {
  const auto full = partial_permutation(50, 50, {9, 1, Purpose::prune_mask});
  CHECK(std::set<std::uint32_t>(full.begin(), full.end()).size() == 50);
  const auto part = partial_permutation(50, 10, {9, 1, Purpose::prune_mask});
  CHECK(std::vector<std::uint32_t>(full.begin(), full.begin() + 10) == part);
  CHECK(partial_permutation(5, 0, {9, 1, Purpose::prune_mask}).empty());
  CHECK_THROWS_AS(partial_permutation(3, 4, {9, 1, Purpose::prune_mask}), std::invalid_argument);
}

TEST_CASE("partial permutation positions are close to uniform") {
  std::vector<int> first(8, 0);
  for (std::uint64_t seed = 0; seed < 8000; ++seed) ++first[partial_permutation(8, 1, {seed, 0, Purpose::prune_mask})[0]];
  for (int c : first) CHECK(std::abs(c - 1000) < 150);
}

TEST_CASE("kaiming uniform bound and variance") {
  const auto spec = LayerSpec::conv(16, 32, 3, 3);
  const auto w = init_weights(spec, {InitKind::kaiming_uniform, 0.0}, {3, 0, Purpose::weights});
  const double bound = std::sqrt(6.0 / 144.0);
  double s2 = 0;
  for (float v : w.data) {
    REQUIRE(std::fabs(v) <= bound + 1e-7);
    s2 += double(v) * v;
  }
  CHECK(s2 / w.numel() == doctest::Approx(2.0 / 144.0).epsilon(0.05));
}

TEST_CASE("kaiming normal variance") {
  const auto spec = LayerSpec::dense(200, 300);
  const auto w = init_weights(spec, {InitKind::kaiming_normal, 0.0}, {3, 1, Purpose::weights});
  double s2 = 0;
  for (float v : w.data) s2 += double(v) * v;
  CHECK(s2 / w.numel() == doctest::Approx(2.0 / 200.0).epsilon(0.03));
}

TEST_CASE("signed kaiming constant magnitude and balanced signs") {
  const auto spec = LayerSpec::dense(50, 400);
  const auto w = init_weights(spec, {InitKind::signed_kaiming_constant, 0.75}, {5, 0, Purpose::weights});
  const float mag = static_cast<float>(std::sqrt(2.0 / 50.0) / std::sqrt(0.25));
  CHECK(skc_magnitude(50, 0.75) == mag);
  int pos = 0;
  for (float v : w.data) {
    REQUIRE(std::fabs(v) == mag);
    pos += v > 0;
  }
  CHECK(std::abs(pos - 10000) < 400);
  CHECK_THROWS_AS(skc_magnitude(50, 1.0), std::invalid_argument);
}

TEST_CASE("scores are drawn independently of weights") {
  const auto spec = LayerSpec::dense(10, 10);
  const auto w = init_weights(spec, {InitKind::kaiming_normal, 0.0}, {1, 0, Purpose::weights});
  const auto s = init_scores(spec, {1, 0, Purpose::scores});
  CHECK(w.data != s.data);
  CHECK(init_scores(spec, {1, 0, Purpose::scores}) == s);
}

TEST_CASE("init kind names round-trip") {
  for (auto k : {InitKind::kaiming_uniform, InitKind::kaiming_normal, InitKind::signed_kaiming_constant})
    CHECK(init_kind_from_string(to_string(k)) == k);
  CHECK(init_kind_from_string("skc") == InitKind::signed_kaiming_constant);
  CHECK_THROWS(init_kind_from_string("xavier"));
}
