#include <cmath>
#include <set>

#include "doctest.h"
#include "mmet/error.hpp"
#include "mmet/image.hpp"

using namespace mmet;
using namespace mmet::image;

namespace {

Image random_image(std::size_t h, std::size_t w, Rng& rng) {
  Image img(h, w);
  for (auto& v : img.pixels) v = uniform01(rng);
  return img;
}

PatchGrid toy_grid() {  // 64x32 image, p=16: 4 rows x 2 cols
  Rng rng(0);
  return patchify(random_image(64, 32, rng), 16);
}

}  // namespace

TEST_CASE("resize: identity, checkerboard, ramp oracle") {
  Rng rng(1);
  auto img = random_image(6, 4, rng);
  CHECK(resize(img, 6, 4) == img);

  Image checker(2, 2);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    checker.at(0, 0, ch) = 0.0;
    checker.at(0, 1, ch) = 1.0;
    checker.at(1, 0, ch) = 1.0;
    checker.at(1, 1, ch) = 0.0;
  }
  auto one = resize(checker, 1, 1);
  for (std::size_t ch = 0; ch < 3; ++ch) CHECK(one.at(0, 0, ch) == doctest::Approx(0.5));

  // Halving with half-pixel centers samples the middle of each 2x2 block,
  // i.e. the block average.
  Image ramp(4, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch)
        ramp.at(r, c, ch) = (static_cast<double>(r * 4 + c) + static_cast<double>(ch)) / 20.0;
  auto half = resize(ramp, 2, 2);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double avg = 0.0;
        for (std::size_t dr = 0; dr < 2; ++dr)
          for (std::size_t dc = 0; dc < 2; ++dc) avg += ramp.at(2 * r + dr, 2 * c + dc, ch);
        CHECK(std::abs(half.at(r, c, ch) - avg / 4.0) < 1e-10);
      }
  CHECK_THROWS_AS(resize(img, 0, 3), UsageError);
}

TEST_CASE("resize: output stays within [0, 1]") {
  Rng rng(2);
  auto img = random_image(7, 5, rng);
  auto up = resize(img, 256, 128);
  for (double v : up.pixels) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("patchify: counts, patch length, lossless round trip") {
  Rng rng(3);
  auto g = patchify(random_image(64, 32, rng), 16);
  CHECK(g.count() == 8);
  CHECK(g.patch_dim() == 768);
  CHECK(g.rows == 4);
  CHECK(g.cols == 2);
  CHECK(patchify(random_image(256, 128, rng), 16).count() == 128);

  for (int t = 0; t < 5; ++t) {
    auto img = random_image(32, 48, rng);
    CHECK(unpatchify(patchify(img, 8)) == img);
  }
  try {
    patchify(random_image(30, 32, rng), 16);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("30x32") != std::string::npos);
    CHECK(msg.find("16") != std::string::npos);
  }
}

TEST_CASE("random_mask_plan: counts and targets") {
  Rng rng(4);
  auto g = toy_grid();
  auto plan = random_mask_plan(g, 0.15, rng);
  REQUIRE(plan.size() == 1);
  CHECK(plan.targets.size() == 768);
  CHECK(plan.targets[5] == g.patch(plan.positions[0])[5]);
  CHECK(random_mask_positions(128, 0.15, rng).size() == 19);
}

TEST_CASE("random_mask_plan: Monte-Carlo per-patch frequency") {
  std::vector<double> hits(128, 0.0);
  for (std::uint64_t t = 0; t < 10000; ++t) {
    auto rng = derive_rng(t, {9});
    auto pos = random_mask_positions(128, 0.15, rng);
    CHECK(pos.size() == 19);
    CHECK(std::set<std::size_t>(pos.begin(), pos.end()).size() == 19);
    for (auto p : pos) hits[p] += 1.0;
  }
  for (double h : hits) CHECK(std::abs(h / 10000.0 - 19.0 / 128.0) < 0.02);
}

TEST_CASE("region_mask_plan: whole-image box matches the random planner") {
  auto g = toy_grid();
  BBox whole{0, 0, 64, 32};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng a(seed), b(seed);
    CHECK(region_mask_plan(g, whole, 0.3, a).positions == random_mask_plan(g, 0.3, b).positions);
  }
}

TEST_CASE("region_mask_plan: candidates by area majority") {
  auto g = toy_grid();
  BBox row1{16, 0, 16, 32};  // exactly patches 2 and 3
  CHECK(region_candidates(g, row1) == std::vector<std::size_t>{2, 3});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto plan = region_mask_plan(g, row1, 0.15, rng);
    REQUIRE(plan.size() == 1);
    CHECK((plan.positions[0] == 2 || plan.positions[0] == 3));
    CHECK(plan.strategy == MaskStrategy::Region);
  }

  BBox single{0, 16, 16, 16};  // patch 1 only
  Rng rng(5);
  auto shortage = region_mask_plan(g, single, 0.4, rng);  // target floor(3.2) = 3
  CHECK(shortage.positions == std::vector<std::size_t>{1});
  CHECK_FALSE(shortage.degenerate);

  BBox sliver{0, 0, 7, 7};  // under half of patch 0
  auto empty = region_mask_plan(g, sliver, 0.4, rng);
  CHECK(empty.empty());
  CHECK(empty.degenerate);

  BBox outside{60, 0, 10, 4};
  CHECK_THROWS_AS(region_mask_plan(g, outside, 0.4, rng), UsageError);
}

TEST_CASE("region_mask_plan: never masks a minority-overlap patch") {
  Rng rng(77);
  auto g = toy_grid();
  for (int t = 0; t < 500; ++t) {
    BBox b;
    b.height = 1 + uniform_index(rng, 64);
    b.width = 1 + uniform_index(rng, 32);
    b.top = uniform_index(rng, 64 - b.height + 1);
    b.left = uniform_index(rng, 32 - b.width + 1);
    auto plan = region_mask_plan(g, b, 0.3, rng);
    for (auto p : plan.positions) {
      CHECK(p < g.count());
      CHECK(patch_overlap_fraction(g, p, b) >= 0.5);
    }
    Rng r1(t), r2(t);
    CHECK(region_mask_plan(g, b, 0.3, r1).positions == region_mask_plan(g, b, 0.3, r2).positions);
  }
}
