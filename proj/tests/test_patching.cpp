#include <doctest.h>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/random.hpp"
#include "patchguard/patching/patching.hpp"

using namespace patchguard;
using namespace patchguard::patching;

namespace {

ImageTensor random_image(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  ImageTensor img(h, w, c);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

// Identity scorer: patch intensity (first channel) as the score.
std::vector<PatchScore> intensity_scores(const PatchGrid& grid) {
  std::vector<PatchScore> out;
  for (const auto& cell : grid.patches) {
    ScoreMap m(grid.patch_size, grid.patch_size);
    for (std::size_t y = 0; y < grid.patch_size; ++y)
      for (std::size_t x = 0; x < grid.patch_size; ++x) m.at(y, x) = cell.image.at(y, x, 0);
    out.push_back({cell.row, cell.col, std::move(m)});
  }
  return out;
}

}  // namespace

TEST_CASE("patchify grid arithmetic") {
  SUBCASE("3024 x 4032 at 256") {
    ImageTensor img(4032, 3024, 1);
    auto g = patchify(img, 256);
    CHECK(g.rows == 16);
    CHECK(g.cols == 12);
    CHECK(g.patches.size() == 192);
    CHECK(g.pad_right == 48);
    CHECK(g.pad_bottom == 64);
  }
  SUBCASE("exact fit") {
    auto g = patchify(ImageTensor(256, 256, 3), 256);
    CHECK(g.patches.size() == 1);
    CHECK(g.pad_right == 0);
    CHECK(g.pad_bottom == 0);
  }
  SUBCASE("300 x 300") {
    auto g = patchify(ImageTensor(300, 300, 3, 1.0f), 256);
    CHECK(g.rows == 2);
    CHECK(g.cols == 2);
    CHECK(g.pad_right == 212);
    CHECK(g.pad_bottom == 212);
    // Padding is zero.
    CHECK(g.patches[3].image.at(255, 255, 0) == 0.0f);
    CHECK(g.patches[3].image.at(43, 43, 2) == 1.0f);
    CHECK(g.patches[3].image.at(44, 43, 2) == 0.0f);
  }
  CHECK_THROWS_AS(patchify(ImageTensor(8, 8, 1), 8), InvalidConfig);
}

TEST_CASE("patches are row-major and patch-sized") {
  Rng rng(RandomSeed{3});
  auto img = random_image(70, 90, 3, rng);
  auto g = patchify(img, 32);
  REQUIRE(g.patches.size() == 3 * 3);
  for (std::size_t i = 0; i < g.patches.size(); ++i) {
    CHECK(g.patches[i].row == i / 3);
    CHECK(g.patches[i].col == i % 3);
    CHECK(g.patches[i].image.height() == 32);
    CHECK(g.patches[i].image.width() == 32);
  }
  CHECK(g.patches[4].image.at(5, 7, 1) == img.at(32 + 5, 32 + 7, 1));
}

TEST_CASE("stitch examples") {
  SUBCASE("single cell crops the padding") {
    auto g = patchify(ImageTensor(20, 30, 1), 32);
    ScoreMap m(32, 32);
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) m.at(y, x) = static_cast<float>(y * 32 + x);
    auto out = stitch({{0, 0, m}}, g, 20, 30);
    CHECK(out.height() == 20);
    CHECK(out.width() == 30);
    CHECK(out.at(19, 29) == m.at(19, 29));
  }
  SUBCASE("constant quadrants") {
    auto g = patchify(ImageTensor(32, 32, 1), 16);
    std::vector<PatchScore> s;
    for (std::size_t i = 0; i < 4; ++i) s.push_back({i / 2, i % 2, ScoreMap(16, 16, static_cast<float>(i + 1))});
    auto out = stitch(s, g, 32, 32);
    CHECK(out.at(0, 0) == 1.0f);
    CHECK(out.at(0, 31) == 2.0f);
    CHECK(out.at(31, 0) == 3.0f);
    CHECK(out.at(31, 31) == 4.0f);
  }
  SUBCASE("missing and duplicate cells") {
    auto g = patchify(ImageTensor(32, 32, 1), 16);
    std::vector<PatchScore> s{{0, 0, ScoreMap(16, 16)}, {0, 1, ScoreMap(16, 16)}, {1, 0, ScoreMap(16, 16)}};
    CHECK_THROWS_AS(stitch(s, g, 32, 32), DimensionMismatch);
    s.push_back({1, 0, ScoreMap(16, 16)});
    CHECK_THROWS_AS(stitch(s, g, 32, 32), DimensionMismatch);
  }
}

TEST_CASE("patchify/stitch round trip on random sizes") {
  Rng rng(RandomSeed{21});
  for (int trial = 0; trial < 40; ++trial) {
    const auto h = static_cast<std::size_t>(rng.uniform_int(1, 600));
    const auto w = static_cast<std::size_t>(rng.uniform_int(1, 600));
    const std::size_t p = trial % 2 ? 64 : 256;
    auto img = random_image(h, w, 1, rng);
    auto g = patchify(img, p);
    REQUIRE(g.patches.size() == ((h + p - 1) / p) * ((w + p - 1) / p));
    auto out = stitch(intensity_scores(g), g, h, w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) REQUIRE(out.at(y, x) == img.at(y, x, 0));
  }
}

TEST_CASE("threshold_and_remask") {
  StitchConfig cfg;
  ScoreMap m(1, 2);
  m.at(0, 0) = 0.2f;
  m.at(0, 1) = 0.9f;
  CHECK(threshold_and_remask(m, BinaryMask(1, 2, true), cfg) == m);
  cfg.threshold = 0.5f;
  auto out = threshold_and_remask(m, BinaryMask(1, 2, true), cfg);
  CHECK(out.at(0, 0) == 0.0f);
  CHECK(out.at(0, 1) == 0.9f);
  cfg.binarize = true;
  CHECK(threshold_and_remask(m, BinaryMask(1, 2, true), cfg).at(0, 1) == 1.0f);
  cfg.binarize = false;
  const auto blank = threshold_and_remask(m, BinaryMask(1, 2, false), cfg);
  for (float v : blank.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(threshold_and_remask(m, BinaryMask(2, 2, true), cfg), DimensionMismatch);
  cfg.threshold = -1.0f;
  CHECK_THROWS_AS(threshold_and_remask(m, BinaryMask(1, 2, true), cfg), InvalidConfig);
}

TEST_CASE("threshold_and_remask never increases and stays inside the mask") {
  Rng rng(RandomSeed{4});
  for (int trial = 0; trial < 50; ++trial) {
    ScoreMap m(17, 23);
    for (auto& v : m.data()) v = static_cast<float>(rng.uniform(0.0, 2.0));
    BinaryMask mask(17, 23);
    for (auto& v : mask.data()) v = rng.uniform() < 0.5 ? 1 : 0;
    StitchConfig cfg;
    cfg.threshold = static_cast<float>(rng.uniform(0.0, 2.0));
    auto out = threshold_and_remask(m, mask, cfg);
    for (std::size_t i = 0; i < m.pixels(); ++i) {
      REQUIRE(out.data()[i] <= m.data()[i]);
      if (!mask.data()[i]) REQUIRE(out.data()[i] == 0.0f);
    }
  }
}

TEST_CASE("training inputs follow the scoring mode") {
  ImageTensor img(96, 96, 3, 0.5f);
  BinaryMask mask(96, 96);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 20; ++x) mask.set(y, x, true);
  auto whole = training_inputs(img, nullptr, 32, {false, false});
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].height() == 32);
  auto patches = training_inputs(img, &mask, 32, {true, true});
  REQUIRE(patches.size() == 1);  // only the top-left cell holds foreground
  CHECK(patches[0].at(0, 0, 0) == 0.5f);
  CHECK(patches[0].at(25, 25, 0) == 0.0f);
  CHECK(training_inputs(img, nullptr, 32, {false, true}).size() == 9);
  CHECK_THROWS_AS(training_inputs(img, nullptr, 32, {true, true}), InvalidConfig);
}
