#include <algorithm>

#include "doctest.h"
#include "milpath/tiler.hpp"
#include "support.hpp"

using namespace milpath;

namespace {

double hsv_saturation(Rgb c) {
  const double hi = std::max({c.r, c.g, c.b});
  const double lo = std::min({c.r, c.g, c.b});
  return hi == 0 ? 0.0 : (hi - lo) / hi;
}

LabelMask mask_with_nuclei(int size, int count) {
  LabelMask m(size, size);
  for (int i = 0; i < count; ++i) {
    const int x = 3 * (i % 20);
    const int y = 3 * (i / 20);
    m.set(x, y, static_cast<std::uint32_t>(i + 1));
    m.set(x + 1, y, static_cast<std::uint32_t>(i + 1));
  }
  return m;
}

void draw_blobs(RgbImage& img, int x0, int y0, int count) {
  for (int i = 0; i < count; ++i) {
    const int bx = x0 + 10 + 20 * (i % 10);
    const int by = y0 + 10 + 20 * (i / 10);
    for (int y = by; y < by + 4; ++y) {
      for (int x = bx; x < bx + 4; ++x) img.set(x, y, {60, 40, 140});
    }
  }
}

const Rgb kPink{230, 160, 200};

}  // namespace

TEST_CASE("detect_tissue") {
  const TilingConfig cfg;
  SUBCASE("white image is background") {
    const auto m = detect_tissue(RgbImage(8, 8, {255, 255, 255}), cfg);
    CHECK(std::count(m.data.begin(), m.data.end(), 1) == 0);
  }
  SUBCASE("magenta is tissue") {
    const auto m = detect_tissue(RgbImage(8, 8, {255, 0, 255}), cfg);
    CHECK(std::count(m.data.begin(), m.data.end(), 1) == 64);
  }
  SUBCASE("half white, half pink matches the saturation oracle") {
    RgbImage img(16, 8, {255, 255, 255});
    for (int y = 0; y < 8; ++y) {
      for (int x = 8; x < 16; ++x) img.set(x, y, kPink);
    }
    img.set(0, 0, {250, 248, 252});
    const auto m = detect_tissue(img, cfg);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 16; ++x) {
        CHECK(m.at(x, y) == (hsv_saturation(img.at(x, y)) >= 0.05 ? 1 : 0));
        CHECK(m.at(x, y) == (x >= 8 ? 1 : 0));
      }
    }
  }
  SUBCASE("empty image") {
    CHECK(testing::error_kind([&] { detect_tissue(RgbImage(), cfg); }) == ErrorKind::kValidation);
  }
}

TEST_CASE("grid_patches") {
  const TilingConfig cfg;
  auto full = [](int w, int h, std::uint8_t v) {
    return BinaryMask{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, v)};
  };
  CHECK(grid_patches(1024, 1024, full(1024, 1024, 1), cfg).size() == 16);
  CHECK(grid_patches(1024, 1024, full(1024, 1024, 0), cfg).empty());
  const auto one = grid_patches(300, 300, full(300, 300, 1), cfg);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == PatchRef{0, 0, 256});
  CHECK(grid_patches(200, 300, full(200, 300, 1), cfg).empty());

  SUBCASE("half coverage is enough") {
    auto m = full(512, 256, 0);
    for (int y = 0; y < 128; ++y) {
      for (int x = 0; x < 256; ++x) m.data[static_cast<std::size_t>(y) * 512 + x] = 1;
    }
    for (int y = 0; y < 127; ++y) {
      for (int x = 256; x < 512; ++x) m.data[static_cast<std::size_t>(y) * 512 + x] = 1;
    }
    const auto p = grid_patches(512, 256, m, cfg);
    REQUIRE(p.size() == 1);
    CHECK(p[0].x == 0);
  }
  SUBCASE("grid is a partition inside the image") {
    TilingConfig small;
    small.patch_size = 7;
    const auto p = grid_patches(50, 36, full(50, 36, 1), small);
    CHECK(p.size() == 7 * 5);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(p[i].x + p[i].size <= 50);
      CHECK(p[i].y + p[i].size <= 36);
      CHECK(p[i].x % 7 == 0);
      for (std::size_t j = i + 1; j < p.size(); ++j) {
        const bool disjoint = p[i].x + 7 <= p[j].x || p[j].x + 7 <= p[i].x ||
                              p[i].y + 7 <= p[j].y || p[j].y + 7 <= p[i].y;
        CHECK(disjoint);
      }
    }
  }
}

TEST_CASE("is_white_patch") {
  const TilingConfig cfg;
  CHECK(is_white_patch(RgbImage(256, 256, {255, 255, 255}), cfg));
  CHECK_FALSE(is_white_patch(RgbImage(256, 256, {100, 50, 150}), cfg));

  RgbImage mostly(100, 100, {255, 255, 255});
  for (int i = 0; i < 500; ++i) mostly.set(i % 100, i / 100, {100, 50, 150});
  CHECK(is_white_patch(mostly, cfg));

  RgbImage exactly(10, 10, {255, 255, 255});
  for (int i = 0; i < 10; ++i) exactly.set(i, 0, {0, 0, 0});
  CHECK_FALSE(is_white_patch(exactly, cfg));

  SUBCASE("brightening never turns white into non-white") {
    Rng rng(4);
    TilingConfig small;
    small.patch_size = 16;
    for (int trial = 0; trial < 200; ++trial) {
      RgbImage img(16, 16);
      const int base = static_cast<int>(rng.below(256));
      for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
          auto ch = [&] { return static_cast<std::uint8_t>(std::min(255, base + static_cast<int>(rng.below(60)))); };
          img.set(x, y, {ch(), ch(), ch()});
        }
      }
      const int delta = static_cast<int>(rng.below(40));
      RgbImage brighter = img;
      for (auto& b : brighter.bytes()) b = static_cast<std::uint8_t>(std::min(255, b + delta));
      if (is_white_patch(img, small)) CHECK(is_white_patch(brighter, small));
    }
  }
}

TEST_CASE("passes_cellularity") {
  const TilingConfig cfg;
  CHECK_FALSE(passes_cellularity(mask_with_nuclei(256, 10), cfg));
  CHECK(passes_cellularity(mask_with_nuclei(256, 11), cfg));
  CHECK_FALSE(passes_cellularity(LabelMask(256, 256), cfg));
}

TEST_CASE("estimate_nuclei counts 8-connected hematoxylin blobs") {
  RgbImage img(256, 256, kPink);
  draw_blobs(img, 0, 0, 12);
  CHECK(estimate_nuclei(img) == 12);
  img.set(100, 100, {10, 10, 200});
  img.set(101, 101, {10, 10, 200});
  CHECK(estimate_nuclei(img) == 13);
  img.set(150, 150, {200, 200, 250});
  CHECK(estimate_nuclei(img) == 13);
}

TEST_CASE("tile_image filter chain") {
  const TilingConfig cfg;
  SUBCASE("all white") {
    const auto r = tile_image(RgbImage(1024, 768, {255, 255, 255}), cfg);
    CHECK(r.report.total_grid == 12);
    CHECK(r.report.rejected_white == 12);
    CHECK(r.report.kept == 0);
  }
  SUBCASE("mixed slide") {
    RgbImage img(768, 512, {255, 255, 255});
    for (int y = 0; y < 512; ++y) {
      for (int x = 256; x < 768; ++x) img.set(x, y, kPink);
    }
    for (int y = 256; y < 512; ++y) {
      for (int x = 0; x < 256; ++x) img.set(x, y, {200, 200, 200});
    }
    draw_blobs(img, 256, 0, 15);
    draw_blobs(img, 512, 256, 15);
    const auto r = tile_image(img, cfg);
    CHECK(r.report.total_grid == 6);
    CHECK(r.report.rejected_white == 1);
    CHECK(r.report.rejected_background == 1);
    CHECK(r.report.kept == 2);
    CHECK(r.report.rejected_low_cellularity == 2);
    CHECK(r.decisions[1].kept());
    CHECK(r.decisions[1].nuclei == 15);

    const MaskProvider masks = [](const PatchRef& p) -> std::optional<LabelMask> {
      if (p.x == 512 && p.y == 0) return mask_with_nuclei(256, 20);
      return std::nullopt;
    };
    const auto with_masks = tile_image(img, cfg, masks);
    CHECK(with_masks.report.kept == 3);
    CHECK(with_masks.decisions[2].nuclei == 20);
  }
  SUBCASE("counts are conserved on random images") {
    Rng rng(8);
    TilingConfig small;
    small.patch_size = 32;
    small.min_nuclei_exclusive = 1;
    for (int trial = 0; trial < 30; ++trial) {
      RgbImage img(96 + static_cast<int>(rng.below(64)), 64 + static_cast<int>(rng.below(64)));
      for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng.below(2) ? 255 : rng.below(256));
      const auto r = tile_image(img, small);
      const auto& t = r.report;
      CHECK(t.kept + t.rejected_white + t.rejected_background + t.rejected_low_cellularity == t.total_grid);
      CHECK(t.total_grid == (img.width() / 32) * (img.height() / 32));
      CHECK(static_cast<int>(r.decisions.size()) == t.total_grid);
    }
  }
}

TEST_CASE("tiling config validation") {
  TilingConfig cfg;
  cfg.patch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.white_fraction_threshold = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
