#include "milpath/tiler.hpp"

#include <algorithm>
#include <array>

#include "milpath/error.hpp"

namespace milpath {

void TilingConfig::validate() const {
  require(patch_size > 0, "patch_size must be positive");
  require(white_mean_threshold >= 0.0 && white_mean_threshold <= 255.0,
          "white_mean_threshold must lie in [0, 255]");
  require(white_fraction_threshold >= 0.0 && white_fraction_threshold <= 1.0,
          "white_fraction_threshold must lie in [0, 1]");
  require(tissue_saturation_threshold >= 0.0 && tissue_saturation_threshold <= 1.0,
          "tissue_saturation_threshold must lie in [0, 1]");
  require(min_nuclei_exclusive >= 0, "min_nuclei_exclusive must be non-negative");
}

std::string_view to_string(TileReason reason) {
  switch (reason) {
    case TileReason::kKept: return "kept";
    case TileReason::kWhite: return "white";
    case TileReason::kBackground: return "background";
    case TileReason::kLowCellularity: return "low_cellularity";
  }
  return "unknown";
}

namespace {

double saturation(Rgb c) {
  const int hi = std::max({c.r, c.g, c.b});
  const int lo = std::min({c.r, c.g, c.b});
  return hi == 0 ? 0.0 : static_cast<double>(hi - lo) / hi;
}

bool is_hematoxylin(Rgb c) {
  const int sum = c.r + c.g + c.b;
  return c.b > c.r && c.b > c.g && sum < 3 * 180;
}

}  // namespace

BinaryMask detect_tissue(const RgbImage& image, const TilingConfig& cfg) {
  require(!image.empty(), "tissue detection needs a non-empty image");
  BinaryMask mask{image.width(), image.height(), {}};
  mask.data.resize(static_cast<std::size_t>(image.width()) * image.height());
  std::size_t i = 0;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x, ++i) {
      mask.data[i] = saturation(image.at(x, y)) >= cfg.tissue_saturation_threshold ? 1 : 0;
    }
  }
  return mask;
}

namespace {

std::int64_t tissue_pixels(const BinaryMask& tissue, int x0, int y0, int size) {
  std::int64_t count = 0;
  for (int y = y0; y < y0 + size; ++y) {
    const auto* row = tissue.data.data() + static_cast<std::size_t>(y) * tissue.width;
    count += std::count(row + x0, row + x0 + size, std::uint8_t{1});
  }
  return count;
}

bool mostly_tissue(const BinaryMask& tissue, int x0, int y0, int size) {
  const std::int64_t area = static_cast<std::int64_t>(size) * size;
  return 2 * tissue_pixels(tissue, x0, y0, size) >= area;
}

}  // namespace

std::vector<PatchRef> grid_patches(int width, int height, const BinaryMask& tissue,
                                   const TilingConfig& cfg) {
  cfg.validate();
  require(tissue.width == width && tissue.height == height,
          "tissue mask does not match image extent");
  std::vector<PatchRef> patches;
  const int ps = cfg.patch_size;
  for (int y = 0; y + ps <= height; y += ps) {
    for (int x = 0; x + ps <= width; x += ps) {
      if (mostly_tissue(tissue, x, y, ps)) {
        patches.push_back({static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                           static_cast<std::uint32_t>(ps)});
      }
    }
  }
  return patches;
}

bool is_white_patch(const RgbImage& patch, const TilingConfig& cfg) {
  if (patch.empty()) return true;
  const double threshold_sum = 3.0 * cfg.white_mean_threshold;
  std::int64_t white = 0;
  for (int y = 0; y < patch.height(); ++y) {
    for (int x = 0; x < patch.width(); ++x) {
      const Rgb c = patch.at(x, y);
      if (static_cast<double>(c.r + c.g + c.b) >= threshold_sum) ++white;
    }
  }
  const double fraction =
      static_cast<double>(white) / (static_cast<double>(patch.width()) * patch.height());
  return fraction > cfg.white_fraction_threshold;
}

bool passes_cellularity(const LabelMask& mask, const TilingConfig& cfg) {
  return static_cast<int>(mask.nucleus_ids().size()) > cfg.min_nuclei_exclusive;
}

int estimate_nuclei(const RgbImage& patch) {
  const int w = patch.width();
  const int h = patch.height();
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) fg[static_cast<std::size_t>(y) * w + x] = is_hematoxylin(patch.at(x, y));
  }
  int components = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!fg[static_cast<std::size_t>(y) * w + x]) continue;
      ++components;
      fg[static_cast<std::size_t>(y) * w + x] = 0;
      stack.emplace_back(x, y);
      while (!stack.empty()) {
        const auto [cx, cy] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx;
            const int ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            auto& cell = fg[static_cast<std::size_t>(ny) * w + nx];
            if (cell) {
              cell = 0;
              stack.emplace_back(nx, ny);
            }
          }
        }
      }
    }
  }
  return components;
}

TileResult tile_image(const RgbImage& image, const TilingConfig& cfg, const MaskProvider& masks) {
  cfg.validate();
  const auto tissue = detect_tissue(image, cfg);
  const int ps = cfg.patch_size;
  TileResult result;
  for (int y = 0; y + ps <= image.height(); y += ps) {
    for (int x = 0; x + ps <= image.width(); x += ps) {
      TileDecision d;
      d.patch = {static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                 static_cast<std::uint32_t>(ps)};
      ++result.report.total_grid;
      const RgbImage patch = image.crop(x, y, ps, ps);
      if (is_white_patch(patch, cfg)) {
        d.reason = TileReason::kWhite;
        ++result.report.rejected_white;
      } else if (!mostly_tissue(tissue, x, y, ps)) {
        d.reason = TileReason::kBackground;
        ++result.report.rejected_background;
      } else {
        std::optional<LabelMask> mask;
        if (masks) mask = masks(d.patch);
        if (mask) {
          require(mask->width == ps && mask->height == ps,
                  "label mask for patch (" + std::to_string(x) + "," + std::to_string(y) +
                      ") does not match the patch size");
          d.nuclei = static_cast<int>(mask->nucleus_ids().size());
        } else {
          d.nuclei = estimate_nuclei(patch);
        }
        if (d.nuclei > cfg.min_nuclei_exclusive) {
          ++result.report.kept;
        } else {
          d.reason = TileReason::kLowCellularity;
          ++result.report.rejected_low_cellularity;
        }
      }
      result.decisions.push_back(d);
    }
  }
  return result;
}

}  // namespace milpath
