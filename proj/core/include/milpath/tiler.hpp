#pragma once

#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "milpath/datamodel.hpp"
#include "milpath/image.hpp"

namespace milpath {

struct TilingConfig {
  int patch_size = 256;
  double white_mean_threshold = 220.0;     // channel mean at or above this is "white"
  double white_fraction_threshold = 0.9;   // white if this fraction is exceeded
  double tissue_saturation_threshold = 0.05;
  int min_nuclei_exclusive = 10;           // keep only if nucleus count > this

  void validate() const;
};

enum class TileReason { kKept, kWhite, kBackground, kLowCellularity };
std::string_view to_string(TileReason reason);

struct TileDecision {
  PatchRef patch;
  TileReason reason = TileReason::kKept;
  int nuclei = -1;  // -1 when the cellularity stage was not reached

  bool kept() const { return reason == TileReason::kKept; }
};

struct TileReport {
  int total_grid = 0;
  int kept = 0;
  int rejected_white = 0;
  int rejected_low_cellularity = 0;
  int rejected_background = 0;
};

struct TileResult {
  std::vector<TileDecision> decisions;  // every grid cell, (y, x) raster order
  TileReport report;
};

/// Pixel is tissue iff its HSV saturation >= tissue_saturation_threshold.
BinaryMask detect_tissue(const RgbImage& image, const TilingConfig& cfg);

/// Non-overlapping grid with stride patch_size; the remainder along each edge
/// is dropped. A cell is emitted iff at least half of its pixels are tissue.
std::vector<PatchRef> grid_patches(int width, int height, const BinaryMask& tissue,
                                   const TilingConfig& cfg);

bool is_white_patch(const RgbImage& patch, const TilingConfig& cfg);

/// Distinct nucleus count > min_nuclei_exclusive.
bool passes_cellularity(const LabelMask& mask, const TilingConfig& cfg);

/// Stand-in nucleus count for patches without a segmentation mask: 8-connected
/// components of hematoxylin-like pixels (B > R, B > G, channel mean < 180).
int estimate_nuclei(const RgbImage& patch);

/// Looks up a segmentation mask for a patch; returning nullopt falls back to
/// estimate_nuclei.
using MaskProvider = std::function<std::optional<LabelMask>(const PatchRef&)>;

/// Full filter chain over one slide image. Every grid cell gets exactly one
/// decision: white first, then background, then cellularity.
TileResult tile_image(const RgbImage& image, const TilingConfig& cfg,
                      const MaskProvider& masks = {});

}  // namespace milpath
