#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "milpath/datamodel.hpp"
#include "milpath/image.hpp"

namespace milpath {

struct AttentionEntry {
  PatchRef patch;
  std::array<double, kNumClasses> attention{};  // a_{k,m} per branch
  double normalized = 0.5;                      // of the selected branch
};

struct AttentionMap {
  std::string slide_id;
  int branch = 0;
  std::vector<AttentionEntry> entries;
};

/// Min-max scaling of column `branch`; a constant column maps to 0.5.
std::vector<double> normalize_attention(const Eigen::MatrixXd& attention, int branch);

/// `attention` is N × classes, row k belonging to patches[k].
AttentionMap make_attention_map(std::string slide_id, const std::vector<PatchRef>& patches,
                                const Eigen::MatrixXd& attention, int branch);

/// Blue (score 0) to red (score 1), rounded to the nearest integer.
Rgb attention_color(double normalized);

/// Blends each patch footprint (patch / downscale, rounded outwards) with its
/// attention color at alpha 0.5. Pixels outside every footprint are copied.
RgbImage render_heatmap(const AttentionMap& map, const RgbImage& thumbnail, int downscale);

/// Highest normalized scores first, ties by (y, x) ascending.
std::vector<AttentionEntry> top_k_patches(const AttentionMap& map, int k = 10);

std::string heatmap_file_name(const std::string& slide_id, Subtype cls);
/// `rank,x,y,size,attention,normalized`
std::string top_k_csv(const std::vector<AttentionEntry>& entries, int branch);

}  // namespace milpath
