#include "milpath/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "milpath/error.hpp"

namespace milpath {

std::vector<double> normalize_attention(const Eigen::MatrixXd& attention, int branch) {
  require(attention.rows() >= 1, "attention map needs at least one patch");
  require(branch >= 0 && branch < attention.cols(), "attention branch out of range");
  const auto col = attention.col(branch);
  const double lo = col.minCoeff();
  const double hi = col.maxCoeff();
  std::vector<double> out(static_cast<std::size_t>(col.size()), 0.5);
  if (hi > lo) {
    for (Eigen::Index k = 0; k < col.size(); ++k) {
      out[static_cast<std::size_t>(k)] = (col(k) - lo) / (hi - lo);
    }
  }
  return out;
}

AttentionMap make_attention_map(std::string slide_id, const std::vector<PatchRef>& patches,
                                const Eigen::MatrixXd& attention, int branch) {
  require(static_cast<Eigen::Index>(patches.size()) == attention.rows(),
          "attention rows do not match patch count");
  require(attention.cols() == kNumClasses, "attention must have one column per class");
  AttentionMap map;
  map.slide_id = std::move(slide_id);
  map.branch = branch;
  const auto norm = normalize_attention(attention, branch);
  for (std::size_t k = 0; k < patches.size(); ++k) {
    AttentionEntry e;
    e.patch = patches[k];
    for (int m = 0; m < kNumClasses; ++m) {
      e.attention[static_cast<std::size_t>(m)] = attention(static_cast<Eigen::Index>(k), m);
    }
    e.normalized = norm[k];
    map.entries.push_back(e);
  }
  return map;
}

Rgb attention_color(double normalized) {
  const double s = std::clamp(normalized, 0.0, 1.0);
  return {static_cast<std::uint8_t>(std::lround(255.0 * s)), 0,
          static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - s)))};
}

RgbImage render_heatmap(const AttentionMap& map, const RgbImage& thumbnail, int downscale) {
  require(downscale >= 1, "downscale must be positive");
  require(!thumbnail.empty(), "empty thumbnail");
  RgbImage out = thumbnail;
  auto blend = [](std::uint8_t a, std::uint8_t b) {
    return static_cast<std::uint8_t>(std::lround(0.5 * a + 0.5 * b));
  };
  for (const auto& e : map.entries) {
    const auto x0 = static_cast<std::int64_t>(e.patch.x) / downscale;
    const auto y0 = static_cast<std::int64_t>(e.patch.y) / downscale;
    const auto x1 = (static_cast<std::int64_t>(e.patch.x) + e.patch.size + downscale - 1) / downscale;
    const auto y1 = (static_cast<std::int64_t>(e.patch.y) + e.patch.size + downscale - 1) / downscale;
    if (x1 > thumbnail.width() || y1 > thumbnail.height()) {
      fail(ErrorKind::kValidation,
           "patch (" + std::to_string(e.patch.x) + "," + std::to_string(e.patch.y) +
               ") lies outside the " + std::to_string(thumbnail.width()) + "x" +
               std::to_string(thumbnail.height()) + " thumbnail at downscale " +
               std::to_string(downscale));
    }
    const Rgb c = attention_color(e.normalized);
    for (auto y = y0; y < y1; ++y) {
      for (auto x = x0; x < x1; ++x) {
        const Rgb p = thumbnail.at(static_cast<int>(x), static_cast<int>(y));
        out.set(static_cast<int>(x), static_cast<int>(y),
                {blend(p.r, c.r), blend(p.g, c.g), blend(p.b, c.b)});
      }
    }
  }
  return out;
}

std::vector<AttentionEntry> top_k_patches(const AttentionMap& map, int k) {
  require(k >= 1, "k must be at least 1");
  std::vector<AttentionEntry> v = map.entries;
  std::stable_sort(v.begin(), v.end(), [](const AttentionEntry& a, const AttentionEntry& b) {
    if (a.normalized != b.normalized) return a.normalized > b.normalized;
    if (a.patch.y != b.patch.y) return a.patch.y < b.patch.y;
    return a.patch.x < b.patch.x;
  });
  if (v.size() > static_cast<std::size_t>(k)) v.resize(static_cast<std::size_t>(k));
  return v;
}

std::string heatmap_file_name(const std::string& slide_id, Subtype cls) {
  return slide_id + "_heatmap_" + std::string(to_string(cls)) + ".ppm";
}

std::string top_k_csv(const std::vector<AttentionEntry>& entries, int branch) {
  std::string out = "rank,x,y,size,attention,normalized\n";
  char buf[64];
  int rank = 1;
  for (const auto& e : entries) {
    out += std::to_string(rank++) + "," + std::to_string(e.patch.x) + "," +
           std::to_string(e.patch.y) + "," + std::to_string(e.patch.size) + ",";
    std::snprintf(buf, sizeof buf, "%.10g,%.10g\n", e.attention[static_cast<std::size_t>(branch)],
                  e.normalized);
    out += buf;
  }
  return out;
}

}  // namespace milpath
