#include "milpath/morpho.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "milpath/error.hpp"

namespace milpath {

namespace {

// Clockwise in image coordinates (y grows downwards), starting east.
constexpr std::array<std::array<int, 2>, 8> kSteps = {{
    {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1},
}};

}  // namespace

double boundary_walk_length(const LabelMask& mask, std::uint32_t id) {
  int sx = -1;
  int sy = -1;
  for (int y = 0; y < mask.height && sx < 0; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y) == id) {
        sx = x;
        sy = y;
        break;
      }
    }
  }
  if (sx < 0) return 0.0;

  auto inside = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < mask.width && y < mask.height && mask.at(x, y) == id;
  };

  // The start is the first raster pixel, so its west neighbour is outside.
  int cx = sx;
  int cy = sy;
  int back = 4;
  int first_dir = -1;
  double length = 0.0;
  const std::size_t limit = 8 * mask.labels.size() + 8;
  for (std::size_t moves = 0; moves < limit; ++moves) {
    int dir = -1;
    for (int k = 1; k <= 8; ++k) {
      const int d = (back + k) % 8;
      if (inside(cx + kSteps[static_cast<std::size_t>(d)][0],
                 cy + kSteps[static_cast<std::size_t>(d)][1])) {
        dir = d;
        break;
      }
    }
    if (dir < 0) return 0.0;  // isolated pixel
    if (cx == sx && cy == sy) {
      if (first_dir < 0) {
        first_dir = dir;
      } else if (dir == first_dir) {
        return length;  // leaving the start the same way again: closed
      }
    }
    length += (dir % 2 == 0) ? 1.0 : std::numbers::sqrt2;
    cx += kSteps[static_cast<std::size_t>(dir)][0];
    cy += kSteps[static_cast<std::size_t>(dir)][1];
    back = (dir + 4) % 8;
  }
  fail(ErrorKind::kValidation, "boundary trace did not close for nucleus " + std::to_string(id));
}

std::int64_t hull_lattice_count(std::vector<std::array<std::int64_t, 2>> pts) {
  require(!pts.empty(), "convex hull of an empty point set");
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() == 1) return 1;

  auto cross = [](const auto& o, const auto& a, const auto& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  };
  // Andrew's monotone chain; collinear points are dropped from the hull.
  std::vector<std::array<std::int64_t, 2>> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);

  // Pick's theorem: interior + boundary = (2A + B) / 2 + 1.
  std::int64_t twice_area = 0;
  std::int64_t boundary = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    twice_area += a[0] * b[1] - b[0] * a[1];
    boundary += std::gcd(std::abs(b[0] - a[0]), std::abs(b[1] - a[1]));
  }
  return (std::abs(twice_area) + boundary) / 2 + 1;
}

std::vector<NucleusRecord> nucleus_features(const LabelMask& mask, const RgbImage& patch,
                                            std::string_view slide_id, const PatchRef& patch_ref) {
  require(mask.width == patch.width() && mask.height == patch.height(),
          "label mask " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
              " does not match patch " + std::to_string(patch.width()) + "x" +
              std::to_string(patch.height()));

  struct Accum {
    std::int64_t count = 0;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    double red = 0, blue = 0;
    std::vector<std::array<std::int64_t, 2>> points;
  };
  std::map<std::uint32_t, Accum> acc;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const auto id = mask.at(x, y);
      if (id == 0) continue;
      auto& a = acc[id];
      ++a.count;
      a.sx += x;
      a.sy += y;
      a.sxx += static_cast<double>(x) * x;
      a.syy += static_cast<double>(y) * y;
      a.sxy += static_cast<double>(x) * y;
      const Rgb c = patch.at(x, y);
      a.red += c.r;
      a.blue += c.b;
      a.points.push_back({x, y});
    }
  }

  std::vector<NucleusRecord> records;
  records.reserve(acc.size());
  for (auto& [id, a] : acc) {
    NucleusRecord r;
    r.slide_id = std::string(slide_id);
    r.patch = patch_ref;
    r.nucleus_id = id;
    const double n = static_cast<double>(a.count);
    r.area = n;
    r.perimeter = boundary_walk_length(mask, id);
    r.circularity = r.perimeter > 0.0
                        ? std::min(1.0, 4.0 * std::numbers::pi * r.area / (r.perimeter * r.perimeter))
                        : 1.0;

    // Second central moments of the union of unit pixel squares: the point
    // moments plus 1/12 per axis for each pixel's own extent.
    const double mx = a.sx / n;
    const double my = a.sy / n;
    const double cxx = a.sxx / n - mx * mx + 1.0 / 12.0;
    const double cyy = a.syy / n - my * my + 1.0 / 12.0;
    const double cxy = a.sxy / n - mx * my;
    const double half_trace = 0.5 * (cxx + cyy);
    const double radius = std::sqrt(0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy);
    const double major = half_trace + radius;
    const double minor = std::max(half_trace - radius, 1e-300);
    r.aspect_ratio = std::max(1.0, std::sqrt(major / minor));

    r.solidity = r.area / static_cast<double>(hull_lattice_count(std::move(a.points)));
    if (a.blue > 0.0) r.rb_ratio = a.red / a.blue;
    records.push_back(std::move(r));
  }
  return records;
}

PatchAggregate patch_aggregate(const LabelMask& mask, std::span<const NucleusRecord> records) {
  PatchAggregate agg;
  if (!records.empty()) {
    agg.slide_id = records.front().slide_id;
    agg.patch = records.front().patch;
  }
  agg.nucleus_count = static_cast<int>(mask.nucleus_ids().size());
  const auto nucleus_pixels = static_cast<std::int64_t>(
      std::count_if(mask.labels.begin(), mask.labels.end(), [](auto v) { return v != 0; }));
  const auto other = static_cast<std::int64_t>(mask.labels.size()) - nucleus_pixels;
  if (other > 0) agg.nc_ratio = static_cast<double>(nucleus_pixels) / static_cast<double>(other);

  if (!records.empty()) {
    const double n = static_cast<double>(records.size());
    double rb_sum = 0.0;
    int rb_n = 0;
    for (const auto& r : records) {
      agg.mean_area += r.area / n;
      agg.mean_perimeter += r.perimeter / n;
      agg.mean_circularity += r.circularity / n;
      agg.mean_aspect_ratio += r.aspect_ratio / n;
      agg.mean_solidity += r.solidity / n;
      if (r.rb_ratio) {
        rb_sum += *r.rb_ratio;
        ++rb_n;
      }
    }
    if (rb_n > 0) agg.mean_rb_ratio = rb_sum / rb_n;
  }
  return agg;
}

BoxStats box_stats(std::span<const double> values) {
  require(!values.empty(), "box statistics of an empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  BoxStats b;
  b.q1 = quantile(0.25);
  b.median = quantile(0.5);
  b.q3 = quantile(0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr;
  const double hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  for (double x : v) {
    if (x < lo_fence || x > hi_fence) {
      b.outliers.push_back(x);
    } else {
      b.whisker_low = std::min(b.whisker_low, x);
      b.whisker_high = std::max(b.whisker_high, x);
    }
  }
  return b;
}

const FeatureComparison* GroupStats::find(std::string_view feature) const {
  for (const auto& f : features) {
    if (f.feature == feature) return &f;
  }
  return nullptr;
}

namespace {

GroupSummary summarize_group(const std::vector<double>& values) {
  GroupSummary g;
  g.n = static_cast<int>(values.size());
  if (values.empty()) return g;
  const double n = static_cast<double>(values.size());
  g.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - g.mean) * (v - g.mean);
  g.std = std::sqrt(ss / n);
  g.box = box_stats(values);
  return g;
}

FeatureComparison compare_feature(std::string name, std::string unit,
                                  const std::vector<double>& abc, const std::vector<double>& gcb) {
  FeatureComparison f;
  f.feature = std::move(name);
  f.unit = std::move(unit);
  f.abc = summarize_group(abc);
  f.gcb = summarize_group(gcb);
  try {
    f.test = welch_t_test(abc, gcb);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUndefined) throw;
  }
  return f;
}

}  // namespace

GroupStats compare_groups(std::span<const NucleusRecord> abc_nuclei,
                          std::span<const NucleusRecord> gcb_nuclei,
                          std::span<const PatchAggregate> abc_patches,
                          std::span<const PatchAggregate> gcb_patches) {
  require(!abc_nuclei.empty() && !gcb_nuclei.empty(),
          "group comparison needs nuclei from both subtypes");
  GroupStats stats;

  using Getter = double (*)(const NucleusRecord&);
  const std::array<std::pair<const char*, Getter>, 5> geometric = {{
      {"area", [](const NucleusRecord& r) { return r.area; }},
      {"perimeter", [](const NucleusRecord& r) { return r.perimeter; }},
      {"circularity", [](const NucleusRecord& r) { return r.circularity; }},
      {"aspect_ratio", [](const NucleusRecord& r) { return r.aspect_ratio; }},
      {"solidity", [](const NucleusRecord& r) { return r.solidity; }},
  }};
  for (const auto& [name, get] : geometric) {
    std::vector<double> a, g;
    for (const auto& r : abc_nuclei) a.push_back(get(r));
    for (const auto& r : gcb_nuclei) g.push_back(get(r));
    stats.features.push_back(compare_feature(name, "nucleus", a, g));
  }

  std::vector<double> rb_a, rb_g;
  for (const auto& r : abc_nuclei) {
    if (r.rb_ratio) rb_a.push_back(*r.rb_ratio);
    else ++stats.excluded_rb_abc;
  }
  for (const auto& r : gcb_nuclei) {
    if (r.rb_ratio) rb_g.push_back(*r.rb_ratio);
    else ++stats.excluded_rb_gcb;
  }
  stats.features.push_back(compare_feature("rb_ratio", "nucleus", rb_a, rb_g));

  std::vector<double> count_a, count_g, nc_a, nc_g;
  for (const auto& p : abc_patches) {
    count_a.push_back(p.nucleus_count);
    if (p.nc_ratio) nc_a.push_back(*p.nc_ratio);
    else ++stats.excluded_nc_abc;
  }
  for (const auto& p : gcb_patches) {
    count_g.push_back(p.nucleus_count);
    if (p.nc_ratio) nc_g.push_back(*p.nc_ratio);
    else ++stats.excluded_nc_gcb;
  }
  stats.features.push_back(compare_feature("nucleus_count", "patch", count_a, count_g));
  stats.features.push_back(compare_feature("nc_ratio", "patch", nc_a, nc_g));
  return stats;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

nlohmann::ordered_json group_json(const GroupSummary& g) {
  nlohmann::ordered_json j;
  j["n"] = g.n;
  j["mean"] = g.mean;
  j["std"] = g.std;
  if (g.n > 0) {
    j["box"] = {{"q1", g.box.q1},
                {"median", g.box.median},
                {"q3", g.box.q3},
                {"whisker_low", g.box.whisker_low},
                {"whisker_high", g.box.whisker_high},
                {"outliers", g.box.outliers}};
  } else {
    j["box"] = nullptr;
  }
  return j;
}

}  // namespace

std::string nucleus_csv_header() {
  return "slide_id,x,y,nucleus_id,area,perimeter,circularity,aspect_ratio,solidity,rb_ratio\n";
}

std::string nucleus_csv_row(const NucleusRecord& r) {
  return r.slide_id + "," + std::to_string(r.patch.x) + "," + std::to_string(r.patch.y) + "," +
         std::to_string(r.nucleus_id) + "," + fmt(r.area) + "," + fmt(r.perimeter) + "," +
         fmt(r.circularity) + "," + fmt(r.aspect_ratio) + "," + fmt(r.solidity) + "," +
         (r.rb_ratio ? fmt(*r.rb_ratio) : "NA") + "\n";
}

std::string group_stats_json(const GroupStats& stats) {
  nlohmann::ordered_json j;
  auto& features = j["features"] = nlohmann::ordered_json::array();
  for (const auto& f : stats.features) {
    nlohmann::ordered_json fj;
    fj["feature"] = f.feature;
    fj["unit"] = f.unit;
    fj["ABC"] = group_json(f.abc);
    fj["GCB"] = group_json(f.gcb);
    if (f.test) {
      fj["t"] = f.test->t;
      fj["df"] = f.test->df;
      fj["p_value"] = f.test->p;
    } else {
      fj["t"] = nullptr;
      fj["df"] = nullptr;
      fj["p_value"] = nullptr;
    }
    features.push_back(std::move(fj));
  }
  j["excluded"] = {{"rb_ratio_abc", stats.excluded_rb_abc},
                   {"rb_ratio_gcb", stats.excluded_rb_gcb},
                   {"nc_ratio_abc", stats.excluded_nc_abc},
                   {"nc_ratio_gcb", stats.excluded_nc_gcb}};
  return j.dump(2) + "\n";
}

}  // namespace milpath
