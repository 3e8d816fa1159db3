#include "milpath/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "milpath/error.hpp"
#include "milpath/random.hpp"

namespace milpath {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  require(slides >= 2, "need at least two slides");
  require(abc_fraction > 0.0 && abc_fraction < 1.0, "abc_fraction must lie in (0, 1)");
  require(dim >= 1, "embedding dim must be positive");
  require(min_patches >= 1 && min_patches <= max_patches, "need 1 <= min_patches <= max_patches");
  require(grid >= 1 && max_patches <= grid * grid, "max_patches exceeds the grid");
  require(patch_size >= 16, "patch_size must be at least 16");
  require(signal_strength >= 0.0 && std::isfinite(signal_strength),
          "signal_strength must be finite and non-negative");
  require(signal_fraction > 0.0 && signal_fraction <= 1.0, "signal_fraction must lie in (0, 1]");
  require(morpho_patches >= 0, "morpho_patches must be non-negative");
  require(thumbnail_downscale >= 1 && patch_size % thumbnail_downscale == 0,
          "thumbnail_downscale must divide patch_size");
}

Eigen::VectorXd synth_direction(const SynthConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, 0xD1EC));
  Eigen::VectorXd u(cfg.dim);
  for (int i = 0; i < cfg.dim; ++i) u(i) = rng.normal();
  return u / u.norm();
}

std::vector<Subtype> synth_labels(const SynthConfig& cfg) {
  const int n_abc = std::clamp(static_cast<int>(std::lround(cfg.slides * cfg.abc_fraction)), 1,
                               cfg.slides - 1);
  std::vector<Subtype> labels(static_cast<std::size_t>(cfg.slides), Subtype::kGcb);
  std::fill_n(labels.begin(), n_abc, Subtype::kAbc);
  Rng rng(mix_seed(cfg.seed, 0x1ABE));
  rng.shuffle(std::span<Subtype>(labels));
  return labels;
}

namespace {

std::string slide_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%03d", index + 1);
  return buf;
}

}  // namespace

SlideBag synth_bag(const SynthConfig& cfg, int index, Subtype label) {
  Rng rng(mix_seed(cfg.seed, 0xBA6, static_cast<std::uint64_t>(index)));
  SlideBag bag;
  bag.slide_id = slide_name(index);
  bag.label = label;
  const int n = cfg.min_patches +
                static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_patches - cfg.min_patches + 1)));

  std::vector<int> cells(static_cast<std::size_t>(cfg.grid * cfg.grid));
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  rng.shuffle(std::span<int>(cells));
  cells.resize(static_cast<std::size_t>(n));
  std::sort(cells.begin(), cells.end());
  for (int c : cells) {
    bag.patches.push_back({static_cast<std::uint32_t>((c % cfg.grid) * cfg.patch_size),
                           static_cast<std::uint32_t>((c / cfg.grid) * cfg.patch_size),
                           static_cast<std::uint32_t>(cfg.patch_size)});
  }

  bag.embeddings.resize(n, cfg.dim);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < cfg.dim; ++j) bag.embeddings(k, j) = static_cast<float>(rng.normal());
  }
  if (label == Subtype::kGcb && cfg.signal_strength > 0.0) {
    const Eigen::VectorXd u = synth_direction(cfg);
    const int carriers = std::max(1, static_cast<int>(std::lround(n * cfg.signal_fraction)));
    std::vector<int> rows(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) rows[static_cast<std::size_t>(k)] = k;
    rng.shuffle(std::span<int>(rows));
    for (int i = 0; i < carriers; ++i) {
      const int k = rows[static_cast<std::size_t>(i)];
      for (int j = 0; j < cfg.dim; ++j) {
        bag.embeddings(k, j) += static_cast<float>(cfg.signal_strength * u(j));
      }
    }
  }
  return bag;
}

std::vector<SlideBag> synth_bags(const SynthConfig& cfg) {
  cfg.validate();
  const auto labels = synth_labels(cfg);
  std::vector<SlideBag> bags;
  for (int i = 0; i < cfg.slides; ++i) {
    bags.push_back(synth_bag(cfg, i, labels[static_cast<std::size_t>(i)]));
  }
  return bags;
}

namespace {

std::uint8_t jitter(Rng& rng, int base, int spread) {
  const int v = base + static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * spread + 1))) - spread;
  return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
}

}  // namespace

SynthPatch synth_patch(Subtype label, int size, std::uint64_t seed) {
  Rng rng(seed);
  SynthPatch p{RgbImage(size, size), LabelMask(size, size)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      p.image.set(x, y, {jitter(rng, 232, 8), jitter(rng, 178, 8), jitter(rng, 204, 8)});
    }
  }

  const bool abc = label == Subtype::kAbc;
  const double scale = size / 256.0;
  const int target = abc ? 34 + static_cast<int>(rng.below(9)) : 20 + static_cast<int>(rng.below(7));
  const double r_lo = (abc ? 5.0 : 7.0) * scale;
  const double r_hi = (abc ? 7.5 : 10.0) * scale;
  const int red = abc ? 96 : 80;

  std::uint32_t next_id = 1;
  for (int attempt = 0; attempt < 40 * target && static_cast<int>(next_id) <= target; ++attempt) {
    const double a = std::max(1.0, rng.uniform(r_lo, r_hi));
    const double b = std::max(1.0, a * rng.uniform(0.65, 1.0));
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double cx = rng.uniform(a + 1.0, size - a - 1.0);
    const double cy = rng.uniform(a + 1.0, size - a - 1.0);
    const double ct = std::cos(theta);
    const double st = std::sin(theta);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - a - 1.0)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(cx + a + 1.0)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - a - 1.0)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(cy + a + 1.0)));

    std::vector<std::pair<int, int>> pixels;
    bool clash = false;
    for (int y = y0; y <= y1 && !clash; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        const double u = (dx * ct + dy * st) / a;
        const double v = (-dx * st + dy * ct) / b;
        if (u * u + v * v > 1.0) continue;
        // Keep a one-pixel gap so instances never touch.
        for (int ny = std::max(0, y - 1); ny <= std::min(size - 1, y + 1) && !clash; ++ny) {
          for (int nx = std::max(0, x - 1); nx <= std::min(size - 1, x + 1); ++nx) {
            if (p.mask.at(nx, ny) != 0) {
              clash = true;
              break;
            }
          }
        }
        pixels.emplace_back(x, y);
      }
    }
    if (clash || pixels.empty()) continue;
    for (auto [x, y] : pixels) {
      p.mask.set(x, y, next_id);
      p.image.set(x, y, {jitter(rng, red, 12), jitter(rng, 52, 10), jitter(rng, 150, 12)});
    }
    ++next_id;
  }
  return p;
}

RgbImage synth_thumbnail(const SynthConfig& cfg, const SlideBag& bag) {
  const int cell = cfg.patch_size / cfg.thumbnail_downscale;
  RgbImage thumb(cfg.grid * cell, cfg.grid * cell, {246, 244, 246});
  for (std::size_t k = 0; k < bag.patches.size(); ++k) {
    const int x0 = static_cast<int>(bag.patches[k].x) / cfg.thumbnail_downscale;
    const int y0 = static_cast<int>(bag.patches[k].y) / cfg.thumbnail_downscale;
    const std::uint8_t shade = static_cast<std::uint8_t>(170 + (k * 37) % 40);
    for (int y = y0; y < y0 + cell; ++y) {
      for (int x = x0; x < x0 + cell; ++x) thumb.set(x, y, {220, shade, 200});
    }
  }
  return thumb;
}

Manifest write_synth_corpus(const SynthConfig& cfg, const fs::path& out) {
  cfg.validate();
  for (const char* sub : {"bags", "masks", "patches", "thumbnails"}) {
    std::error_code ec;
    fs::create_directories(out / sub, ec);
    if (ec) fail(ErrorKind::kIo, "cannot create " + (out / sub).string() + ": " + ec.message());
  }

  Manifest manifest;
  const auto labels = synth_labels(cfg);
  for (int i = 0; i < cfg.slides; ++i) {
    const Subtype label = labels[static_cast<std::size_t>(i)];
    const SlideBag bag = synth_bag(cfg, i, label);
    ManifestRow row;
    row.slide_id = bag.slide_id;
    row.label = label;
    row.embedding_path = out / "bags" / (bag.slide_id + ".bag");
    row.mask_dir = out / "masks";
    row.thumbnail_path = out / "thumbnails" / (bag.slide_id + ".ppm");
    write_embedding_file(bag, row.embedding_path);
    write_ppm(synth_thumbnail(cfg, bag), *row.thumbnail_path);

    const auto count = std::min<std::size_t>(static_cast<std::size_t>(cfg.morpho_patches), bag.size());
    for (std::size_t k = 0; k < count; ++k) {
      const PatchRef& ref = bag.patches[k];
      const auto patch = synth_patch(
          label, cfg.patch_size, mix_seed(cfg.seed, 0x9A7C + static_cast<std::uint64_t>(i), k));
      const std::string stem = patch_file_stem(bag.slide_id, ref);
      write_label_mask(patch.mask, out / "masks" / (stem + ".pgm"));
      write_ppm(patch.image, out / "patches" / (stem + ".ppm"));
    }
    manifest.rows.push_back(std::move(row));
  }
  write_manifest(manifest, out / "manifest.csv", out);
  return manifest;
}

}  // namespace milpath
