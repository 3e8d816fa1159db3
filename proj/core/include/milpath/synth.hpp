#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "milpath/datamodel.hpp"
#include "milpath/image.hpp"

namespace milpath {

struct SynthConfig {
  std::uint64_t seed = 0;
  int slides = 60;
  double abc_fraction = 0.5;
  int dim = 64;
  int min_patches = 16;
  int max_patches = 48;
  int grid = 8;                 // slides are grid × grid patch cells
  int patch_size = 256;
  double signal_strength = 3.0;  // shift along the planted direction, in noise std units
  double signal_fraction = 0.25; // share of GCB patches carrying the signal
  int morpho_patches = 2;       // patches per slide with image + mask files
  int thumbnail_downscale = 32;

  void validate() const;
};

/// Planted unit direction shared by every bag of a corpus.
Eigen::VectorXd synth_direction(const SynthConfig& cfg);

/// Labels for all slides: round(slides · abc_fraction) ABC, shuffled.
std::vector<Subtype> synth_labels(const SynthConfig& cfg);

/// Standard normal embeddings; GCB bags add signal_strength · u to a seeded
/// signal_fraction of their patches (at least one).
SlideBag synth_bag(const SynthConfig& cfg, int index, Subtype label);
std::vector<SlideBag> synth_bags(const SynthConfig& cfg);

struct SynthPatch {
  RgbImage image;
  LabelMask mask;
};

/// Pink background with non-overlapping elliptical nuclei. ABC patches carry
/// more, smaller and redder nuclei than GCB patches.
SynthPatch synth_patch(Subtype label, int size, std::uint64_t seed);

/// Thumbnail at 1/downscale with tissue drawn under each patch cell.
RgbImage synth_thumbnail(const SynthConfig& cfg, const SlideBag& bag);

/// Writes manifest.csv, bags/, masks/, patches/ and thumbnails/ under `out`.
Manifest write_synth_corpus(const SynthConfig& cfg, const std::filesystem::path& out);

}  // namespace milpath
