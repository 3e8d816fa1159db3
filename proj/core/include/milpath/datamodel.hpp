#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace milpath {

/// Slide-level cell-of-origin class. Integer codes are part of the file
/// formats and must not change.
enum class Subtype : std::uint8_t { kAbc = 0, kGcb = 1 };

inline constexpr int kNumClasses = 2;

constexpr int class_index(Subtype s) { return static_cast<int>(s); }
std::string_view to_string(Subtype s);
/// Case-insensitive "ABC"/"GCB"; throws a validation error otherwise.
Subtype parse_subtype(std::string_view token);

/// Level-0 top-left corner of a square patch.
struct PatchRef {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t size = 256;

  friend bool operator==(const PatchRef&, const PatchRef&) = default;
};

using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One slide: an ordered bag of patch embeddings (row k belongs to patches[k]).
struct SlideBag {
  std::string slide_id;
  std::optional<Subtype> label;
  std::vector<PatchRef> patches;
  EmbeddingMatrix embeddings;

  std::size_t size() const { return patches.size(); }
  int dim() const { return static_cast<int>(embeddings.cols()); }
};

/// Throws a validation error unless N >= 1, N matches the row count, D >= 1
/// and every entry is finite.
void validate(const SlideBag& bag);

// `.bag` layout, little-endian:
//   "MILE" | u32 version | u32 N | u32 D | N × (u32 x, u32 y) | N·D × f32 row-major
inline constexpr std::array<char, 4> kBagMagic = {'M', 'I', 'L', 'E'};
inline constexpr std::uint32_t kBagVersion = 1;
inline constexpr std::size_t kBagHeaderBytes = 16;

std::size_t embedding_file_size(std::size_t n, std::size_t d);

std::vector<std::uint8_t> encode_embedding_file(const SlideBag& bag);
/// The slide id is not stored in the file; `slide_id` is attached as given.
SlideBag decode_embedding_file(std::span<const std::uint8_t> bytes, std::string slide_id = {});

/// Reads a `.bag` file; the slide id defaults to the file stem.
SlideBag read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const SlideBag& bag, const std::filesystem::path& path);

struct ManifestRow {
  std::string slide_id;
  Subtype label = Subtype::kAbc;
  std::filesystem::path embedding_path;
  std::optional<std::filesystem::path> mask_dir;
  std::optional<std::filesystem::path> thumbnail_path;
};

struct Manifest {
  std::vector<ManifestRow> rows;

  /// Counts indexed by class_index().
  std::array<int, kNumClasses> class_counts() const;
  const ManifestRow* find(std::string_view slide_id) const;
};

/// Parses `slide_id,label,embedding_path,mask_dir,thumbnail_path` (LF or
/// CRLF). Relative paths are resolved against `base_dir`.
Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {});
/// Reads a manifest; relative paths resolve against the manifest's directory.
/// With `check_files`, every embedding file must exist and parse.
Manifest read_manifest(const std::filesystem::path& path, bool check_files = false);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path,
                    const std::filesystem::path& relative_to = {});

/// Instance label mask: 0 is background, k >= 1 is nucleus k.
struct LabelMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> labels;

  LabelMask() = default;
  LabelMask(int w, int h) : width(w), height(h), labels(static_cast<std::size_t>(w) * h, 0) {}

  std::uint32_t at(int x, int y) const {
    return labels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
  void set(int x, int y, std::uint32_t v) {
    labels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(x)] = v;
  }

  /// Sorted distinct nonzero IDs.
  std::vector<std::uint32_t> nucleus_ids() const;

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

/// Binary PGM (P5) with maxval 255 or 65535; 16-bit samples are big-endian.
LabelMask read_label_mask(const std::filesystem::path& path);
/// Writes 8-bit when every label fits, 16-bit otherwise.
void write_label_mask(const LabelMask& mask, const std::filesystem::path& path);

/// `<slide_id>_<x>_<y>` naming used for per-patch files.
std::string patch_file_stem(std::string_view slide_id, const PatchRef& patch);
/// Inverse of patch_file_stem; splits on the last two underscores.
std::optional<std::pair<std::string, PatchRef>> parse_patch_file_stem(std::string_view stem);

}  // namespace milpath
