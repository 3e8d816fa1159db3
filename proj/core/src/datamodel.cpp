#include "milpath/datamodel.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "milpath/error.hpp"
#include "milpath/image.hpp"

namespace milpath {

std::string_view to_string(Subtype s) {
  return s == Subtype::kAbc ? "ABC" : "GCB";
}

Subtype parse_subtype(std::string_view token) {
  std::string upper(token);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "ABC") return Subtype::kAbc;
  if (upper == "GCB") return Subtype::kGcb;
  fail(ErrorKind::kValidation, "unknown subtype label '" + std::string(token) + "'");
}

void validate(const SlideBag& bag) {
  require(!bag.patches.empty(), "bag '" + bag.slide_id + "' is empty");
  require(static_cast<std::size_t>(bag.embeddings.rows()) == bag.patches.size(),
          "bag '" + bag.slide_id + "': embedding rows do not match patch count");
  require(bag.embeddings.cols() >= 1, "bag '" + bag.slide_id + "': embedding dim is zero");
  require(bag.embeddings.allFinite(), "bag '" + bag.slide_id + "' has non-finite embeddings");
}

std::size_t embedding_file_size(std::size_t n, std::size_t d) {
  return kBagHeaderBytes + n * 8 + n * d * 4;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_embedding_file(const SlideBag& bag) {
  validate(bag);
  const auto n = bag.patches.size();
  const auto d = static_cast<std::size_t>(bag.dim());
  std::vector<std::uint8_t> out;
  out.reserve(embedding_file_size(n, d));
  out.insert(out.end(), kBagMagic.begin(), kBagMagic.end());
  put_u32(out, kBagVersion);
  put_u32(out, static_cast<std::uint32_t>(n));
  put_u32(out, static_cast<std::uint32_t>(d));
  for (const auto& p : bag.patches) {
    put_u32(out, p.x);
    put_u32(out, p.y);
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < d; ++j) {
      put_u32(out, std::bit_cast<std::uint32_t>(bag.embeddings(static_cast<Eigen::Index>(k),
                                                               static_cast<Eigen::Index>(j))));
    }
  }
  return out;
}

SlideBag decode_embedding_file(std::span<const std::uint8_t> bytes, std::string slide_id) {
  if (bytes.size() < kBagHeaderBytes ||
      !std::equal(kBagMagic.begin(), kBagMagic.end(), bytes.begin())) {
    fail(ErrorKind::kFormat, "not an embedding bag (bad magic)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kBagVersion) {
    fail(ErrorKind::kFormat, "unsupported bag version " + std::to_string(version));
  }
  const std::size_t n = get_u32(bytes, 8);
  const std::size_t d = get_u32(bytes, 12);
  if (n == 0) fail(ErrorKind::kValidation, "embedding bag declares zero patches");
  if (d == 0) fail(ErrorKind::kFormat, "embedding bag declares zero dimensions");
  const std::size_t expected = embedding_file_size(n, d);
  if (bytes.size() < expected) {
    fail(ErrorKind::kCorruption, "truncated bag: header declares N=" + std::to_string(n) +
                                     ", D=" + std::to_string(d) + " (" +
                                     std::to_string(expected) + " bytes) but file has " +
                                     std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    fail(ErrorKind::kCorruption, "trailing bytes after bag payload");
  }

  SlideBag bag;
  bag.slide_id = std::move(slide_id);
  bag.patches.resize(n);
  std::size_t offset = kBagHeaderBytes;
  for (auto& p : bag.patches) {
    p.x = get_u32(bytes, offset);
    p.y = get_u32(bytes, offset + 4);
    offset += 8;
  }
  bag.embeddings.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  float* dst = bag.embeddings.data();
  for (std::size_t i = 0; i < n * d; ++i, offset += 4) {
    dst[i] = std::bit_cast<float>(get_u32(bytes, offset));
  }
  if (!bag.embeddings.allFinite()) {
    fail(ErrorKind::kCorruption, "bag contains non-finite embedding values");
  }
  return bag;
}

SlideBag read_embedding_file(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  try {
    return decode_embedding_file(bytes, path.stem().string());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_embedding_file(const SlideBag& bag, const std::filesystem::path& path) {
  dump(encode_embedding_file(bag), path);
}

// ---------------------------------------------------------------------------
// Manifest

std::array<int, kNumClasses> Manifest::class_counts() const {
  std::array<int, kNumClasses> counts{};
  for (const auto& row : rows) ++counts[static_cast<std::size_t>(class_index(row.label))];
  return counts;
}

const ManifestRow* Manifest::find(std::string_view slide_id) const {
  for (const auto& row : rows) {
    if (row.slide_id == slide_id) return &row;
  }
  return nullptr;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      return fields;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::filesystem::path resolve(const std::filesystem::path& base, std::string_view p) {
  std::filesystem::path path{std::string(p)};
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

}  // namespace

Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  constexpr std::string_view kHeader = "slide_id,label,embedding_path,mask_dir,thumbnail_path";
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);

  Manifest manifest;
  std::set<std::string, std::less<>> seen;
  bool header_seen = false;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;

    if (!header_seen) {
      require(trim(line) == kHeader,
              "manifest header must be '" + std::string(kHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto fields = split_csv_line(line);
    require(fields.size() == 5, "manifest line " + std::to_string(line_no) +
                                    ": expected 5 fields, got " + std::to_string(fields.size()));
    ManifestRow row;
    row.slide_id = std::string(trim(fields[0]));
    require(!row.slide_id.empty(), "manifest line " + std::to_string(line_no) + ": empty slide_id");
    require(seen.insert(row.slide_id).second, "duplicate slide_id '" + row.slide_id + "'");
    row.label = parse_subtype(trim(fields[1]));
    const auto emb = trim(fields[2]);
    require(!emb.empty(), "manifest line " + std::to_string(line_no) + ": empty embedding_path");
    row.embedding_path = resolve(base_dir, emb);
    if (const auto m = trim(fields[3]); !m.empty()) row.mask_dir = resolve(base_dir, m);
    if (const auto t = trim(fields[4]); !t.empty()) row.thumbnail_path = resolve(base_dir, t);
    manifest.rows.push_back(std::move(row));
  }
  require(header_seen, "manifest is empty");
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& path, bool check_files) {
  const auto bytes = slurp(path);
  const std::string text(bytes.begin(), bytes.end());
  auto manifest = parse_manifest(text, path.parent_path());
  if (check_files) {
    for (const auto& row : manifest.rows) {
      if (!std::filesystem::exists(row.embedding_path)) {
        fail(ErrorKind::kIo, "embedding file for '" + row.slide_id +
                                 "' not found: " + row.embedding_path.string());
      }
      (void)read_embedding_file(row.embedding_path);
    }
  }
  return manifest;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path,
                    const std::filesystem::path& relative_to) {
  auto rel = [&](const std::filesystem::path& p) {
    if (relative_to.empty()) return p.generic_string();
    return p.lexically_relative(relative_to).generic_string();
  };
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "slide_id,label,embedding_path,mask_dir,thumbnail_path\n";
  for (const auto& row : manifest.rows) {
    out << row.slide_id << ',' << to_string(row.label) << ',' << rel(row.embedding_path) << ','
        << (row.mask_dir ? rel(*row.mask_dir) : "") << ','
        << (row.thumbnail_path ? rel(*row.thumbnail_path) : "") << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Label masks

std::vector<std::uint32_t> LabelMask::nucleus_ids() const {
  std::vector<std::uint32_t> ids;
  for (auto v : labels) {
    if (v != 0) ids.push_back(v);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

LabelMask read_label_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  const auto header = detail::read_netpbm_header(in, path);
  if (header.magic != "P5") fail(ErrorKind::kFormat, path.string() + ": not a binary PGM (P5)");
  if (header.maxval != 255 && header.maxval != 65535) {
    fail(ErrorKind::kFormat, path.string() + ": unsupported PGM depth, maxval " +
                                 std::to_string(header.maxval));
  }
  LabelMask mask(header.width, header.height);
  const std::size_t bytes_per_sample = header.maxval == 255 ? 1 : 2;
  std::vector<std::uint8_t> raw(mask.labels.size() * bytes_per_sample);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    fail(ErrorKind::kCorruption, path.string() + ": truncated PGM payload");
  }
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    mask.labels[i] = bytes_per_sample == 1
                         ? raw[i]
                         : (static_cast<std::uint32_t>(raw[2 * i]) << 8) | raw[2 * i + 1];
  }
  return mask;
}

void write_label_mask(const LabelMask& mask, const std::filesystem::path& path) {
  require(mask.width > 0 && mask.height > 0, "label mask must be non-empty");
  require(mask.labels.size() == static_cast<std::size_t>(mask.width) * mask.height,
          "label mask size mismatch");
  const std::uint32_t max_label =
      mask.labels.empty() ? 0 : *std::max_element(mask.labels.begin(), mask.labels.end());
  require(max_label <= 65535, "label " + std::to_string(max_label) + " exceeds 16-bit PGM range");
  const bool wide = max_label > 255;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "P5\n" << mask.width << ' ' << mask.height << '\n' << (wide ? 65535 : 255) << '\n';
  std::vector<std::uint8_t> raw;
  raw.reserve(mask.labels.size() * (wide ? 2 : 1));
  for (auto v : mask.labels) {
    if (wide) raw.push_back(static_cast<std::uint8_t>(v >> 8));
    raw.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

std::string patch_file_stem(std::string_view slide_id, const PatchRef& patch) {
  return std::string(slide_id) + "_" + std::to_string(patch.x) + "_" + std::to_string(patch.y);
}

std::optional<std::pair<std::string, PatchRef>> parse_patch_file_stem(std::string_view stem) {
  const auto last = stem.rfind('_');
  if (last == std::string_view::npos || last == 0) return std::nullopt;
  const auto prev = stem.rfind('_', last - 1);
  if (prev == std::string_view::npos || prev == 0) return std::nullopt;
  auto parse = [](std::string_view s) -> std::optional<std::uint32_t> {
    if (s.empty() || s.size() > 10) return std::nullopt;
    std::uint64_t v = 0;
    for (char c : s) {
      if (c < '0' || c > '9') return std::nullopt;
      v = v * 10 + static_cast<std::uint64_t>(c - '0');
    }
    if (v > UINT32_MAX) return std::nullopt;
    return static_cast<std::uint32_t>(v);
  };
  const auto x = parse(stem.substr(prev + 1, last - prev - 1));
  const auto y = parse(stem.substr(last + 1));
  if (!x || !y) return std::nullopt;
  PatchRef ref;
  ref.x = *x;
  ref.y = *y;
  return std::make_pair(std::string(stem.substr(0, prev)), ref);
}

}  // namespace milpath
