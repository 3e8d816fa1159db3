#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "milpath/datamodel.hpp"
#include "support.hpp"

using namespace milpath;
using testing::error_kind;

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> bag_header(std::uint32_t version, std::uint32_t n, std::uint32_t d) {
  std::vector<std::uint8_t> b = {'M', 'I', 'L', 'E'};
  put_u32(b, version);
  put_u32(b, n);
  put_u32(b, d);
  return b;
}

void put_f32(std::vector<std::uint8_t>& b, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(b, u);
}

bool same_bag(const SlideBag& a, const SlideBag& b) {
  if (a.patches != b.patches || a.embeddings.rows() != b.embeddings.rows() ||
      a.embeddings.cols() != b.embeddings.cols()) {
    return false;
  }
  return std::memcmp(a.embeddings.data(), b.embeddings.data(),
                     sizeof(float) * static_cast<std::size_t>(a.embeddings.size())) == 0;
}

}  // namespace

TEST_CASE("single-record bag file decodes to one patch") {
  auto bytes = bag_header(1, 1, 4);
  put_u32(bytes, 0);
  put_u32(bytes, 0);
  for (float f : {1.f, 2.f, 3.f, 4.f}) put_f32(bytes, f);
  const SlideBag bag = decode_embedding_file(bytes, "S1");
  CHECK(bag.size() == 1);
  CHECK(bag.dim() == 4);
  CHECK(bag.patches[0].x == 0);
  CHECK(bag.patches[0].y == 0);
  for (int j = 0; j < 4; ++j) CHECK(bag.embeddings(0, j) == static_cast<float>(j + 1));
}

TEST_CASE("bag write/read round trip is bit exact") {
  testing::TempDir dir("bag");
  Rng rng(7);
  SlideBag bag = testing::random_bag(rng, 5, 3, "S9");
  bag.embeddings(0, 0) = std::numeric_limits<float>::denorm_min();
  bag.embeddings(1, 1) = -0.0f;
  write_embedding_file(bag, dir / "S9.bag");
  const SlideBag back = read_embedding_file(dir / "S9.bag");
  CHECK(back.slide_id == "S9");
  CHECK(same_bag(bag, back));
  CHECK(std::signbit(back.embeddings(1, 1)));
}

TEST_CASE("two writes of the same bag are byte identical") {
  testing::TempDir dir("bag");
  Rng rng(3);
  const SlideBag bag = testing::random_bag(rng, 4, 6);
  write_embedding_file(bag, dir / "a.bag");
  write_embedding_file(bag, dir / "b.bag");
  CHECK(testing::read_bytes(dir / "a.bag") == testing::read_bytes(dir / "b.bag"));
}

TEST_CASE("bag file size follows the layout") {
  CHECK(embedding_file_size(3, 2) == 64);
  Rng rng(1);
  CHECK(encode_embedding_file(testing::random_bag(rng, 3, 2)).size() == 64);
}

TEST_CASE("truncated payload is corruption") {
  auto bytes = bag_header(1, 5, 2);
  for (int k = 0; k < 4; ++k) {
    put_u32(bytes, 0);
    put_u32(bytes, 256u * static_cast<std::uint32_t>(k));
  }
  for (int i = 0; i < 8; ++i) put_f32(bytes, 0.5f);
  CHECK(error_kind([&] { decode_embedding_file(bytes); }) == ErrorKind::kCorruption);
}

TEST_CASE("bag header errors") {
  auto bytes = bag_header(1, 1, 1);
  put_u32(bytes, 0);
  put_u32(bytes, 0);
  put_f32(bytes, 1.f);
  CHECK_NOTHROW(decode_embedding_file(bytes));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(error_kind([&] { decode_embedding_file(bad_magic); }) == ErrorKind::kFormat);

  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK(error_kind([&] { decode_embedding_file(bad_version); }) == ErrorKind::kFormat);

  const auto empty = bag_header(1, 0, 4);
  CHECK(error_kind([&] { decode_embedding_file(empty); }) == ErrorKind::kValidation);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(error_kind([&] { decode_embedding_file(trailing); }) == ErrorKind::kCorruption);

  auto nan = bag_header(1, 1, 1);
  put_u32(nan, 0);
  put_u32(nan, 0);
  put_f32(nan, std::numeric_limits<float>::quiet_NaN());
  CHECK(error_kind([&] { decode_embedding_file(nan); }) == ErrorKind::kCorruption);

  CHECK(error_kind([&] { decode_embedding_file(std::vector<std::uint8_t>{'M', 'I'}); }) ==
        ErrorKind::kFormat);
}

TEST_CASE("writing a bag with a NaN is a validation error") {
  testing::TempDir dir("bag");
  Rng rng(2);
  SlideBag bag = testing::random_bag(rng, 2, 2);
  bag.embeddings(1, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK(error_kind([&] { write_embedding_file(bag, dir / "x.bag"); }) == ErrorKind::kValidation);
  CHECK_FALSE(std::filesystem::exists(dir / "x.bag"));
}

TEST_CASE("unwritable bag path is an I/O error") {
  Rng rng(2);
  const SlideBag bag = testing::random_bag(rng, 2, 2);
  CHECK(error_kind([&] { write_embedding_file(bag, "/nonexistent-dir/x.bag"); }) == ErrorKind::kIo);
  CHECK(error_kind([&] { read_embedding_file("/nonexistent-dir/x.bag"); }) == ErrorKind::kIo);
}

TEST_CASE("random bags round trip") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const int n = 1 + static_cast<int>(rng.below(20));
    const int d = 1 + static_cast<int>(rng.below(12));
    const SlideBag bag = testing::random_bag(rng, n, d);
    const auto bytes = encode_embedding_file(bag);
    REQUIRE(bytes.size() == embedding_file_size(static_cast<std::size_t>(n), static_cast<std::size_t>(d)));
    const SlideBag back = decode_embedding_file(bytes);
    REQUIRE(same_bag(bag, back));
    REQUIRE(back.embeddings.allFinite());
    REQUIRE(encode_embedding_file(back) == bytes);
  }
}

TEST_CASE("label masks") {
  testing::TempDir dir("mask");

  SUBCASE("2x2 mask with one nucleus") {
    std::ofstream(dir / "m.pgm", std::ios::binary) << "P5\n2 2\n255\n" << std::string("\0\0\1\1", 4);
    const LabelMask m = read_label_mask(dir / "m.pgm");
    CHECK(m.nucleus_ids() == std::vector<std::uint32_t>{1});
    CHECK(std::count(m.labels.begin(), m.labels.end(), 1u) == 2);
  }
  SUBCASE("all-zero mask has no nuclei") {
    std::ofstream(dir / "z.pgm", std::ios::binary) << "P5 3 1 255\n" << std::string(3, '\0');
    CHECK(read_label_mask(dir / "z.pgm").nucleus_ids().empty());
  }
  SUBCASE("16-bit samples are big-endian") {
    std::ofstream(dir / "w.pgm", std::ios::binary)
        << "P5\n# comment\n2 1\n65535\n" << std::string("\x01\x2c\x00\x07", 4);
    const LabelMask m = read_label_mask(dir / "w.pgm");
    CHECK(m.at(0, 0) == 300);
    CHECK(m.at(1, 0) == 7);
  }
  SUBCASE("wrong magic and depth") {
    std::ofstream(dir / "p2.pgm", std::ios::binary) << "P2\n1 1\n255\n0\n";
    CHECK(error_kind([&] { read_label_mask(dir / "p2.pgm"); }) == ErrorKind::kFormat);
    std::ofstream(dir / "d.pgm", std::ios::binary) << "P5\n1 1\n1023\n" << std::string(2, '\0');
    CHECK(error_kind([&] { read_label_mask(dir / "d.pgm"); }) == ErrorKind::kFormat);
    std::ofstream(dir / "t.pgm", std::ios::binary) << "P5\n4 4\n255\n" << std::string(3, '\0');
    CHECK(error_kind([&] { read_label_mask(dir / "t.pgm"); }) == ErrorKind::kCorruption);
  }
  SUBCASE("random masks round trip with deterministic bytes") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
      LabelMask m(1 + static_cast<int>(rng.below(17)), 1 + static_cast<int>(rng.below(17)));
      const std::uint32_t top = i % 2 == 0 ? 255 : 65535;
      for (auto& v : m.labels) v = static_cast<std::uint32_t>(rng.below(top + 1));
      write_label_mask(m, dir / "r.pgm");
      const auto first = testing::read_bytes(dir / "r.pgm");
      REQUIRE(read_label_mask(dir / "r.pgm") == m);
      write_label_mask(m, dir / "r.pgm");
      REQUIRE(testing::read_bytes(dir / "r.pgm") == first);
    }
  }
}

TEST_CASE("manifest parsing") {
  const std::string header = "slide_id,label,embedding_path,mask_dir,thumbnail_path\n";

  SUBCASE("minimal row") {
    const Manifest m = parse_manifest(header + "S1,ABC,s1.bag,,\n");
    REQUIRE(m.rows.size() == 1);
    CHECK(m.rows[0].slide_id == "S1");
    CHECK(m.rows[0].label == Subtype::kAbc);
    CHECK(m.rows[0].embedding_path == "s1.bag");
    CHECK_FALSE(m.rows[0].mask_dir);
    CHECK_FALSE(m.rows[0].thumbnail_path);
  }
  SUBCASE("labels are case-insensitive, CRLF accepted, paths resolved") {
    const Manifest m = parse_manifest(
        "slide_id,label,embedding_path,mask_dir,thumbnail_path\r\nS1,gcb,b/s1.bag,masks,t.ppm\r\n",
        "/data");
    CHECK(m.rows[0].label == Subtype::kGcb);
    CHECK(m.rows[0].embedding_path == std::filesystem::path("/data/b/s1.bag"));
    CHECK(*m.rows[0].mask_dir == std::filesystem::path("/data/masks"));
  }
  SUBCASE("duplicate slide ids") {
    CHECK(error_kind([&] { parse_manifest(header + "S1,ABC,a.bag,,\nS1,GCB,b.bag,,\n"); }) ==
          ErrorKind::kValidation);
  }
  SUBCASE("unknown label") {
    CHECK(error_kind([&] { parse_manifest(header + "S1,XYZ,a.bag,,\n"); }) == ErrorKind::kValidation);
  }
  SUBCASE("wrong header") {
    CHECK(error_kind([&] { parse_manifest("id,label\nS1,ABC\n"); }) == ErrorKind::kValidation);
  }
  SUBCASE("class counts over 115 slides") {
    std::string text = header;
    for (int i = 0; i < 115; ++i) {
      text += "S" + std::to_string(i) + "," + (i < 62 ? "ABC" : "GCB") + ",s.bag,,\n";
    }
    const Manifest m = parse_manifest(text);
    CHECK(m.class_counts() == std::array<int, 2>{62, 53});
    CHECK(m.class_counts()[0] + m.class_counts()[1] == static_cast<int>(m.rows.size()));
  }
}

TEST_CASE("manifest write/read round trip") {
  testing::TempDir dir("manifest");
  Manifest m;
  m.rows.push_back({"A", Subtype::kAbc, dir / "bags" / "A.bag", dir / "masks", std::nullopt});
  m.rows.push_back({"B", Subtype::kGcb, dir / "bags" / "B.bag", std::nullopt, dir / "t" / "B.ppm"});
  write_manifest(m, dir / "manifest.csv", dir.path());
  CHECK(testing::read_text(dir / "manifest.csv") ==
        "slide_id,label,embedding_path,mask_dir,thumbnail_path\n"
        "A,ABC,bags/A.bag,masks,\n"
        "B,GCB,bags/B.bag,,t/B.ppm\n");
  const Manifest back = read_manifest(dir / "manifest.csv");
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].thumbnail_path->lexically_normal() == (dir / "t" / "B.ppm").lexically_normal());
  CHECK(error_kind([&] { read_manifest(dir / "manifest.csv", true); }) == ErrorKind::kIo);
}

TEST_CASE("patch file stems") {
  const PatchRef p{512, 768, 256};
  CHECK(patch_file_stem("TMC_01", p) == "TMC_01_512_768");
  const auto parsed = parse_patch_file_stem("TMC_01_512_768");
  REQUIRE(parsed);
  CHECK(parsed->first == "TMC_01");
  CHECK(parsed->second.x == 512);
  CHECK(parsed->second.y == 768);
  CHECK_FALSE(parse_patch_file_stem("nounderscore"));
  CHECK_FALSE(parse_patch_file_stem("S_a_1"));
}
