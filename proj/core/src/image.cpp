#include "milpath/image.hpp"

#include <cctype>
#include <fstream>
#include <istream>
#include <string>

#include "milpath/error.hpp"

namespace milpath {

RgbImage::RgbImage(int width, int height, Rgb fill) : width_(width), height_(height) {
  require(width >= 0 && height >= 0, "image dimensions must be non-negative");
  data_.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

RgbImage RgbImage::crop(int x, int y, int w, int h) const {
  require(x >= 0 && y >= 0 && w >= 0 && h >= 0 && x + w <= width_ && y + h <= height_,
          "crop window outside image");
  RgbImage out(w, h);
  for (int row = 0; row < h; ++row) {
    const auto* src = data_.data() + index(x, y + row);
    auto* dst = out.data_.data() + out.index(0, row);
    std::copy(src, src + static_cast<std::ptrdiff_t>(w) * 3, dst);
  }
  return out;
}

namespace detail {

namespace {

std::string next_token(std::istream& in) {
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else {
      c = in.get();
    }
  }
  std::string token;
  while (c != EOF && !std::isspace(c)) {
    token.push_back(static_cast<char>(c));
    c = in.get();
  }
  // The whitespace byte that ended the token has been consumed.
  return token;
}

int parse_positive(const std::string& token, const std::filesystem::path& path,
                   const char* what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(token, &used);
    if (used == token.size() && v > 0 && v <= (1L << 30)) return static_cast<int>(v);
  } catch (const std::exception&) {
  }
  fail(ErrorKind::kFormat, path.string() + ": bad " + what + " '" + token + "'");
}

}  // namespace

NetpbmHeader read_netpbm_header(std::istream& in, const std::filesystem::path& path) {
  NetpbmHeader header;
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (in.gcount() != 2) fail(ErrorKind::kFormat, path.string() + ": missing netpbm magic");
  header.magic.assign(magic, 2);
  header.width = parse_positive(next_token(in), path, "width");
  header.height = parse_positive(next_token(in), path, "height");
  header.maxval = parse_positive(next_token(in), path, "maxval");
  return header;
}

}  // namespace detail

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  const auto header = detail::read_netpbm_header(in, path);
  if (header.magic != "P6") fail(ErrorKind::kFormat, path.string() + ": not a binary PPM (P6)");
  if (header.maxval != 255) {
    fail(ErrorKind::kFormat, path.string() + ": unsupported PPM maxval " +
                                 std::to_string(header.maxval));
  }
  RgbImage image(header.width, header.height);
  auto& bytes = image.bytes();
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    fail(ErrorKind::kCorruption, path.string() + ": truncated PPM payload");
  }
  return image;
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  require(!image.empty(), "refusing to write an empty image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.bytes().data()),
            static_cast<std::streamsize>(image.bytes().size()));
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace milpath
