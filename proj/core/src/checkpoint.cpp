#include "milpath/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "json.hpp"
#include "milpath/error.hpp"

namespace milpath {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    if (pos_ + 4 > bytes_.size()) fail(ErrorKind::kCorruption, "truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const MilParams& params) {
  params.check_shapes();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.config.input_dim));
  params.for_each_tensor([&](std::string_view name, const auto& t) {
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) {
        const double v = t(i, j);
        const auto f = static_cast<float>(v);
        require(std::isfinite(f), "parameter " + std::string(name) +
                                      " is not finite in binary32");
        put_u32(out, std::bit_cast<std::uint32_t>(f));
      }
    }
  });
  return out;
}

MilParams decode_checkpoint(std::span<const std::uint8_t> bytes, const ModelConfig& config) {
  if (bytes.size() < 12 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(),
                                       bytes.begin())) {
    fail(ErrorKind::kFormat, "not a model checkpoint (bad magic)");
  }
  Reader in(bytes.subspan(4));
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto d = in.u32();
  if (static_cast<int>(d) != config.input_dim) {
    fail(ErrorKind::kValidation, "checkpoint input width " + std::to_string(d) +
                                     " disagrees with its config (" +
                                     std::to_string(config.input_dim) + ")");
  }
  MilParams p = init_params(config, 0).zeros_like();
  p.for_each_tensor([&](std::string_view name, auto& t) {
    const auto rows = in.u32();
    const auto cols = in.u32();
    if (rows != t.rows() || cols != t.cols()) {
      fail(ErrorKind::kCorruption, "tensor " + std::string(name) + " has stored shape " +
                                       std::to_string(rows) + "x" + std::to_string(cols) +
                                       ", config implies " + std::to_string(t.rows()) + "x" +
                                       std::to_string(t.cols()));
    }
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = std::bit_cast<float>(in.u32());
    }
  });
  if (!in.done()) fail(ErrorKind::kCorruption, "trailing bytes after checkpoint tensors");
  if (!p.all_finite()) fail(ErrorKind::kCorruption, "checkpoint holds non-finite parameters");
  return p;
}

std::string model_config_json(const ModelConfig& config) {
  nlohmann::ordered_json j;
  j["input_dim"] = config.input_dim;
  j["hidden_dim"] = config.hidden_dim;
  j["attention_dim"] = config.attention_dim;
  j["dropout"] = config.dropout;
  j["activation"] = std::string(to_string(config.activation));
  j["classifier_mode"] = std::string(to_string(config.classifier_mode));
  return j.dump(2) + "\n";
}

ModelConfig parse_model_config_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.attention_dim = j.at("attention_dim").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.classifier_mode = parse_classifier_mode(j.at("classifier_mode").get<std::string>());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad model config JSON: ") + e.what());
  }
}

std::filesystem::path checkpoint_sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const char* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace

void write_checkpoint(const MilParams& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  write_bytes(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const auto json = model_config_json(params.config);
  write_bytes(checkpoint_sidecar_path(path), json.data(), json.size());
}

MilParams read_checkpoint(const std::filesystem::path& path) {
  const auto config = parse_model_config_json(read_text(checkpoint_sidecar_path(path)));
  const auto text = read_text(path);
  const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(text.data()),
                                            text.size());
  try {
    return decode_checkpoint(bytes, config);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace milpath
