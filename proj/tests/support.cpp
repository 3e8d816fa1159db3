#include "support.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace testing {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("milpath_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

milpath::SlideBag random_bag(milpath::Rng& rng, int n, int d, std::string slide_id) {
  milpath::SlideBag bag;
  bag.slide_id = std::move(slide_id);
  bag.embeddings.resize(n, d);
  for (int k = 0; k < n; ++k) {
    bag.patches.push_back({static_cast<std::uint32_t>(256 * rng.below(64)),
                           static_cast<std::uint32_t>(256 * rng.below(64)), 256});
    for (int j = 0; j < d; ++j) bag.embeddings(k, j) = static_cast<float>(rng.normal());
  }
  return bag;
}

Eigen::MatrixXd random_matrix(milpath::Rng& rng, Eigen::Index rows, Eigen::Index cols,
                              double scale) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

milpath::MilParams random_params(milpath::Rng& rng, const milpath::ModelConfig& config,
                                 double scale) {
  milpath::MilParams p = milpath::init_params(config, rng.next_u64());
  p.for_each_tensor([&](std::string_view, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
  });
  return p;
}

milpath::ModelConfig tiny_config(int d, int hidden, int attention) {
  milpath::ModelConfig c;
  c.input_dim = d;
  c.hidden_dim = hidden;
  c.attention_dim = attention;
  return c;
}

}  // namespace testing
