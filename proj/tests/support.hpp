#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "milpath/datamodel.hpp"
#include "milpath/error.hpp"
#include "milpath/milnet.hpp"
#include "milpath/random.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes);
std::string read_text(const fs::path& path);

milpath::SlideBag random_bag(milpath::Rng& rng, int n, int d, std::string slide_id = "S");
Eigen::MatrixXd random_matrix(milpath::Rng& rng, Eigen::Index rows, Eigen::Index cols,
                              double scale = 1.0);

/// Tiny model with all-random tensors (biases included).
milpath::MilParams random_params(milpath::Rng& rng, const milpath::ModelConfig& config,
                                 double scale = 0.5);
milpath::ModelConfig tiny_config(int d = 5, int hidden = 6, int attention = 4);

/// Kind of the milpath::Error thrown by f, or nullopt when nothing is thrown.
template <class F>
std::optional<milpath::ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const milpath::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace testing
