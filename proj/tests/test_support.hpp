#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "mutatt/synth.hpp"

namespace mutatt::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& label) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mutatt_" + label + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Small synthetic task that trains in well under a second per hundred steps.
inline SynthSpec small_spec(std::size_t images = 40, std::uint64_t seed = 11) {
  SynthSpec spec;
  spec.num_images = images;
  spec.visual_dim = 8;
  spec.seed = seed;
  return spec;
}

}  // namespace mutatt::test
