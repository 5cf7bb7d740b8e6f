#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mutatt/language.hpp"
#include "mutatt/tensor.hpp"
#include "mutatt/visual.hpp"

namespace mutatt {

inline constexpr int kDatasetVersion = 1;
inline constexpr const char* kDatasetFormat = "mutatt-dataset";
inline constexpr const char* kIndexFile = "dataset.json";
inline constexpr const char* kBlobFile = "features.bin";
inline constexpr const char* kVocabFile = "vocab.txt";

struct Region {
  Box box;
  int category = 0;
  Tensor grid;                      // [49 x d_v] subject features
  std::vector<std::size_t> context;  // indices into the same region list, nearest first
};

struct Image {
  ImageSize size;
  std::vector<Region> regions;     // annotated (gt protocol)
  std::vector<Region> detections;  // detector output (det protocol), may be empty
};

struct Expression {
  std::size_t image = 0;
  std::size_t target = 0;  // index into the image's annotated regions
  std::vector<std::string> tokens;
  std::string split = "train";
};

bool operator==(const Region& a, const Region& b);
bool operator==(const Image& a, const Image& b);
bool operator==(const Expression& a, const Expression& b);

// In-memory dataset: images with region features and referring expressions.
struct Dataset {
  std::size_t visual_dim = 32;
  std::vector<Image> images;
  std::vector<Expression> expressions;
  Vocabulary vocab;

  bool has_detections() const;
  std::vector<std::size_t> split_indices(const std::string& split) const;
  std::vector<std::string> splits() const;

  bool operator==(const Dataset&) const = default;
};

// Up to five same-category regions other than `self`, nearest center first,
// ties by ascending index.
std::vector<std::size_t> select_context(const std::vector<Region>& regions,
                                        std::size_t self);

// Mean of the 49 grid rows.
Tensor average_pool(const Tensor& grid);

RegionFeatures region_features(const Image& image, std::size_t index,
                               bool detections = false);

// RegionFeatures for every region of every image, built once and shared.
class FeatureIndex {
 public:
  explicit FeatureIndex(const Dataset& dataset);

  const std::vector<RegionFeatures>& annotated(std::size_t image) const {
    return annotated_[image];
  }
  const std::vector<RegionFeatures>& detected(std::size_t image) const {
    return detected_[image];
  }

 private:
  std::vector<std::vector<RegionFeatures>> annotated_;
  std::vector<std::vector<RegionFeatures>> detected_;
};

// Checks every dataset invariant; throws DatasetError listing all violations,
// with the kind of the first one.
void validate_dataset(const Dataset& dataset);

// Writes dataset.json, features.bin and vocab.txt into `dir`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
// Accepts the directory or the index file path.
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace mutatt
