#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mutatt/dataset.hpp"

namespace mutatt {

// Parameters of the synthetic grounding task.
//
// Every region carries one value per attribute factor. Factor 0 is the
// category noun (shared by all regions of an image); the others are
// adjectives. The subject grid is the sum of the per-value prototypes tiled
// over the 49 cells plus Gaussian noise. Each region gets the expression
//   <adjectives> <noun> <location> near <context>
// where <location> is the dominant direction of the box center from the
// image center and <context> names the first adjective of the nearest
// same-category neighbor. Regions come in adjacent pairs (0,1), (2,3), ...
// so every region's nearest neighbor is its partner.
struct SynthSpec {
  std::size_t num_images = 500;
  std::size_t regions_per_image = 4;
  std::size_t vocab_size = 6;  // values per attribute factor
  std::size_t num_attribute_factors = 2;
  double noise_std = 0.1;
  std::uint64_t seed = 7;
  std::size_t visual_dim = 32;
  bool with_detections = true;
  double image_width = 640.0;
  double image_height = 480.0;

  // Throws ConfigError describing the first invalid field.
  void validate() const;
};

// Ground truth planted by the generator.
struct SynthLedger {
  struct RegionTruth {
    std::vector<int> attributes;  // value index per factor
    std::string location;         // "left" / "right" / "top" / "bottom"
    int context_attribute = -1;   // first adjective of the nearest neighbor, -1 if none
    std::size_t nearest = 0;      // index of that neighbor
  };

  std::vector<std::vector<std::string>> factor_tokens;  // [factor][value]
  std::vector<std::vector<Tensor>> prototypes;          // [factor][value] -> [d_v]
  std::vector<std::vector<RegionTruth>> regions;        // [image][region]
  // For detections: the annotated region each detection was derived from,
  // or -1 for a distractor.
  std::vector<std::vector<int>> detection_source;

  // Token of the factor used for context words.
  std::size_t context_factor() const { return factor_tokens.size() > 1 ? 1 : 0; }
};

struct SynthResult {
  Dataset dataset;
  SynthLedger ledger;
};

inline constexpr const char* kLocationTokens[] = {"left", "right", "top", "bottom"};

std::string location_bucket(const Box& box, ImageSize image);

SynthResult generate_synthetic(const SynthSpec& spec);

}  // namespace mutatt
