#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mutatt/matching.hpp"
#include "mutatt/params.hpp"
#include "mutatt/visual.hpp"

namespace mutatt::reference {

// Straight-line scorer written with plain loops over std::vector, sharing no
// code with the graph pipeline. Used only to cross-check it.
struct ReferenceScore {
  double total = 0.0;
  std::vector<double> module_weights;  // [3]
  std::vector<double> combined;        // [3]
};

ReferenceScore score(const ModelParams& params, const RegionFeatures& region,
                     std::span<const std::int64_t> token_ids, const AblationFlags& flags);

}  // namespace mutatt::reference
