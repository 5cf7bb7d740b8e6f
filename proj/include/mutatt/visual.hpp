#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "mutatt/error.hpp"
#include "mutatt/graph.hpp"
#include "mutatt/params.hpp"

namespace mutatt {

class GeometryError : public Error {
 public:
  using Error::Error;
};

// Pixel box, top-left and bottom-right corners, continuous coordinates.
struct Box {
  double x_tl = 0.0;
  double y_tl = 0.0;
  double x_br = 0.0;
  double y_br = 0.0;

  double width() const { return x_br - x_tl; }
  double height() const { return y_br - y_tl; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_tl + x_br); }
  double center_y() const { return 0.5 * (y_tl + y_br); }
  bool valid() const { return x_br >= x_tl && y_br >= y_tl; }

  bool operator==(const Box&) const = default;
};

struct ImageSize {
  double width = 0.0;
  double height = 0.0;

  bool operator==(const ImageSize&) const = default;
};

Box clamp_to_image(const Box& box, ImageSize image);

// [x_tl/W, y_tl/H, x_br/W, y_br/H, w*h/(W*H)] of the clamped box.
Tensor encode_location(const Box& box, ImageSize image);

// Indices of `others` sorted by ascending center distance to `reference`;
// equal distances keep input order.
std::vector<std::size_t> order_by_center_distance(const Box& reference,
                                                  std::span<const Box> others);

struct ContextOffsets {
  Tensor offsets;  // [5 x 5]; row j = offset record of the j-th nearest neighbor
  Mask mask;       // 5 entries, true for filled rows
};

// Row j: [dx_tl/w_i, dy_tl/h_i, dx_br/w_i, dy_br/h_i, w_j*h_j/(W*H)] with
// d* = neighbor - reference, for the five nearest neighbors.
ContextOffsets encode_context_offsets(const Box& reference,
                                      std::span<const Box> neighbors,
                                      ImageSize image);

struct ContextObject {
  Tensor feature;  // [d_v], average-pooled visual feature of the neighbor
  Box box;
  int category = 0;
};

// Everything the visual encoder needs about one candidate region.
struct RegionFeatures {
  Box box;
  int category = 0;
  Tensor subject_grid;  // [49 x d_v]
  std::vector<ContextObject> context;  // at most 5, nearest first
  ImageSize image;
};

// Projected visual sets {v_n^m} for the three modules.
struct ModuleVisuals {
  std::array<Var, 3> features;  // [N_m x d]; N = 49, 1, 5
  std::array<Mask, 3> mask;
  std::array<Var, 3> pooled;  // [d], mean of unmasked rows

  // False when a module has no unmasked slot (a region with no context
  // objects); that module then contributes no score.
  bool active(Module m) const;
};

ModuleVisuals assemble_module_visuals(const ModelVars& vars,
                                      const RegionFeatures& region);

}  // namespace mutatt
