#include "mutatt/visual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mutatt {

namespace {

void require_image(ImageSize image) {
  if (!(image.width > 0.0) || !(image.height > 0.0)) {
    throw GeometryError("image size must be positive, got " +
                        std::to_string(image.width) + "x" +
                        std::to_string(image.height));
  }
}

void require_box(const Box& box) {
  if (!box.valid()) throw GeometryError("box corners are inverted");
}

}  // namespace

Box clamp_to_image(const Box& box, ImageSize image) {
  Box out = box;
  out.x_tl = std::clamp(box.x_tl, 0.0, image.width);
  out.x_br = std::clamp(box.x_br, 0.0, image.width);
  out.y_tl = std::clamp(box.y_tl, 0.0, image.height);
  out.y_br = std::clamp(box.y_br, 0.0, image.height);
  return out;
}

Tensor encode_location(const Box& box, ImageSize image) {
  require_image(image);
  require_box(box);
  const Box b = clamp_to_image(box, image);
  return Tensor::vector({b.x_tl / image.width, b.y_tl / image.height,
                         b.x_br / image.width, b.y_br / image.height,
                         b.area() / (image.width * image.height)});
}

std::vector<std::size_t> order_by_center_distance(const Box& reference,
                                                  std::span<const Box> others) {
  std::vector<double> dist(others.size());
  for (std::size_t j = 0; j < others.size(); ++j) {
    dist[j] = std::hypot(others[j].center_x() - reference.center_x(),
                         others[j].center_y() - reference.center_y());
  }
  std::vector<std::size_t> order(others.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&dist](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

ContextOffsets encode_context_offsets(const Box& reference,
                                      std::span<const Box> neighbors,
                                      ImageSize image) {
  require_image(image);
  require_box(reference);
  const double w = reference.width();
  const double h = reference.height();
  if (!(w > 0.0) || !(h > 0.0)) {
    throw GeometryError("reference box needs positive width and height");
  }
  ContextOffsets out{Tensor({kMaxContext, kLocationDim}), Mask(kMaxContext, 0)};
  const auto order = order_by_center_distance(reference, neighbors);
  const double image_area = image.width * image.height;
  for (std::size_t row = 0; row < std::min(order.size(), kMaxContext); ++row) {
    const Box& n = neighbors[order[row]];
    require_box(n);
    out.offsets.at(row, 0) = (n.x_tl - reference.x_tl) / w;
    out.offsets.at(row, 1) = (n.y_tl - reference.y_tl) / h;
    out.offsets.at(row, 2) = (n.x_br - reference.x_br) / w;
    out.offsets.at(row, 3) = (n.y_br - reference.y_br) / h;
    out.offsets.at(row, 4) = n.width() * n.height() / image_area;
    out.mask[row] = 1;
  }
  return out;
}

bool ModuleVisuals::active(Module m) const {
  const Mask& selected = mask[index_of(m)];
  return std::any_of(selected.begin(), selected.end(), [](auto v) { return v != 0; });
}

ModuleVisuals assemble_module_visuals(const ModelVars& vars,
                                      const RegionFeatures& region) {
  Graph& g = *vars.graph;
  const std::size_t d = vars.dims.embed_dim;
  const std::size_t dv = vars.dims.visual_dim;
  if (region.subject_grid.rank() != 2 || region.subject_grid.shape()[0] != kGridCells ||
      region.subject_grid.shape()[1] != dv) {
    throw ShapeError("subject grid " + shape_string(region.subject_grid.shape()) +
                     " does not match [49x" + std::to_string(dv) + "]");
  }
  if (region.context.size() > kMaxContext) {
    throw ShapeError("region has " + std::to_string(region.context.size()) +
                     " context objects, at most 5 allowed");
  }
  ModuleVisuals out;

  // Subject: every grid cell projected to the common space.
  {
    const std::size_t i = index_of(Module::kSubject);
    Var grid = g.constant(region.subject_grid);
    out.features[i] = add_row(matmul(grid, vars.proj_w[i]), vars.proj_b[i]);
    out.mask[i] = Mask(kGridCells, 1);
    out.pooled[i] = masked_mean_rows(out.features[i], out.mask[i]);
  }

  std::vector<Box> neighbor_boxes;
  for (const auto& c : region.context) neighbor_boxes.push_back(c.box);
  const ContextOffsets offsets =
      encode_context_offsets(region.box, neighbor_boxes, region.image);
  const auto order = order_by_center_distance(region.box, neighbor_boxes);

  // Location: [l_i ; flattened offsets] -> one row.
  {
    const std::size_t i = index_of(Module::kLocation);
    Tensor input({kLocationInputDim});
    const Tensor loc = encode_location(region.box, region.image);
    std::copy(loc.data().begin(), loc.data().end(), input.data().begin());
    std::copy(offsets.offsets.data().begin(), offsets.offsets.data().end(),
              input.data().begin() + kLocationDim);
    Var row = add(matmul(g.constant(std::move(input)), vars.proj_w[i]), vars.proj_b[i]);
    out.features[i] = reshape(row, {1, d});
    out.mask[i] = Mask(1, 1);
    out.pooled[i] = row;
  }

  // Relationship: [neighbor feature ; offset row] per slot, padded slots zero.
  {
    const std::size_t i = index_of(Module::kRelationship);
    out.mask[i] = offsets.mask;
    if (region.context.empty()) {
      out.features[i] = g.constant(Tensor({kMaxContext, d}));
      out.pooled[i] = g.constant(Tensor({d}));
    } else {
      const std::size_t in_dim = dv + kLocationDim;
      Tensor input({kMaxContext, in_dim});
      Tensor keep({kMaxContext, d});
      for (std::size_t row = 0; row < std::min(order.size(), kMaxContext); ++row) {
        const Tensor& feature = region.context[order[row]].feature;
        if (feature.numel() != dv) {
          throw ShapeError("context feature " + shape_string(feature.shape()) +
                           " does not match d_v=" + std::to_string(dv));
        }
        std::copy(feature.data().begin(), feature.data().end(),
                  input.data().begin() + row * in_dim);
        for (std::size_t k = 0; k < kLocationDim; ++k) {
          input.at(row, dv + k) = offsets.offsets.at(row, k);
        }
        for (std::size_t k = 0; k < d; ++k) keep.at(row, k) = 1.0;
      }
      Var projected = add_row(matmul(g.constant(std::move(input)), vars.proj_w[i]),
                              vars.proj_b[i]);
      out.features[i] = mul(projected, g.constant(std::move(keep)));
      out.pooled[i] = masked_mean_rows(out.features[i], out.mask[i]);
    }
  }
  return out;
}

}  // namespace mutatt
