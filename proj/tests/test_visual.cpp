#include <doctest.h>

#include <random>

#include "mutatt/gradcheck.hpp"
#include "mutatt/language.hpp"
#include "mutatt/matching.hpp"
#include "mutatt/visual.hpp"

using namespace mutatt;

namespace {

const ImageSize kImage{100.0, 100.0};

Tensor random_tensor(std::mt19937_64& rng, Shape shape) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : t.storage()) x = normal(rng);
  return t;
}

RegionFeatures fixture_region(std::mt19937_64& rng, std::size_t dv, std::size_t neighbors) {
  RegionFeatures r;
  r.image = {200.0, 100.0};
  r.box = {20, 10, 60, 50};
  r.subject_grid = random_tensor(rng, {kGridCells, dv});
  const Box boxes[] = {{100, 10, 140, 60}, {30, 60, 50, 90}, {150, 50, 190, 90},
                       {0, 0, 10, 10}, {70, 20, 90, 40}, {180, 0, 200, 10}};
  for (std::size_t j = 0; j < neighbors; ++j) r.context.push_back({random_tensor(rng, {dv}), boxes[j], 0});
  return r;
}

}  // namespace

TEST_SUITE("location encoding") {
  TEST_CASE("direct formula") {
    CHECK(encode_location({0, 0, 50, 50}, kImage).storage() ==
          std::vector<double>{0, 0, 0.5, 0.5, 0.25});
    CHECK(encode_location({0, 0, 100, 100}, kImage).storage() ==
          std::vector<double>{0, 0, 1, 1, 1});
    CHECK(encode_location({10, 10, 10, 10}, kImage).storage() ==
          std::vector<double>{0.1, 0.1, 0.1, 0.1, 0});
  }

  TEST_CASE("degenerate image and inverted box are errors") {
    CHECK_THROWS_AS(encode_location({0, 0, 1, 1}, {0.0, 10.0}), GeometryError);
    CHECK_THROWS_AS(encode_location({5, 5, 1, 1}, kImage), GeometryError);
  }

  TEST_CASE("boxes outside the image are clamped") {
    const Tensor l = encode_location({-10, -10, 150, 50}, kImage);
    CHECK(l.storage() == std::vector<double>{0, 0, 1, 0.5, 0.5});
  }

  TEST_CASE("scale invariant") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 300.0);
    for (int i = 0; i < 100; ++i) {
      const double x = u(rng), y = u(rng);
      const Box b{x, y, x + u(rng) / 3, y + u(rng) / 3};
      const ImageSize img{640, 480};
      // Power-of-two factors keep the divisions exact.
      const double s = 4.0;
      const Tensor a = encode_location(b, img);
      const Tensor c = encode_location({b.x_tl * s, b.y_tl * s, b.x_br * s, b.y_br * s},
                                       {img.width * s, img.height * s});
      CHECK(a == c);
    }
  }

  TEST_CASE("components lie in the unit interval") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-50.0, 700.0);
    for (int i = 0; i < 200; ++i) {
      double x0 = u(rng), x1 = u(rng), y0 = u(rng), y1 = u(rng);
      if (x1 < x0) std::swap(x0, x1);
      if (y1 < y0) std::swap(y0, y1);
      const Tensor code = encode_location({x0, y0, x1, y1}, {640, 480});
      for (double v : code.storage()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_SUITE("context offsets") {
  TEST_CASE("identical neighbor has zero offsets") {
    const Box b{10, 20, 30, 60};
    const std::vector<Box> n{b};
    const ContextOffsets o = encode_context_offsets(b, n, kImage);
    CHECK(o.mask == Mask{1, 0, 0, 0, 0});
    for (std::size_t k = 0; k < 4; ++k) CHECK(o.offsets.at(0, k) == 0.0);
    CHECK(o.offsets.at(0, 4) == doctest::Approx(800.0 / 10000.0).epsilon(1e-15));
  }

  TEST_CASE("no neighbors gives zeros and an empty mask") {
    const ContextOffsets o = encode_context_offsets({10, 20, 30, 60}, {}, kImage);
    CHECK(o.mask == Mask(5, 0));
    for (double v : o.offsets.storage()) CHECK(v == 0.0);
  }

  TEST_CASE("two neighbors, hand computed, nearest first") {
    const Box ref{10, 10, 30, 50};  // w 20, h 40, center (20, 30)
    const std::vector<Box> n{{60, 10, 80, 30}, {20, 40, 40, 60}};
    const ContextOffsets o = encode_context_offsets(ref, n, kImage);
    CHECK(o.mask == Mask{1, 1, 0, 0, 0});
    // Second box is nearer (center (30, 50)) than the first (center (70, 20)).
    const std::vector<double> row0{10.0 / 20, 30.0 / 40, 10.0 / 20, 10.0 / 40, 400.0 / 10000};
    const std::vector<double> row1{50.0 / 20, 0.0 / 40, 50.0 / 20, -20.0 / 40, 400.0 / 10000};
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(o.offsets.at(0, k) == doctest::Approx(row0[k]).epsilon(1e-15));
      CHECK(o.offsets.at(1, k) == doctest::Approx(row1[k]).epsilon(1e-15));
    }
    for (std::size_t r = 2; r < 5; ++r) {
      for (std::size_t k = 0; k < 5; ++k) CHECK(o.offsets.at(r, k) == 0.0);
    }
  }

  TEST_CASE("equal distances keep input order") {
    const Box ref{40, 40, 60, 60};
    const std::vector<Box> n{{70, 40, 90, 60}, {10, 40, 30, 60}, {40, 70, 60, 90}};
    CHECK(order_by_center_distance(ref, n) == std::vector<std::size_t>{0, 1, 2});
  }

  TEST_CASE("zero-size reference box is an error") {
    CHECK_THROWS_AS(encode_context_offsets({10, 10, 10, 30}, {}, kImage), GeometryError);
  }
}

TEST_SUITE("module visuals") {
  TEST_CASE("slot counts, masks and pooled means") {
    std::mt19937_64 rng(3);
    const ModelDims dims{4, 6, 5, 3};
    const ModelParams p = ModelParams::initialize(dims, 3);
    const RegionFeatures region = fixture_region(rng, dims.visual_dim, 2);
    Graph g;
    const ModuleVisuals v = assemble_module_visuals(bind_params(g, p), region);
    CHECK(v.features[0].shape() == Shape{49, 6});
    CHECK(v.features[1].shape() == Shape{1, 6});
    CHECK(v.features[2].shape() == Shape{5, 6});
    CHECK(v.mask[2] == Mask{1, 1, 0, 0, 0});
    CHECK(v.active(Module::kRelationship));

    // Location pooled equals its single row.
    for (std::size_t k = 0; k < 6; ++k) CHECK(v.pooled[1].value()[k] == v.features[1].value().at(0, k));

    // Pooled equals the mean of unmasked rows; padded rows are zero.
    for (std::size_t m = 0; m < 3; ++m) {
      const Tensor& f = v.features[m].value();
      for (std::size_t k = 0; k < 6; ++k) {
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t r = 0; r < f.rows(); ++r) {
          if (v.mask[m][r]) {
            total += f.at(r, k);
            ++count;
          } else {
            CHECK(f.at(r, k) == 0.0);
          }
        }
        CHECK(std::abs(v.pooled[m].value()[k] - total / static_cast<double>(count)) <= 1e-12);
      }
    }
  }

  TEST_CASE("projections recomputed by hand") {
    std::mt19937_64 rng(4);
    const ModelDims dims{4, 3, 5, 2};
    const ModelParams p = ModelParams::initialize(dims, 4);
    const RegionFeatures region = fixture_region(rng, dims.visual_dim, 1);
    Graph g;
    const ModuleVisuals v = assemble_module_visuals(bind_params(g, p), region);
    // Subject row 7.
    for (std::size_t k = 0; k < 3; ++k) {
      double z = p.subject_proj.b[k];
      for (std::size_t i = 0; i < 2; ++i) z += region.subject_grid.at(7, i) * p.subject_proj.w.at(i, k);
      CHECK(v.features[0].value().at(7, k) == doctest::Approx(z).epsilon(1e-14));
    }
    // Location input: l_i then the five offset rows.
    std::vector<double> input;
    const Tensor code = encode_location(region.box, region.image);
    for (double x : code.storage()) input.push_back(x);
    const std::vector<Box> nb{region.context[0].box};
    const Tensor offset_rows = encode_context_offsets(region.box, nb, region.image).offsets;
    for (double x : offset_rows.storage()) input.push_back(x);
    REQUIRE(input.size() == kLocationInputDim);
    for (std::size_t k = 0; k < 3; ++k) {
      double z = p.location_proj.b[k];
      for (std::size_t i = 0; i < input.size(); ++i) z += input[i] * p.location_proj.w.at(i, k);
      CHECK(v.features[1].value().at(0, k) == doctest::Approx(z).epsilon(1e-14));
    }
    // Relationship slot 0: [feature ; offsets row 0].
    const Tensor off = encode_context_offsets(region.box, nb, region.image).offsets;
    for (std::size_t k = 0; k < 3; ++k) {
      double z = p.relationship_proj.b[k];
      for (std::size_t i = 0; i < 2; ++i) z += region.context[0].feature[i] * p.relationship_proj.w.at(i, k);
      for (std::size_t i = 0; i < 5; ++i) z += off.at(0, i) * p.relationship_proj.w.at(2 + i, k);
      CHECK(v.features[2].value().at(0, k) == doctest::Approx(z).epsilon(1e-14));
    }
  }

  TEST_CASE("all-equal subject rows pool to that row") {
    const ModelDims dims{4, 3, 5, 2};
    const ModelParams p = ModelParams::initialize(dims, 5);
    RegionFeatures region;
    region.image = {100, 100};
    region.box = {10, 10, 20, 20};
    region.subject_grid = Tensor({kGridCells, 2});
    for (std::size_t r = 0; r < kGridCells; ++r) {
      region.subject_grid.at(r, 0) = 0.5;
      region.subject_grid.at(r, 1) = -1.5;
    }
    Graph g;
    const ModuleVisuals v = assemble_module_visuals(bind_params(g, p), region);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(v.pooled[0].value()[k] == doctest::Approx(v.features[0].value().at(0, k)).epsilon(1e-14));
    }
    CHECK_FALSE(v.active(Module::kRelationship));
  }

  TEST_CASE("feature dimension mismatch is a shape error") {
    std::mt19937_64 rng(6);
    const ModelParams p = ModelParams::initialize({4, 3, 5, 2}, 6);
    Graph g;
    CHECK_THROWS_AS(assemble_module_visuals(bind_params(g, p), fixture_region(rng, 3, 1)), ShapeError);
  }

  TEST_CASE("projection gradients match finite differences") {
    std::mt19937_64 rng(7);
    const ModelDims dims{4, 3, 4, 2};
    ModelParams p = ModelParams::initialize(dims, 7);
    const RegionFeatures region = fixture_region(rng, dims.visual_dim, 3);
    auto loss = [&region](const ModelParams& params, ModelParams* grads) {
      Graph g;
      const ModelVars vars = bind_params(g, params, grads);
      const ModuleVisuals v = assemble_module_visuals(vars, region);
      Var total = sum(tanh(v.features[0]));
      total = add(total, sum(tanh(v.pooled[1])));
      total = add(total, sum(tanh(v.features[2])));
      if (grads) g.backward(total);
      return total.item();
    };
    ModelParams grads = p.zeros_like();
    loss(p, &grads);
    const auto report =
        finite_difference_check([&](const ModelParams& q) { return loss(q, nullptr); }, p, grads);
    CHECK(report.max_relative_error() < 1e-6);
    for (const auto& [name, t] : grads.named()) {
      if (name.starts_with("vis.")) {
        double norm = 0.0;
        for (double x : t->storage()) norm += x * x;
        CAPTURE(name);
        CHECK(norm > 0.0);
      }
    }
  }
}
