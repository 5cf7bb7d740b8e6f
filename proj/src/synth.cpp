#include "mutatt/synth.hpp"

#include <array>
#include <cmath>
#include <random>
#include <set>
#include <tuple>

#include "mutatt/error.hpp"

namespace mutatt {

namespace {

const std::array<std::vector<std::string>, 3> kWordLists = {{
    {"ball", "cup", "box", "hat", "book", "lamp", "vase", "shoe", "chair", "bottle"},
    {"red", "green", "blue", "yellow", "white", "black", "orange", "purple", "pink",
     "brown"},
    {"small", "large", "wooden", "metal", "striped", "shiny", "dotted", "plain", "soft",
     "round"},
}};

std::string factor_token(std::size_t factor, std::size_t value) {
  if (factor < kWordLists.size() && value < kWordLists[factor].size()) {
    return kWordLists[factor][value];
  }
  return "f" + std::to_string(factor) + "v" + std::to_string(value);
}

// Centers closer than this to a bucket boundary (|dx| = |dy|) are redrawn.
constexpr double kBucketMargin = 0.06;

bool clear_of_bucket_boundary(const Box& box, const SynthSpec& spec) {
  const double dx = box.center_x() / spec.image_width - 0.5;
  const double dy = box.center_y() / spec.image_height - 0.5;
  return std::abs(std::abs(dx) - std::abs(dy)) >= kBucketMargin;
}

bool inside(const Box& box, const SynthSpec& spec) {
  return box.x_tl >= 0.0 && box.y_tl >= 0.0 && box.x_br <= spec.image_width &&
         box.y_br <= spec.image_height;
}

double center_distance(const Box& a, const Box& b) {
  return std::hypot(a.center_x() - b.center_x(), a.center_y() - b.center_y());
}

Box random_box(std::mt19937_64& rng, const SynthSpec& spec) {
  std::uniform_real_distribution<double> frac(0.12, 0.22);
  for (;;) {
    const double w = frac(rng) * spec.image_width;
    const double h = frac(rng) * spec.image_height;
    std::uniform_real_distribution<double> x(0.0, spec.image_width - w);
    std::uniform_real_distribution<double> y(0.0, spec.image_height - h);
    const double x0 = x(rng);
    const double y0 = y(rng);
    const Box box{x0, y0, x0 + w, y0 + h};
    if (clear_of_bucket_boundary(box, spec)) return box;
  }
}

// A box of similar size touching `anchor` on a random side.
Box partner_box(const Box& anchor, std::mt19937_64& rng, const SynthSpec& spec) {
  std::uniform_real_distribution<double> frac(0.12, 0.22);
  std::uniform_real_distribution<double> gap(0.0, 0.15);
  std::uniform_real_distribution<double> slide(-0.3, 0.3);
  std::uniform_int_distribution<int> side(0, 3);
  const double w = frac(rng) * spec.image_width;
  const double h = frac(rng) * spec.image_height;
  double x0 = 0.0;
  double y0 = 0.0;
  switch (side(rng)) {
    case 0:  // left
      x0 = anchor.x_tl - w - gap(rng) * anchor.width();
      y0 = anchor.y_tl + slide(rng) * anchor.height();
      break;
    case 1:  // right
      x0 = anchor.x_br + gap(rng) * anchor.width();
      y0 = anchor.y_tl + slide(rng) * anchor.height();
      break;
    case 2:  // above
      x0 = anchor.x_tl + slide(rng) * anchor.width();
      y0 = anchor.y_tl - h - gap(rng) * anchor.height();
      break;
    default:  // below
      x0 = anchor.x_tl + slide(rng) * anchor.width();
      y0 = anchor.y_br + gap(rng) * anchor.height();
      break;
  }
  return {x0, y0, x0 + w, y0 + h};
}

// Regions come in adjacent pairs, pairs kept apart, so every region's
// nearest same-category neighbor is unambiguous. An odd last region is
// placed alone.
std::vector<Box> layout_boxes(std::size_t count, std::mt19937_64& rng, const SynthSpec& spec) {
  const double separation = 0.3 * std::min(spec.image_width, spec.image_height);
  for (;;) {
    std::vector<Box> boxes;
    bool ok = true;
    for (std::size_t r = 0; r < count && ok; ++r) {
      ok = false;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        const Box box = r % 2 == 0 ? random_box(rng, spec) : partner_box(boxes[r - 1], rng, spec);
        if (!inside(box, spec) || !clear_of_bucket_boundary(box, spec)) continue;
        const std::size_t pair_start = r - r % 2;
        const double own = r % 2 == 0 ? 0.0 : center_distance(box, boxes[r - 1]);
        ok = true;
        for (std::size_t k = 0; k < pair_start && ok; ++k) {
          const double d = center_distance(box, boxes[k]);
          ok = d >= separation && d > 1.5 * own;
        }
        if (ok) boxes.push_back(box);
      }
    }
    if (ok) return boxes;
  }
}

// Corners moved by at most 5% of the box size, kept inside the image.
Box jitter_box(const Box& box, std::mt19937_64& rng, const SynthSpec& spec) {
  std::uniform_real_distribution<double> shift(-0.05, 0.05);
  const double w = box.width();
  const double h = box.height();
  Box out{box.x_tl + shift(rng) * w, box.y_tl + shift(rng) * h,
          box.x_br + shift(rng) * w, box.y_br + shift(rng) * h};
  return clamp_to_image(out, {spec.image_width, spec.image_height});
}

Tensor make_grid(const SynthLedger& ledger, const std::vector<int>& attributes,
                 std::size_t visual_dim, double noise_std, std::mt19937_64& rng) {
  Tensor signal({visual_dim});
  for (std::size_t f = 0; f < attributes.size(); ++f) {
    const Tensor& proto = ledger.prototypes[f][static_cast<std::size_t>(attributes[f])];
    for (std::size_t k = 0; k < visual_dim; ++k) signal[k] += proto[k];
  }
  std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);
  Tensor grid({kGridCells, visual_dim});
  for (std::size_t c = 0; c < kGridCells; ++c) {
    for (std::size_t k = 0; k < visual_dim; ++k) {
      grid.at(c, k) = signal[k] + (noise_std > 0.0 ? noise(rng) : 0.0);
    }
  }
  return grid;
}

}  // namespace

void SynthSpec::validate() const {
  if (num_images == 0) throw ConfigError("synth.num_images must be positive");
  if (regions_per_image < 2) {
    throw ConfigError("synth.regions_per_image must be at least 2, got " +
                      std::to_string(regions_per_image));
  }
  if (vocab_size < 2) throw ConfigError("synth.vocab_size must be at least 2");
  if (num_attribute_factors < 1) {
    throw ConfigError("synth.num_attribute_factors must be at least 1");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("synth.noise_std must be nonnegative");
  if (visual_dim == 0) throw ConfigError("synth.visual_dim must be positive");
  if (!(image_width > 0.0) || !(image_height > 0.0)) {
    throw ConfigError("synth image size must be positive");
  }
}

std::string location_bucket(const Box& box, ImageSize image) {
  const double dx = box.center_x() / image.width - 0.5;
  const double dy = box.center_y() / image.height - 0.5;
  if (std::abs(dx) >= std::abs(dy)) return dx < 0.0 ? "left" : "right";
  return dy < 0.0 ? "top" : "bottom";
}

SynthResult generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SynthResult result;
  SynthLedger& ledger = result.ledger;
  Dataset& dataset = result.dataset;
  dataset.visual_dim = spec.visual_dim;

  const std::size_t factors = spec.num_attribute_factors;
  ledger.factor_tokens.resize(factors);
  ledger.prototypes.resize(factors);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double proto_scale = 1.0 / std::sqrt(static_cast<double>(spec.visual_dim));
  for (std::size_t f = 0; f < factors; ++f) {
    for (std::size_t v = 0; v < spec.vocab_size; ++v) {
      ledger.factor_tokens[f].push_back(factor_token(f, v));
      Tensor proto({spec.visual_dim});
      for (double& x : proto.storage()) x = unit(rng) * proto_scale;
      ledger.prototypes[f].push_back(std::move(proto));
    }
  }
  const std::size_t context_factor = ledger.context_factor();
  const ImageSize image_size{spec.image_width, spec.image_height};
  std::uniform_int_distribution<int> value(0, static_cast<int>(spec.vocab_size) - 1);

  for (std::size_t i = 0; i < spec.num_images; ++i) {
    Image image;
    image.size = image_size;
    std::vector<SynthLedger::RegionTruth> truths;
    bool unique = false;
    for (int attempt = 0; attempt < 10000 && !unique; ++attempt) {
      image.regions.assign(spec.regions_per_image, Region{});
      truths.assign(spec.regions_per_image, {});
      const int category = value(rng);
      const std::vector<Box> boxes = layout_boxes(spec.regions_per_image, rng, spec);
      for (std::size_t r = 0; r < spec.regions_per_image; ++r) {
        truths[r].attributes.assign(factors, 0);
        truths[r].attributes[0] = category;
        for (std::size_t f = 1; f < factors; ++f) truths[r].attributes[f] = value(rng);
        image.regions[r].box = boxes[r];
        image.regions[r].category = category;
      }
      std::set<std::tuple<std::vector<int>, std::string, int>> seen;
      unique = true;
      for (std::size_t r = 0; r < spec.regions_per_image; ++r) {
        image.regions[r].context = select_context(image.regions, r);
        truths[r].location = location_bucket(image.regions[r].box, image_size);
        if (!image.regions[r].context.empty()) {
          truths[r].nearest = image.regions[r].context.front();
          truths[r].context_attribute = truths[truths[r].nearest].attributes[context_factor];
        }
        unique = unique && seen.emplace(truths[r].attributes, truths[r].location,
                                        truths[r].context_attribute)
                               .second;
      }
    }
    if (!unique) {
      throw ConfigError("could not draw distinguishable regions; increase synth.vocab_size");
    }
    for (std::size_t r = 0; r < spec.regions_per_image; ++r) {
      image.regions[r].grid =
          make_grid(ledger, truths[r].attributes, spec.visual_dim, spec.noise_std, rng);
    }

    std::vector<int> sources;
    if (spec.with_detections) {
      for (std::size_t r = 0; r < spec.regions_per_image; ++r) {
        Region det;
        det.box = jitter_box(image.regions[r].box, rng, spec);
        det.category = image.regions[r].category;
        det.grid = make_grid(ledger, truths[r].attributes, spec.visual_dim, spec.noise_std, rng);
        image.detections.push_back(std::move(det));
        sources.push_back(static_cast<int>(r));
      }
      std::vector<int> distractor(factors, truths[0].attributes[0]);
      for (std::size_t f = 1; f < factors; ++f) distractor[f] = value(rng);
      Region det;
      det.box = random_box(rng, spec);
      det.category = image.regions[0].category;
      det.grid = make_grid(ledger, distractor, spec.visual_dim, spec.noise_std, rng);
      image.detections.push_back(std::move(det));
      sources.push_back(-1);
      for (std::size_t r = 0; r < image.detections.size(); ++r) {
        image.detections[r].context = select_context(image.detections, r);
      }
    }
    ledger.detection_source.push_back(std::move(sources));

    const std::string split = i % 10 == 8 ? "val" : (i % 10 == 9 ? "test" : "train");
    for (std::size_t r = 0; r < spec.regions_per_image; ++r) {
      const auto& truth = truths[r];
      Expression expr;
      expr.image = i;
      expr.target = r;
      expr.split = split;
      for (std::size_t f = 1; f < factors; ++f) {
        expr.tokens.push_back(ledger.factor_tokens[f][truth.attributes[f]]);
      }
      expr.tokens.push_back(ledger.factor_tokens[0][truth.attributes[0]]);
      expr.tokens.push_back(truth.location);
      if (truth.context_attribute >= 0) {
        expr.tokens.push_back("near");
        expr.tokens.push_back(ledger.factor_tokens[context_factor][truth.context_attribute]);
      }
      dataset.expressions.push_back(std::move(expr));
    }
    ledger.regions.push_back(std::move(truths));
    dataset.images.push_back(std::move(image));
  }

  std::vector<std::vector<std::string>> corpus;
  for (const auto& e : dataset.expressions) {
    if (e.split == "train") corpus.push_back(e.tokens);
  }
  dataset.vocab = Vocabulary::build(corpus);
  validate_dataset(dataset);
  return result;
}

}  // namespace mutatt
