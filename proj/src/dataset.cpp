#include "mutatt/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mutatt/error.hpp"

namespace mutatt {

using json = nlohmann::json;
namespace fs = std::filesystem;

bool operator==(const Region& a, const Region& b) {
  return a.box == b.box && a.category == b.category && a.grid == b.grid &&
         a.context == b.context;
}

bool operator==(const Image& a, const Image& b) {
  return a.size == b.size && a.regions == b.regions && a.detections == b.detections;
}

bool operator==(const Expression& a, const Expression& b) {
  return a.image == b.image && a.target == b.target && a.tokens == b.tokens &&
         a.split == b.split;
}

bool Dataset::has_detections() const {
  return std::any_of(images.begin(), images.end(),
                     [](const Image& im) { return !im.detections.empty(); });
}

std::vector<std::size_t> Dataset::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < expressions.size(); ++i) {
    if (expressions[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::string> Dataset::splits() const {
  std::vector<std::string> out;
  for (const auto& e : expressions) {
    if (std::find(out.begin(), out.end(), e.split) == out.end()) out.push_back(e.split);
  }
  return out;
}

std::vector<std::size_t> select_context(const std::vector<Region>& regions,
                                        std::size_t self) {
  std::vector<std::size_t> candidates;
  std::vector<Box> boxes;
  for (std::size_t j = 0; j < regions.size(); ++j) {
    if (j == self || regions[j].category != regions[self].category) continue;
    candidates.push_back(j);
    boxes.push_back(regions[j].box);
  }
  const auto order = order_by_center_distance(regions[self].box, boxes);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < std::min(order.size(), kMaxContext); ++k) {
    out.push_back(candidates[order[k]]);
  }
  return out;
}

Tensor average_pool(const Tensor& grid) {
  const std::size_t rows = grid.rows();
  const std::size_t cols = grid.cols();
  Tensor out({cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += grid.at(r, c);
  }
  for (double& x : out.storage()) x /= static_cast<double>(rows);
  return out;
}

RegionFeatures region_features(const Image& image, std::size_t index, bool detections) {
  const auto& list = detections ? image.detections : image.regions;
  const Region& r = list.at(index);
  RegionFeatures f;
  f.box = r.box;
  f.category = r.category;
  f.subject_grid = r.grid;
  f.image = image.size;
  for (std::size_t j : r.context) {
    const Region& n = list.at(j);
    f.context.push_back({average_pool(n.grid), n.box, n.category});
  }
  return f;
}

FeatureIndex::FeatureIndex(const Dataset& dataset) {
  annotated_.resize(dataset.images.size());
  detected_.resize(dataset.images.size());
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const Image& image = dataset.images[i];
    for (std::size_t r = 0; r < image.regions.size(); ++r) {
      annotated_[i].push_back(region_features(image, r, false));
    }
    for (std::size_t r = 0; r < image.detections.size(); ++r) {
      detected_[i].push_back(region_features(image, r, true));
    }
  }
}

namespace {

struct Violations {
  std::optional<DatasetError::Kind> first;
  std::vector<std::string> messages;

  void add(DatasetError::Kind kind, std::string message) {
    if (!first) first = kind;
    messages.push_back(std::move(message));
  }

  void raise_if_any() const {
    if (!first) return;
    std::string text = "dataset invalid (" + std::to_string(messages.size()) +
                       " violation" + (messages.size() == 1 ? "" : "s") + "):";
    for (const auto& m : messages) text += "\n  - " + m;
    throw DatasetError(*first, text);
  }
};

void check_regions(const std::vector<Region>& regions, std::size_t visual_dim,
                   const std::string& where, Violations& v) {
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const Region& region = regions[r];
    const std::string name = where + " region " + std::to_string(r);
    if (!region.box.valid()) {
      v.add(DatasetError::Kind::kMalformed, name + ": box corners inverted");
    }
    if (region.grid.rank() != 2 || region.grid.shape()[0] != kGridCells ||
        region.grid.shape()[1] != visual_dim) {
      v.add(DatasetError::Kind::kDimensionMismatch,
            name + ": grid " + shape_string(region.grid.shape()) + " expected [49x" +
                std::to_string(visual_dim) + "]");
    }
    if (region.context.size() > kMaxContext) {
      v.add(DatasetError::Kind::kMalformed, name + ": more than 5 context objects");
    }
    for (std::size_t c : region.context) {
      if (c >= regions.size() || c == r) {
        v.add(DatasetError::Kind::kDanglingReference,
              name + ": context reference " + std::to_string(c) + " does not resolve");
      }
    }
  }
}

}  // namespace

void validate_dataset(const Dataset& dataset) {
  Violations v;
  if (dataset.visual_dim == 0) {
    v.add(DatasetError::Kind::kDimensionMismatch, "visual_dim must be positive");
  }
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const Image& image = dataset.images[i];
    const std::string where = "image " + std::to_string(i);
    if (!(image.size.width > 0.0) || !(image.size.height > 0.0)) {
      v.add(DatasetError::Kind::kMalformed, where + ": non-positive image size");
    }
    check_regions(image.regions, dataset.visual_dim, where, v);
    check_regions(image.detections, dataset.visual_dim, where + " detection", v);
  }
  for (std::size_t e = 0; e < dataset.expressions.size(); ++e) {
    const Expression& expr = dataset.expressions[e];
    const std::string where = "expression " + std::to_string(e);
    if (expr.tokens.empty()) {
      v.add(DatasetError::Kind::kMalformed, where + ": no tokens");
    }
    if (expr.image >= dataset.images.size()) {
      v.add(DatasetError::Kind::kDanglingReference,
            where + ": image " + std::to_string(expr.image) + " does not exist");
      continue;
    }
    if (expr.target >= dataset.images[expr.image].regions.size()) {
      v.add(DatasetError::Kind::kDanglingReference,
            where + ": target region " + std::to_string(expr.target) +
                " does not exist in image " + std::to_string(expr.image));
    }
  }
  v.raise_if_any();
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void append_le(std::vector<char>& out, std::span<const double> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * sizeof(double));
  std::memcpy(out.data() + start, values.data(), values.size() * sizeof(double));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::reverse(out.begin() + start + i * 8, out.begin() + start + (i + 1) * 8);
    }
  }
}

std::vector<double> read_le(const std::vector<char>& blob, std::size_t offset,
                            std::size_t count) {
  std::vector<double> values(count);
  std::memcpy(values.data(), blob.data() + offset * sizeof(double),
              count * sizeof(double));
  if constexpr (std::endian::native == std::endian::big) {
    for (double& x : values) {
      auto* bytes = reinterpret_cast<unsigned char*>(&x);
      std::reverse(bytes, bytes + sizeof(double));
    }
  }
  return values;
}

json regions_to_json(const std::vector<Region>& regions, std::vector<char>& blob) {
  json out = json::array();
  for (const Region& r : regions) {
    const std::size_t offset = blob.size() / sizeof(double);
    append_le(blob, r.grid.data());
    out.push_back({{"box", {r.box.x_tl, r.box.y_tl, r.box.x_br, r.box.y_br}},
                   {"category", r.category},
                   {"features",
                    {{"offset", offset}, {"rows", r.grid.rows()}, {"cols", r.grid.cols()}}},
                   {"context", r.context}});
  }
  return out;
}

std::vector<Region> regions_from_json(const json& list, const std::vector<char>& blob,
                                      std::size_t visual_dim, const std::string& where,
                                      Violations& v) {
  std::vector<Region> out;
  const std::size_t blob_values = blob.size() / sizeof(double);
  for (std::size_t r = 0; r < list.size(); ++r) {
    const json& item = list[r];
    const std::string name = where + " region " + std::to_string(r);
    Region region;
    const auto& box = item.at("box");
    if (box.size() != 4) {
      throw DatasetError(DatasetError::Kind::kMalformed, name + ": box needs 4 values");
    }
    region.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                  box[3].get<double>()};
    region.category = item.at("category").get<int>();
    region.context = item.value("context", std::vector<std::size_t>{});
    const json& feat = item.at("features");
    const auto offset = feat.at("offset").get<std::size_t>();
    const auto rows = feat.at("rows").get<std::size_t>();
    const auto cols = feat.at("cols").get<std::size_t>();
    if (rows != kGridCells || cols != visual_dim) {
      v.add(DatasetError::Kind::kDimensionMismatch,
            name + ": feature block " + std::to_string(rows) + "x" + std::to_string(cols) +
                " does not match declared 49x" + std::to_string(visual_dim));
    } else if (offset + rows * cols > blob_values) {
      v.add(DatasetError::Kind::kDimensionMismatch,
            name + ": feature block [" + std::to_string(offset) + ", " +
                std::to_string(offset + rows * cols) + ") exceeds blob of " +
                std::to_string(blob_values) + " values");
    } else {
      region.grid = Tensor({rows, cols}, read_le(blob, offset, rows * cols));
    }
    if (region.grid.rank() != 2) region.grid = Tensor({kGridCells, visual_dim});
    out.push_back(std::move(region));
  }
  return out;
}

}  // namespace

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  validate_dataset(dataset);
  fs::create_directories(dir);
  std::vector<char> blob;
  json images = json::array();
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const Image& image = dataset.images[i];
    json item = {{"id", i},
                 {"width", image.size.width},
                 {"height", image.size.height},
                 {"regions", regions_to_json(image.regions, blob)}};
    if (!image.detections.empty()) {
      item["detections"] = regions_to_json(image.detections, blob);
    }
    images.push_back(std::move(item));
  }
  json expressions = json::array();
  for (std::size_t e = 0; e < dataset.expressions.size(); ++e) {
    const Expression& expr = dataset.expressions[e];
    expressions.push_back({{"id", e},
                           {"image", expr.image},
                           {"target", expr.target},
                           {"split", expr.split},
                           {"tokens", expr.tokens}});
  }
  const json index = {{"format", kDatasetFormat},
                      {"version", kDatasetVersion},
                      {"visual_dim", dataset.visual_dim},
                      {"grid_cells", kGridCells},
                      {"image_count", dataset.images.size()},
                      {"feature_blob", kBlobFile},
                      {"vocabulary", kVocabFile},
                      {"images", std::move(images)},
                      {"expressions", std::move(expressions)}};

  std::ofstream index_out(dir / kIndexFile, std::ios::binary);
  index_out << index.dump(1) << '\n';
  std::ofstream blob_out(dir / kBlobFile, std::ios::binary);
  blob_out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  dataset.vocab.save(dir / kVocabFile);
  if (!index_out || !blob_out) throw ConfigError("failed writing dataset to " + dir.string());
}

Dataset load_dataset(const fs::path& path) {
  const fs::path index_path = fs::is_directory(path) ? path / kIndexFile : path;
  const fs::path dir = index_path.parent_path();
  std::ifstream in(index_path, std::ios::binary);
  if (!in) {
    throw DatasetError(DatasetError::Kind::kMissingFile,
                       "dataset index not found: " + index_path.string());
  }
  json index;
  try {
    index = json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(DatasetError::Kind::kMalformed,
                       "dataset index " + index_path.string() + " is not valid JSON: " + e.what());
  }

  Dataset dataset;
  Violations v;
  try {
    if (index.value("format", std::string()) != kDatasetFormat) {
      throw DatasetError(DatasetError::Kind::kMalformed,
                         index_path.string() + " is not a " + kDatasetFormat + " index");
    }
    const int version = index.at("version").get<int>();
    if (version != kDatasetVersion) {
      throw DatasetError(DatasetError::Kind::kVersionMismatch,
                         "dataset version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kDatasetVersion) + ")");
    }
    dataset.visual_dim = index.at("visual_dim").get<std::size_t>();

    const fs::path blob_path = dir / index.at("feature_blob").get<std::string>();
    std::ifstream blob_in(blob_path, std::ios::binary);
    if (!blob_in) {
      throw DatasetError(DatasetError::Kind::kMissingFile,
                         "feature blob not found: " + blob_path.string());
    }
    std::vector<char> blob((std::istreambuf_iterator<char>(blob_in)),
                           std::istreambuf_iterator<char>());
    if (blob.size() % sizeof(double) != 0) {
      v.add(DatasetError::Kind::kDimensionMismatch,
            "feature blob size " + std::to_string(blob.size()) +
                " bytes is not a whole number of 64-bit values");
    }

    const json& images = index.at("images");
    if (index.contains("image_count") &&
        index["image_count"].get<std::size_t>() != images.size()) {
      v.add(DatasetError::Kind::kMalformed, "header image_count does not match image list");
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
      const json& item = images[i];
      const std::string where = "image " + std::to_string(i);
      Image image;
      image.size = {item.at("width").get<double>(), item.at("height").get<double>()};
      image.regions = regions_from_json(item.at("regions"), blob, dataset.visual_dim, where, v);
      if (item.contains("detections")) {
        image.detections = regions_from_json(item["detections"], blob, dataset.visual_dim,
                                             where + " detection", v);
      }
      dataset.images.push_back(std::move(image));
    }
    for (const json& item : index.at("expressions")) {
      Expression expr;
      expr.image = item.at("image").get<std::size_t>();
      expr.target = item.at("target").get<std::size_t>();
      expr.split = item.value("split", std::string("train"));
      expr.tokens = item.at("tokens").get<std::vector<std::string>>();
      dataset.expressions.push_back(std::move(expr));
    }
    if (index.contains("vocabulary")) {
      dataset.vocab = Vocabulary::load(dir / index["vocabulary"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw DatasetError(DatasetError::Kind::kMalformed,
                       "dataset index " + index_path.string() + ": " + e.what());
  }
  v.raise_if_any();
  validate_dataset(dataset);
  return dataset;
}

}  // namespace mutatt
