#include "mutatt/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mutatt/checkpoint.hpp"
#include "mutatt/error.hpp"

namespace mutatt {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: cannot parse '{}' as a number", key, text));
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, text));
}

std::string format_double(double x) { return fmt::format("{}", x); }

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  bool model_relevant;
};

template <typename T>
Field size_field(T RunConfig::*group, std::size_t T::*member, bool model) {
  return {[=](const RunConfig& c) { return std::to_string(c.*group.*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.*group.*member = parse_number<std::size_t>(k, v);
          },
          model};
}

template <typename T>
Field double_field(T RunConfig::*group, double T::*member, bool model) {
  return {[=](const RunConfig& c) { return format_double(c.*group.*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.*group.*member = parse_number<double>(k, v);
          },
          model};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    using R = RunConfig;
    f["train.batch_size"] = size_field(&R::train, &TrainConfig::batch_size, true);
    f["train.learning_rate"] = double_field(&R::train, &TrainConfig::learning_rate, true);
    f["train.lr_decay_factor"] = double_field(&R::train, &TrainConfig::lr_decay_factor, true);
    f["train.lr_decay_every"] = size_field(&R::train, &TrainConfig::lr_decay_every, true);
    f["train.margin"] = double_field(&R::train, &TrainConfig::margin, true);
    f["train.max_iterations"] = size_field(&R::train, &TrainConfig::max_iterations, true);
    f["train.grad_clip"] = double_field(&R::train, &TrainConfig::grad_clip, true);
    f["train.beta1"] = double_field(&R::train, &TrainConfig::beta1, true);
    f["train.beta2"] = double_field(&R::train, &TrainConfig::beta2, true);
    f["train.epsilon"] = double_field(&R::train, &TrainConfig::epsilon, true);
    f["train.seed"] = {[](const R& c) { return std::to_string(c.train.seed); },
                       [](R& c, const std::string& k, const std::string& v) {
                         c.train.seed = parse_number<std::uint64_t>(k, v);
                       },
                       true};
    f["train.parallel"] = {[](const R& c) { return std::string(c.train.parallel ? "true" : "false"); },
                           [](R& c, const std::string& k, const std::string& v) {
                             c.train.parallel = parse_bool(k, v);
                           },
                           true};
    f["train.checkpoint_every"] = {[](const R& c) { return std::to_string(c.checkpoint_every); },
                                   [](R& c, const std::string& k, const std::string& v) {
                                     c.checkpoint_every = parse_number<std::size_t>(k, v);
                                   },
                                   false};
    f["ablation"] = {[](const R& c) { return c.train.ablation.to_string(); },
                     [](R& c, const std::string&, const std::string& v) {
                       c.train.ablation = AblationFlags::parse(v, c.train.ablation);
                     },
                     true};
    f["model.embed_dim"] = size_field(&R::dims, &ModelDims::embed_dim, true);
    f["model.hidden_dim"] = size_field(&R::dims, &ModelDims::hidden_dim, true);

    f["synth.num_images"] = size_field(&R::synth, &SynthSpec::num_images, false);
    f["synth.regions_per_image"] = size_field(&R::synth, &SynthSpec::regions_per_image, false);
    f["synth.vocab_size"] = size_field(&R::synth, &SynthSpec::vocab_size, false);
    f["synth.num_attribute_factors"] =
        size_field(&R::synth, &SynthSpec::num_attribute_factors, false);
    f["synth.noise_std"] = double_field(&R::synth, &SynthSpec::noise_std, false);
    f["synth.visual_dim"] = size_field(&R::synth, &SynthSpec::visual_dim, false);
    f["synth.image_width"] = double_field(&R::synth, &SynthSpec::image_width, false);
    f["synth.image_height"] = double_field(&R::synth, &SynthSpec::image_height, false);
    f["synth.seed"] = {[](const R& c) { return std::to_string(c.synth.seed); },
                       [](R& c, const std::string& k, const std::string& v) {
                         c.synth.seed = parse_number<std::uint64_t>(k, v);
                       },
                       false};
    f["synth.with_detections"] = {
        [](const R& c) { return std::string(c.synth.with_detections ? "true" : "false"); },
        [](R& c, const std::string& k, const std::string& v) {
          c.synth.with_detections = parse_bool(k, v);
        },
        false};

    f["eval.protocol"] = {[](const R& c) { return c.protocol; },
                          [](R& c, const std::string&, const std::string& v) {
                            if (v != "gt" && v != "det") {
                              throw ConfigError("eval.protocol: expected gt or det, got '" + v + "'");
                            }
                            c.protocol = v;
                          },
                          false};
    f["eval.parallel"] = {[](const R& c) { return std::string(c.eval_parallel ? "true" : "false"); },
                          [](R& c, const std::string& k, const std::string& v) {
                            c.eval_parallel = parse_bool(k, v);
                          },
                          false};
    f["paths.out"] = {[](const R& c) { return c.out_dir.string(); },
                      [](R& c, const std::string&, const std::string& v) { c.out_dir = v; },
                      false};
    f["paths.data"] = {[](const R& c) { return c.data_dir.string(); },
                       [](R& c, const std::string&, const std::string& v) { c.data_dir = v; },
                       false};
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, key, value);
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) out.push_back(k);
    return out;
  }();
  return names;
}

void RunConfig::apply_text(std::string_view text, const std::string& source) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", source, number));
    }
    try {
      set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", source, number, e.what()));
    }
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  apply_text(buffer.str(), path.string());
}

std::string RunConfig::to_text(bool with_paths) const {
  std::string out;
  for (const auto& [k, f] : fields()) {
    if (!with_paths && k.starts_with("paths.")) continue;
    out += k + " = " + f.get(*this) + "\n";
  }
  return out;
}

std::uint32_t RunConfig::model_hash() const {
  std::string text;
  for (const auto& [k, f] : fields()) {
    if (f.model_relevant) text += k + " = " + f.get(*this) + "\n";
  }
  return crc32_of(text);
}

void RunConfig::validate() const {
  train.validate();
  synth.validate();
  if (dims.embed_dim == 0 || dims.hidden_dim == 0) {
    throw ConfigError("model.embed_dim and model.hidden_dim must be positive");
  }
  if (checkpoint_every == 0) throw ConfigError("train.checkpoint_every must be positive");
}

void configure_logging() {
  const char* env = std::getenv("MUTATT_LOG");
  if (env == nullptr) return;
  const auto level = spdlog::level::from_str(env);
  spdlog::set_level(level == spdlog::level::off && std::string_view(env) != "off"
                        ? spdlog::level::info
                        : level);
}

}  // namespace mutatt
