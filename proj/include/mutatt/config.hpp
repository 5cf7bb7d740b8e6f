#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mutatt/params.hpp"
#include "mutatt/synth.hpp"
#include "mutatt/training.hpp"

namespace mutatt {

// Fully resolved settings for one CLI invocation.
//
// Text form is one `key = value` per line with flat dotted keys, `#` starting
// a comment. Unknown keys and unparsable values are errors.
struct RunConfig {
  TrainConfig train;
  SynthSpec synth;
  ModelDims dims;  // vocab_size and visual_dim come from the dataset
  std::size_t checkpoint_every = 500;
  std::string protocol = "gt";
  bool eval_parallel = false;
  std::filesystem::path out_dir = "out";
  std::filesystem::path data_dir;  // empty: same as out_dir

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Applies every assignment in `text`. `source` names it in error messages.
  void apply_text(std::string_view text, const std::string& source = "config");
  void apply_file(const std::filesystem::path& path);

  std::filesystem::path data_path() const { return data_dir.empty() ? out_dir : data_dir; }

  // Every key in sorted order. Without paths, two runs that differ only in
  // where they read and write produce the same text.
  std::string to_text(bool with_paths = true) const;
  // CRC-32 over the keys that affect the trained model (train.*, model.*,
  // ablation); paths and evaluation settings are excluded.
  std::uint32_t model_hash() const;

  void validate() const;
};

// Reads MUTATT_LOG (trace, debug, info, warn, error, off) and sets the log
// level. Unknown values fall back to info.
void configure_logging();

}  // namespace mutatt
