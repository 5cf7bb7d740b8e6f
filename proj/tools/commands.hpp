#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "mutatt/config.hpp"

namespace mutatt::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNonFinite = 4;
inline constexpr int kExitInternal = 5;

// Stable names under the output directory.
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kTrainLogFile = "train_log.tsv";
inline constexpr const char* kResolvedConfigFile = "resolved_config.txt";
inline constexpr const char* kAttentionFile = "attention.tsv";
std::string eval_report_file(const std::string& protocol);

// Each command writes human-readable progress to `out`, then a final
//   RESULT cmd=<name> status=<ok|fail> key=value ...
// line, and returns the exit code. Library errors propagate as exceptions;
// exit_code_for() maps them.
int cmd_synth(const RunConfig& config, std::ostream& out);

int cmd_train(const RunConfig& config, const std::optional<std::filesystem::path>& resume,
              std::ostream& out);

// `ablation` overrides the flags recorded in the checkpoint.
int cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
             const std::optional<std::string>& ablation, std::ostream& out);

int cmd_verify(const RunConfig& config, bool inject_fault, std::ostream& out);

// Attention maps for one expression against every candidate of its image.
// Defaults to the first held-out expression.
int cmd_dump_attention(const RunConfig& config, const std::filesystem::path& checkpoint,
                       std::optional<std::size_t> expression, std::ostream& out);

int exit_code_for(const std::exception& error);

}  // namespace mutatt::cli
