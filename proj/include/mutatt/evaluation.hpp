#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mutatt/dataset.hpp"
#include "mutatt/matching.hpp"
#include "mutatt/model.hpp"

namespace mutatt {

// Intersection area over union area; 0 when the union is empty.
double iou(const Box& a, const Box& b);

inline constexpr double kDetectionIouThreshold = 0.5;

// Correct under det iff IoU strictly exceeds 0.5.
bool detection_hit(const Box& predicted, const Box& ground_truth);

enum class Protocol { kGroundTruth, kDetection };

std::string protocol_name(Protocol p);
Protocol parse_protocol(const std::string& text);

// Index of the largest score, lowest index on ties. Scores must be nonempty.
std::size_t argmax_lowest(std::span<const double> scores);

struct InstanceRecord {
  std::size_t expression = 0;
  std::string split;
  std::optional<std::size_t> predicted;  // empty when there were no candidates
  Box predicted_box;
  bool correct = false;
  double margin = 0.0;  // best minus runner-up score; +inf with one candidate
  std::string error;
};

struct SplitAccuracy {
  std::size_t correct = 0;
  std::size_t count = 0;
  double accuracy() const {
    return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count);
  }
};

struct EvalReport {
  Protocol protocol = Protocol::kGroundTruth;
  std::vector<InstanceRecord> records;
  std::map<std::string, SplitAccuracy> splits;
  SplitAccuracy overall;

  double accuracy() const { return overall.accuracy(); }
};

struct EvalOptions {
  AblationFlags ablation;
  // Expression indices to evaluate; empty means all.
  std::vector<std::size_t> expressions;
  // Score instances on OpenMP threads. Results are identical to serial.
  bool parallel = false;
};

EvalReport evaluate_gt(const Dataset& dataset, const Model& model, const EvalOptions& options);
EvalReport evaluate_det(const Dataset& dataset, const Model& model, const EvalOptions& options);
EvalReport evaluate(Protocol protocol, const Dataset& dataset, const Model& model,
                    const EvalOptions& options);

// One line per instance followed by a blank line and the summary table.
void write_report(const EvalReport& report, std::ostream& out);
// Summary table with one row per split.
void write_summary(const EvalReport& report, std::ostream& out);

}  // namespace mutatt
