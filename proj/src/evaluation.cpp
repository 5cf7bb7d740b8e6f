#include "mutatt/evaluation.hpp"

#include <algorithm>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <limits>

#include <fmt/format.h>

#include "mutatt/error.hpp"

namespace mutatt {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_br, b.x_br) - std::max(a.x_tl, b.x_tl);
  const double ih = std::min(a.y_br, b.y_br) - std::max(a.y_tl, b.y_tl);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) return 0.0;
  return inter / uni;
}

bool detection_hit(const Box& predicted, const Box& ground_truth) {
  return iou(predicted, ground_truth) > kDetectionIouThreshold;
}

std::string protocol_name(Protocol p) { return p == Protocol::kGroundTruth ? "gt" : "det"; }

Protocol parse_protocol(const std::string& text) {
  if (text == "gt") return Protocol::kGroundTruth;
  if (text == "det") return Protocol::kDetection;
  throw ConfigError("unknown protocol '" + text + "' (expected gt or det)");
}

std::size_t argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw IndexError("argmax of an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

namespace {

InstanceRecord score_instance(const Dataset& dataset, const FeatureIndex& features,
                              const Model& model, std::size_t e, Protocol protocol,
                              const AblationFlags& flags) {
  const Expression& expr = dataset.expressions[e];
  InstanceRecord rec;
  rec.expression = e;
  rec.split = expr.split;
  const auto& candidates = protocol == Protocol::kGroundTruth
                               ? features.annotated(expr.image)
                               : features.detected(expr.image);
  if (candidates.empty()) {
    rec.error = protocol == Protocol::kGroundTruth ? "no annotated regions"
                                                   : "no detected regions";
    return rec;
  }
  const auto ids = encode_tokens(expr.tokens, model.vocab);
  const auto scores = score_candidates(model.params, candidates, ids, flags);
  const std::size_t best = argmax_lowest(scores);
  rec.predicted = best;
  rec.predicted_box = candidates[best].box;
  double runner_up = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != best) runner_up = std::max(runner_up, scores[i]);
  }
  rec.margin = scores[best] - runner_up;
  if (protocol == Protocol::kGroundTruth) {
    rec.correct = best == expr.target;
  } else {
    const Box& truth = dataset.images[expr.image].regions.at(expr.target).box;
    rec.correct = detection_hit(rec.predicted_box, truth);
  }
  return rec;
}

}  // namespace

EvalReport evaluate(Protocol protocol, const Dataset& dataset, const Model& model,
                    const EvalOptions& options) {
  if (protocol == Protocol::kDetection && !dataset.has_detections()) {
    throw ConfigError("det protocol requested but the dataset has no detected regions");
  }
  std::vector<std::size_t> selected = options.expressions;
  if (selected.empty()) {
    selected.resize(dataset.expressions.size());
    for (std::size_t i = 0; i < selected.size(); ++i) selected[i] = i;
  }
  const FeatureIndex features(dataset);
  EvalReport report;
  report.protocol = protocol;
  report.records.resize(selected.size());

  std::vector<std::exception_ptr> errors(selected.size());
  auto run = [&](std::size_t i) {
    try {
      report.records[i] = score_instance(dataset, features, model, selected.at(i), protocol,
                                         options.ablation);
    } catch (const Error& err) {
      // Broken instances count as incorrect and keep the message.
      report.records[i].expression = selected[i];
      report.records[i].split = dataset.expressions.at(selected[i]).split;
      report.records[i].error = err.what();
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (options.parallel) {
    const auto n = static_cast<std::int64_t>(selected.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < n; ++i) run(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < selected.size(); ++i) run(i);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (const InstanceRecord& rec : report.records) {
    SplitAccuracy& split = report.splits[rec.split];
    ++split.count;
    ++report.overall.count;
    if (rec.correct) {
      ++split.correct;
      ++report.overall.correct;
    }
  }
  return report;
}

EvalReport evaluate_gt(const Dataset& dataset, const Model& model, const EvalOptions& options) {
  return evaluate(Protocol::kGroundTruth, dataset, model, options);
}

EvalReport evaluate_det(const Dataset& dataset, const Model& model, const EvalOptions& options) {
  return evaluate(Protocol::kDetection, dataset, model, options);
}

void write_report(const EvalReport& report, std::ostream& out) {
  out << "# protocol=" << protocol_name(report.protocol) << '\n';
  out << "# expression\tsplit\tpredicted\tbox\tcorrect\tmargin\terror\n";
  for (const InstanceRecord& rec : report.records) {
    const Box& b = rec.predicted_box;
    out << fmt::format("{}\t{}\t{}\t{:.2f},{:.2f},{:.2f},{:.2f}\t{}\t{:.6g}\t{}\n",
                       rec.expression, rec.split,
                       rec.predicted ? std::to_string(*rec.predicted) : std::string("-"),
                       b.x_tl, b.y_tl, b.x_br, b.y_br, rec.correct ? 1 : 0, rec.margin,
                       rec.error.empty() ? "-" : rec.error);
  }
  out << '\n';
  write_summary(report, out);
}

void write_summary(const EvalReport& report, std::ostream& out) {
  out << fmt::format("{:<10}{:>10}{:>10}{:>12}\n", "split", "correct", "count",
                     protocol_name(report.protocol) + " acc%");
  for (const auto& [name, acc] : report.splits) {
    out << fmt::format("{:<10}{:>10}{:>10}{:>12.2f}\n", name, acc.correct, acc.count,
                       100.0 * acc.accuracy());
  }
  out << fmt::format("{:<10}{:>10}{:>10}{:>12.2f}\n", "all", report.overall.correct,
                     report.overall.count, 100.0 * report.overall.accuracy());
}

}  // namespace mutatt
