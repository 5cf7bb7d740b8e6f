#include "commands.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/spdlog.h>

#include "mutatt/checkpoint.hpp"
#include "mutatt/dataset.hpp"
#include "mutatt/error.hpp"
#include "mutatt/evaluation.hpp"
#include "mutatt/language.hpp"
#include "mutatt/synth.hpp"
#include "mutatt/training.hpp"
#include "verify.hpp"

namespace mutatt::cli {

namespace fs = std::filesystem;

std::string eval_report_file(const std::string& protocol) { return "eval_" + protocol + ".txt"; }

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_resolved_config(const RunConfig& config, std::ostream& out) {
  fs::create_directories(config.out_dir);
  std::ofstream file(config.out_dir / kResolvedConfigFile);
  file << config.to_text();
  out << "# resolved config\n";
  std::istringstream lines(config.to_text());
  for (std::string line; std::getline(lines, line);) out << "#   " << line << '\n';
}

std::vector<std::size_t> held_out(const Dataset& dataset) {
  std::vector<std::size_t> out = dataset.split_indices("val");
  const auto test = dataset.split_indices("test");
  out.insert(out.end(), test.begin(), test.end());
  return out;
}

Checkpoint make_checkpoint(const RunConfig& config, const Model& model, const AdamState& optimizer) {
  return Checkpoint{config.to_text(false), config.model_hash(), model, optimizer};
}

// The ablation a checkpoint was trained with, read back from its config text.
AblationFlags recorded_ablation(const Checkpoint& checkpoint) {
  RunConfig recorded;
  recorded.apply_text(checkpoint.config_text, "checkpoint config");
  return recorded.train.ablation;
}

void join_values(std::ostream& out, const Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) out << (i ? "," : "") << fmt::format("{:.6f}", t[i]);
}

}  // namespace

int cmd_synth(const RunConfig& config, std::ostream& out) {
  write_resolved_config(config, out);
  const SynthResult result = generate_synthetic(config.synth);
  const Dataset& data = result.dataset;
  save_dataset(data, config.out_dir);

  const SynthLedger& ledger = result.ledger;
  out << "planted factors:\n";
  for (std::size_t f = 0; f < ledger.factor_tokens.size(); ++f) {
    out << fmt::format("  factor {} ({}): {}\n", f, f == 0 ? "category" : "attribute",
                       fmt::join(ledger.factor_tokens[f], " "));
  }
  std::size_t with_context = 0;
  for (const auto& image : ledger.regions) {
    for (const auto& r : image) with_context += r.context_attribute >= 0 ? 1 : 0;
  }
  out << fmt::format("regions with a relational token: {}\n", with_context);
  for (const std::string& split : data.splits()) {
    out << fmt::format("split {}: {} expressions\n", split, data.split_indices(split).size());
  }
  const std::uint32_t checksum = crc32_of(read_file(config.out_dir / kIndexFile) +
                                          read_file(config.out_dir / kBlobFile));
  out << fmt::format("RESULT cmd=synth status=ok images={} expressions={} vocab={} checksum={:08x}\n",
                     data.images.size(), data.expressions.size(), data.vocab.size(), checksum);
  return kExitOk;
}

int cmd_train(const RunConfig& config, const std::optional<fs::path>& resume, std::ostream& out) {
  config.validate();
  write_resolved_config(config, out);
  const Dataset data = load_dataset(config.data_path());

  Model model;
  AdamState optimizer;
  if (resume) {
    Checkpoint ck = load_checkpoint(*resume, config.model_hash());
    model = std::move(ck.model);
    optimizer = std::move(ck.optimizer);
    if (model.params.dims.visual_dim != data.visual_dim) {
      throw ConfigError(fmt::format("checkpoint expects d_v={}, dataset has {}",
                                    model.params.dims.visual_dim, data.visual_dim));
    }
    out << fmt::format("resuming from {} at step {}\n", resume->string(), optimizer.step);
  } else {
    ModelDims dims = config.dims;
    dims.visual_dim = data.visual_dim;
    model = Model::create(data.vocab, dims, config.train.seed);
    optimizer = AdamState::zeros_like(model.params);
  }

  const fs::path checkpoint_path = config.out_dir / kCheckpointFile;
  std::ofstream log(config.out_dir / kTrainLogFile, resume ? std::ios::app : std::ios::trunc);
  if (!resume) log << "step\tlearning_rate\tloss\tactive_fraction\tgrad_norm\tskipped_region_negatives\n";

  Trainer trainer(data, model, optimizer, config.train);
  StepStats last;
  while (trainer.current_step() < config.train.max_iterations) {
    last = trainer.step();
    log << fmt::format("{}\t{:.6g}\t{:.9g}\t{:.4f}\t{:.9g}\t{}\n", last.step, last.learning_rate,
                       last.loss, last.active_fraction(), last.grad_norm,
                       last.skipped_region_negatives);
    const std::size_t done = trainer.current_step();
    if (done % 100 == 0) {
      out << fmt::format("step {:>6}  loss {:.4f}  active {:.2f}  lr {:.2e}\n", done, last.loss,
                         last.active_fraction(), last.learning_rate);
    }
    if (done % config.checkpoint_every == 0) {
      save_checkpoint(make_checkpoint(config, model, optimizer), checkpoint_path);
      spdlog::debug("checkpoint written at step {}", done);
    }
  }
  log.flush();
  save_checkpoint(make_checkpoint(config, model, optimizer), checkpoint_path);

  EvalOptions options;
  options.ablation = config.train.ablation;
  options.expressions = held_out(data);
  options.parallel = config.eval_parallel;
  double accuracy = 0.0;
  if (!options.expressions.empty()) {
    const EvalReport report = evaluate_gt(data, model, options);
    write_summary(report, out);
    accuracy = report.accuracy();
  }
  out << fmt::format("RESULT cmd=train status=ok steps={} final_loss={:.6f} heldout_gt_acc={:.4f} "
                     "ablation={} checkpoint={}\n",
                     trainer.current_step(), last.loss, accuracy,
                     config.train.ablation.to_string(), checkpoint_path.string());
  return kExitOk;
}

int cmd_eval(const RunConfig& config, const fs::path& checkpoint,
             const std::optional<std::string>& ablation, std::ostream& out) {
  write_resolved_config(config, out);
  const Protocol protocol = parse_protocol(config.protocol);
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(config.data_path());

  EvalOptions options;
  options.ablation = ablation ? AblationFlags::parse(*ablation) : recorded_ablation(ck);
  options.parallel = config.eval_parallel;
  const EvalReport report = evaluate(protocol, data, ck.model, options);

  const fs::path report_path = config.out_dir / eval_report_file(config.protocol);
  {
    std::ofstream file(report_path);
    file << "# checkpoint " << checkpoint.string() << " config hash "
         << fmt::format("{:08x}", ck.config_hash) << '\n';
    file << "# ablation " << options.ablation.to_string() << '\n';
    write_report(report, file);
  }
  write_summary(report, out);
  std::string per_split;
  for (const auto& [name, acc] : report.splits) {
    per_split += fmt::format(" {}_acc={:.4f}", name, acc.accuracy());
  }
  out << fmt::format("RESULT cmd=eval status=ok protocol={} count={} acc={:.4f}{} report={}\n",
                     config.protocol, report.overall.count, report.accuracy(), per_split,
                     report_path.string());
  return kExitOk;
}

int cmd_verify(const RunConfig& config, bool inject_fault, std::ostream& out) {
  verify::VerifyOptions options;
  options.seed = config.train.seed;
  options.inject_gradient_fault = inject_fault;
  std::size_t failed = 0;
  const auto results = verify::run_all(options);
  for (const auto& r : results) {
    out << fmt::format("{} {}: {}\n", r.passed ? "PASS" : "FAIL", r.name, r.detail);
    failed += r.passed ? 0 : 1;
  }
  out << fmt::format("RESULT cmd=verify status={} checks={} failed={}\n",
                     failed == 0 ? "ok" : "fail", results.size(), failed);
  return failed == 0 ? kExitOk : kExitCheckFailed;
}

int cmd_dump_attention(const RunConfig& config, const fs::path& checkpoint,
                       std::optional<std::size_t> expression, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(config.data_path());
  if (!expression) {
    const auto candidates = held_out(data);
    expression = candidates.empty() ? 0 : candidates.front();
  }
  if (*expression >= data.expressions.size()) {
    throw IndexError(fmt::format("expression {} out of range ({} expressions)", *expression,
                                 data.expressions.size()));
  }
  const Expression& expr = data.expressions[*expression];
  const AblationFlags flags = recorded_ablation(ck);
  const FeatureIndex features(data);
  const auto& regions = features.annotated(expr.image);

  Graph graph;
  const ModelVars vars = bind_params(graph, ck.model.params);
  const auto ids = encode_tokens(expr.tokens, ck.model.vocab);
  const ExpressionEncoding enc = encode_expression(vars, ids);

  fs::create_directories(config.out_dir);
  const fs::path path = config.out_dir / kAttentionFile;
  std::ofstream file(path);
  file << "# expression " << *expression << ": " << fmt::format("{}", fmt::join(expr.tokens, " "))
       << " (target " << expr.target << ")\n";
  file << "candidate\tmodule\tquantity\tvalues\n";
  auto row = [&file](const std::string& candidate, const std::string& module,
                     const std::string& what, const Tensor& t) {
    file << candidate << '\t' << module << '\t' << what << '\t';
    join_values(file, t);
    file << '\n';
  };
  row("-", "-", "module_weights", enc.module_weights.value());
  for (Module m : kModules) {
    row("-", std::string(module_name(m)), "word_attention", enc.word_attention[index_of(m)].value());
  }

  out << fmt::format("expression {}: \"{}\" target {}\n", *expression,
                     fmt::join(expr.tokens, " "), expr.target);
  std::vector<double> totals;
  for (std::size_t c = 0; c < regions.size(); ++c) {
    const ModuleVisuals vis = assemble_module_visuals(vars, regions[c]);
    const OverallScore score = overall_score(vars, vis, enc, flags);
    const std::string cand = std::to_string(c);
    for (Module m : kModules) {
      const ModuleScore& ms = score.modules[index_of(m)];
      const std::string name(module_name(m));
      if (!ms.active) continue;
      if (ms.language_weights.valid()) row(cand, name, "language_weights", ms.language_weights.value());
      if (ms.visual_attention.valid()) row(cand, name, "visual_attention", ms.visual_attention.value());
      row(cand, name, "combined", ms.combined.value());
    }
    row(cand, "-", "total", score.total.value());
    totals.push_back(score.total.item());
    out << fmt::format("  candidate {}  total {:+.4f}{}\n", c, totals.back(),
                       c == expr.target ? "  <- target" : "");
  }
  const std::size_t predicted = argmax_lowest(totals);
  out << fmt::format("RESULT cmd=dump-attn status=ok expression={} predicted={} target={} file={}\n",
                     *expression, predicted, expr.target, path.string());
  return kExitOk;
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const NonFiniteError*>(&error) != nullptr) return kExitNonFinite;
  if (dynamic_cast<const DatasetError*>(&error) != nullptr) return kExitData;
  if (dynamic_cast<const ChecksumError*>(&error) != nullptr) return kExitData;
  if (dynamic_cast<const ConfigError*>(&error) != nullptr) return kExitConfig;
  return kExitInternal;
}

}  // namespace mutatt::cli
