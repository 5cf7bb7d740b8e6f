#include "verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "mutatt/error.hpp"
#include "mutatt/evaluation.hpp"
#include "mutatt/language.hpp"
#include "mutatt/synth.hpp"
#include "mutatt/training.hpp"
#include "reference.hpp"

namespace mutatt::verify {

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, scale);
  for (double& x : t.storage()) x = normal(rng);
  return t;
}

Box random_box(std::mt19937_64& rng, ImageSize image) {
  std::uniform_real_distribution<double> ux(0.0, image.width * 0.8);
  std::uniform_real_distribution<double> uy(0.0, image.height * 0.8);
  std::uniform_real_distribution<double> size(10.0, 120.0);
  Box b;
  b.x_tl = ux(rng);
  b.y_tl = uy(rng);
  b.x_br = b.x_tl + size(rng);
  b.y_br = b.y_tl + size(rng);
  return b;
}

RegionFeatures random_region(std::mt19937_64& rng, const ModelDims& dims, bool with_context) {
  RegionFeatures r;
  r.image = {640.0, 480.0};
  r.box = random_box(rng, r.image);
  r.subject_grid = random_tensor(rng, {kGridCells, dims.visual_dim});
  std::uniform_int_distribution<std::size_t> count(with_context ? 1 : 0, kMaxContext);
  const std::size_t n = count(rng);
  for (std::size_t i = 0; i < n; ++i) {
    r.context.push_back({random_tensor(rng, {dims.visual_dim}), random_box(rng, r.image), 0});
  }
  return r;
}

std::vector<std::int64_t> random_tokens(std::mt19937_64& rng, std::size_t vocab,
                                        std::size_t max_tokens) {
  std::uniform_int_distribution<std::size_t> length(1, max_tokens);
  std::uniform_int_distribution<std::int64_t> id(1, static_cast<std::int64_t>(vocab) - 1);
  std::vector<std::int64_t> ids(length(rng));
  for (auto& t : ids) t = id(rng);
  // Occasionally pad the tail to exercise masking.
  if (ids.size() > 1 && std::bernoulli_distribution(0.3)(rng)) ids.back() = 0;
  return ids;
}

// Collapses a tensor-valued op output to a scalar with fixed random weights,
// so every output element contributes a distinct gradient.
Var project(Graph& g, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Var w = g.constant(random_tensor(rng, out.shape()));
  return sum(mul(out, w));
}

struct OpCase {
  std::string name;
  std::vector<Tensor> inputs;
  GraphFunction build;
};

std::vector<OpCase> op_cases(std::mt19937_64& rng) {
  auto r = [&rng](Shape s) { return random_tensor(rng, std::move(s)); };
  // ReLU inputs kept away from the kink.
  Tensor away = r({4, 3});
  for (double& x : away.storage()) x += x >= 0.0 ? 0.1 : -0.1;
  const Mask mask = {1, 0, 1, 1};
  std::vector<OpCase> cases;
  cases.push_back({"matmul", {r({3, 4}), r({4, 2})},
                   [](Graph& g, const std::vector<Var>& v) { return project(g, matmul(v[0], v[1]), 1); }});
  cases.push_back({"matmul_vector", {r({4}), r({4, 3})},
                   [](Graph& g, const std::vector<Var>& v) { return project(g, matmul(v[0], v[1]), 2); }});
  cases.push_back({"add_sub_mul", {r({3, 2}), r({3, 2})},
                   [](Graph& g, const std::vector<Var>& v) {
                     return project(g, mul(add(v[0], v[1]), sub(v[0], scale(v[1], 0.5))), 3);
                   }});
  cases.push_back({"add_row", {r({4, 3}), r({3})},
                   [](Graph& g, const std::vector<Var>& v) { return project(g, add_row(v[0], v[1]), 4); }});
  cases.push_back({"tanh", {r({4, 3})},
                   [](Graph& g, const std::vector<Var>& v) { return project(g, tanh(v[0]), 5); }});
  cases.push_back({"relu", {away},
                   [](Graph& g, const std::vector<Var>& v) { return project(g, relu(v[0]), 6); }});
  cases.push_back({"dot", {r({5}), r({5})},
                   [](Graph&, const std::vector<Var>& v) { return dot(v[0], v[1]); }});
  cases.push_back({"softmax", {r({5})},
                   [](Graph& g, const std::vector<Var>& v) { return project(g, softmax(v[0]), 7); }});
  cases.push_back({"softmax_masked", {r({4})},
                   [mask](Graph& g, const std::vector<Var>& v) {
                     return project(g, softmax(v[0], mask), 8);
                   }});
  cases.push_back({"cosine", {r({6}), r({6})},
                   [](Graph&, const std::vector<Var>& v) { return cosine_similarity(v[0], v[1]); }});
  cases.push_back({"cosine_rows", {r({4, 6}), r({6})},
                   [](Graph& g, const std::vector<Var>& v) { return project(g, cosine_rows(v[0], v[1]), 9); }});
  cases.push_back({"gather_rows", {r({5, 3})},
                   [](Graph& g, const std::vector<Var>& v) {
                     const std::int64_t ids[] = {2, 0, 4, 2};
                     return project(g, gather_rows(v[0], ids), 10);
                   }});
  cases.push_back({"masked_mean_rows", {r({4, 3})},
                   [mask](Graph& g, const std::vector<Var>& v) {
                     return project(g, masked_mean_rows(v[0], mask), 11);
                   }});
  cases.push_back({"weighted_sum_rows", {r({4}), r({4, 3})},
                   [](Graph& g, const std::vector<Var>& v) {
                     return project(g, weighted_sum_rows(v[0], v[1]), 12);
                   }});
  cases.push_back({"concat_slice_reshape", {r({3}), r({2})},
                   [](Graph& g, const std::vector<Var>& v) {
                     Var joined = concat({v[0], v[1]});
                     return project(g, reshape(slice(joined, 1, 4), {2, 2}), 13);
                   }});
  cases.push_back({"concat_cols_repeat", {r({3, 2}), r({2})},
                   [](Graph& g, const std::vector<Var>& v) {
                     return project(g, concat_cols(v[0], repeat_rows(v[1], 3)), 14);
                   }});
  return cases;
}

// Inflates the largest gradient element by 10%.
void corrupt(ModelParams& grads) {
  double* largest = nullptr;
  for (auto& [name, t] : grads.named()) {
    for (double& x : t->storage()) {
      if (largest == nullptr || std::abs(x) > std::abs(*largest)) largest = &x;
    }
  }
  if (largest != nullptr) *largest *= 1.1;
}

std::string worst(const GradCheckReport& report) {
  const TensorCheck* w = nullptr;
  for (const auto& t : report.tensors) {
    if (w == nullptr || t.relative_error > w->relative_error) w = &t;
  }
  if (w == nullptr) return "no tensors";
  return fmt::format("{} rel {:.2e} (worst element [{}]: analytic {:.6e} numeric {:.6e})",
                     w->name, w->relative_error, w->worst_index, w->worst_analytic,
                     w->worst_numeric);
}

double sum_of(const Tensor& t) {
  double s = 0.0;
  for (double x : t.data()) s += x;
  return s;
}

double sum_masked(const Tensor& t, const Mask& mask) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (mask[i]) s += t[i];
  }
  return s;
}

}  // namespace

ModelDims small_dims() { return ModelDims{12, 16, 16, 8}; }

RandomInstance random_instance(std::mt19937_64& rng, const ModelDims& dims,
                               std::size_t max_tokens, bool with_context) {
  RandomInstance inst;
  inst.params = ModelParams::initialize(dims, rng());
  // Larger embeddings than the training init so every path carries signal.
  std::normal_distribution<double> normal(0.0, 0.5);
  for (std::size_t i = 1; i < dims.vocab_size; ++i) {
    for (std::size_t k = 0; k < dims.embed_dim; ++k) inst.params.embedding.at(i, k) = normal(rng);
  }
  inst.target = random_region(rng, dims, with_context);
  inst.distractor = random_region(rng, dims, with_context);
  inst.tokens = random_tokens(rng, dims.vocab_size, max_tokens);
  inst.other_tokens = random_tokens(rng, dims.vocab_size, max_tokens);
  static constexpr Guidance kModes[] = {Guidance::kNone, Guidance::kVisualToLanguage,
                                        Guidance::kMutual};
  std::uniform_int_distribution<int> mode(0, 2);
  for (auto& m : inst.flags.mode) m = kModes[mode(rng)];
  return inst;
}

double instance_ranking_loss(const RandomInstance& inst, const ModelParams& params,
                             double margin, ModelParams* grads) {
  Graph g;
  const ModelVars vars = bind_params(g, params, grads);
  const ExpressionEncoding enc = encode_expression(vars, inst.tokens);
  const ExpressionEncoding other = encode_expression(vars, inst.other_tokens);
  const ModuleVisuals target = assemble_module_visuals(vars, inst.target);
  const ModuleVisuals distractor = assemble_module_visuals(vars, inst.distractor);
  Var pos = overall_score(vars, target, enc, inst.flags).total;
  Var neg_expr = overall_score(vars, target, other, inst.flags).total;
  Var neg_region = overall_score(vars, distractor, enc, inst.flags).total;
  Var loss = ranking_loss(pos, neg_expr, neg_region, margin);
  if (grads != nullptr) g.backward(loss);
  return loss.item();
}

CheckResult check_op_gradients(const VerifyOptions& options) {
  CheckResult result{"op gradients", true, ""};
  std::mt19937_64 rng(options.seed);
  std::vector<std::string> failures;
  double worst_error = 0.0;
  for (OpCase& c : op_cases(rng)) {
    GradCheckReport report = mutatt::check_op_gradients(c.build, c.inputs);
    if (options.inject_gradient_fault && c.name == "matmul") {
      // A term whose value depends on the inputs but which the tape treats as
      // a constant, so the analytic gradient misses it.
      GraphFunction wrong = [&c](Graph& g, const std::vector<Var>& v) {
        Var out = c.build(g, v);
        return add(out, g.constant(Tensor::scalar(0.01 * out.item())));
      };
      report = mutatt::check_op_gradients(wrong, c.inputs);
    }
    worst_error = std::max(worst_error, report.max_relative_error());
    if (!report.passed(options.gradient_tolerance)) {
      failures.push_back(c.name + ": " + worst(report));
    }
  }
  result.passed = failures.empty();
  result.detail = result.passed ? fmt::format("16 ops, max relative error {:.2e}", worst_error)
                                : fmt::format("{}", fmt::join(failures, "; "));
  return result;
}

CheckResult check_model_gradients(const VerifyOptions& options) {
  CheckResult result{"model gradients", true, ""};
  std::mt19937_64 rng(options.seed + 101);
  double worst_error = 0.0;
  std::string worst_detail;
  for (std::size_t i = 0; i < options.gradient_instances; ++i) {
    RandomInstance inst = random_instance(rng, small_dims());
    // Mutual guidance everywhere so every parameter is on the path.
    inst.flags = AblationFlags::uniform(Guidance::kMutual);
    // A margin wide enough that both hinges are active.
    const double margin = 10.0;
    ModelParams grads = inst.params.zeros_like();
    instance_ranking_loss(inst, inst.params, margin, &grads);
    if (options.inject_gradient_fault) corrupt(grads);
    ModelParams probe = inst.params;
    const GradCheckReport report = finite_difference_check(
        [&inst, margin](const ModelParams& p) { return instance_ranking_loss(inst, p, margin, nullptr); },
        probe, grads);
    if (report.max_relative_error() >= worst_error) {
      worst_error = report.max_relative_error();
      worst_detail = worst(report);
    }
  }
  result.passed = worst_error < options.gradient_tolerance;
  result.detail = fmt::format("{} instances, worst {}", options.gradient_instances, worst_detail);
  return result;
}

CheckResult check_oracle_equivalence(const VerifyOptions& options) {
  CheckResult result{"oracle equivalence", true, ""};
  std::mt19937_64 rng(options.seed + 202);
  double worst_diff = 0.0;
  for (std::size_t i = 0; i < options.oracle_instances; ++i) {
    const RandomInstance inst = random_instance(rng, small_dims(), 5, i % 4 != 0);
    const double pipeline =
        score_candidates(inst.params, std::span(&inst.target, 1), inst.tokens, inst.flags)[0];
    const double oracle = reference::score(inst.params, inst.target, inst.tokens, inst.flags).total;
    worst_diff = std::max(worst_diff, std::abs(pipeline - oracle));
  }
  result.passed = worst_diff <= options.oracle_tolerance;
  result.detail = fmt::format("{} instances, max |diff| {:.2e}", options.oracle_instances, worst_diff);
  return result;
}

CheckResult check_normalization(const VerifyOptions& options) {
  CheckResult result{"normalization", true, ""};
  std::mt19937_64 rng(options.seed + 303);
  const double tol = options.normalization_tolerance;
  std::size_t violations = 0;
  std::size_t checks = 0;
  auto expect = [&](bool ok) {
    ++checks;
    if (!ok) ++violations;
  };
  std::uniform_real_distribution<double> spread(0.1, 50.0);
  for (std::size_t trial = 0; trial < options.normalization_trials; ++trial) {
    // Bare softmax with a wide logit range, with and without a mask.
    Graph g;
    const std::size_t n = 1 + trial % 9;
    Tensor logits = random_tensor(rng, {n}, spread(rng));
    Mask mask(n, 1);
    for (std::size_t k = 1; k < n; ++k) mask[k] = std::bernoulli_distribution(0.7)(rng);
    const Tensor plain = softmax(g.constant(logits)).value();
    const Tensor masked = softmax(g.constant(logits), mask).value();
    expect(std::abs(sum_of(plain) - 1.0) <= tol);
    expect(std::abs(sum_of(masked) - 1.0) <= tol);
    for (std::size_t k = 0; k < n; ++k) expect(mask[k] || masked[k] == 0.0);

    // Cosine of arbitrary vectors, including scaled copies.
    Tensor a = random_tensor(rng, {6}, spread(rng));
    Tensor b = random_tensor(rng, {6}, spread(rng));
    const double c = cosine_similarity(g.constant(a), g.constant(b)).item();
    expect(c >= -1.0 && c <= 1.0);
    const double self = cosine_similarity(g.constant(a), g.constant(a)).item();
    expect(self >= -1.0 && self <= 1.0 && std::abs(self - 1.0) <= tol);

    // Attention distributions of a full forward pass.
    const RandomInstance inst = random_instance(rng, small_dims(), 5, trial % 2 == 0);
    Graph fg;
    const ModelVars vars = bind_params(fg, inst.params);
    const ExpressionEncoding enc = encode_expression(vars, inst.tokens);
    const ModuleVisuals vis = assemble_module_visuals(vars, inst.target);
    const OverallScore score =
        overall_score(vars, vis, enc, AblationFlags::uniform(Guidance::kMutual));
    expect(std::abs(sum_of(score.module_weights.value()) - 1.0) <= tol);
    for (Module m : kModules) {
      const std::size_t i = index_of(m);
      expect(std::abs(sum_masked(enc.word_attention[i].value(), enc.mask) - 1.0) <= tol);
      const ModuleScore& ms = score.modules[i];
      if (!ms.active) continue;
      expect(std::abs(sum_masked(ms.language_weights.value(), enc.mask) - 1.0) <= tol);
      expect(std::abs(sum_masked(ms.visual_attention.value(), vis.mask[i]) - 1.0) <= tol);
      expect(ms.vl_score.item() >= -1.0 && ms.vl_score.item() <= 1.0);
      for (double s : ms.word_similarities.value().data()) expect(s >= -1.0 && s <= 1.0);
    }
  }
  result.passed = violations == 0;
  result.detail = fmt::format("{} trials, {} checks, {} violations", options.normalization_trials,
                              checks, violations);
  return result;
}

CheckResult check_training_determinism(const VerifyOptions& options) {
  CheckResult result{"training determinism", true, ""};
  SynthSpec spec;
  spec.num_images = 30;
  spec.seed = options.seed;
  const Dataset data = generate_synthetic(spec).dataset;
  auto run = [&data, &options](bool parallel) {
    TrainConfig config;
    config.seed = options.seed;
    config.parallel = parallel;
    Model model = Model::create(data.vocab, ModelDims{0, 16, 16, data.visual_dim}, options.seed);
    AdamState optimizer = AdamState::zeros_like(model.params);
    Trainer trainer(data, model, optimizer, config);
    for (int i = 0; i < 10; ++i) trainer.step();
    return model.params;
  };
  auto same = [](const ModelParams& a, const ModelParams& b) {
    const auto na = a.named();
    const auto nb = b.named();
    for (std::size_t i = 0; i < na.size(); ++i) {
      const auto da = na[i].second->data();
      const auto db = nb[i].second->data();
      if (std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) != 0) return false;
    }
    return true;
  };
  const ModelParams first = run(false);
  const bool repeat = same(first, run(false));
  const bool threaded = same(first, run(true));
  result.passed = repeat && threaded;
  result.detail = fmt::format("repeat run {}, threaded run {}", repeat ? "identical" : "DIFFERS",
                              threaded ? "identical" : "DIFFERS");
  return result;
}

std::vector<CheckResult> run_all(const VerifyOptions& options) {
  return {check_op_gradients(options), check_model_gradients(options),
          check_oracle_equivalence(options), check_normalization(options),
          check_training_determinism(options)};
}

}  // namespace mutatt::verify
