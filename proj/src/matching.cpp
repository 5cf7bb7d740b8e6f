#include "mutatt/matching.hpp"

#include <sstream>

#include "mutatt/error.hpp"

namespace mutatt {

std::string_view guidance_name(Guidance g) {
  switch (g) {
    case Guidance::kNone:
      return "none";
    case Guidance::kVisualToLanguage:
      return "vl";
    case Guidance::kMutual:
      return "mutual";
  }
  return "?";
}

Guidance parse_guidance(std::string_view text) {
  if (text == "none") return Guidance::kNone;
  if (text == "vl" || text == "v2l" || text == "V->L") return Guidance::kVisualToLanguage;
  if (text == "mutual" || text == "V<->L") return Guidance::kMutual;
  throw ConfigError("unknown guidance mode '" + std::string(text) +
                    "' (expected none, vl or mutual)");
}

AblationFlags AblationFlags::parse(std::string_view text, const AblationFlags& base) {
  AblationFlags flags = base;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const std::string_view item = text.substr(start, end - start);
    start = end + 1;
    if (item.empty()) continue;
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("ablation entry '" + std::string(item) + "' is not MODULE=MODE");
    }
    const std::string_view name = item.substr(0, eq);
    const Guidance g = parse_guidance(item.substr(eq + 1));
    if (name == "all") {
      flags.mode = {g, g, g};
      continue;
    }
    bool found = false;
    for (Module m : kModules) {
      if (module_name(m) == name) {
        flags.mode[index_of(m)] = g;
        found = true;
      }
    }
    if (!found) throw ConfigError("unknown module '" + std::string(name) + "'");
  }
  return flags;
}

AblationFlags AblationFlags::parse(std::string_view text) {
  return parse(text, AblationFlags{});
}

std::string AblationFlags::to_string() const {
  std::ostringstream out;
  for (Module m : kModules) {
    if (m != Module::kSubject) out << ',';
    out << module_name(m) << '=' << guidance_name(mode[index_of(m)]);
  }
  return out.str();
}

Var word_visual_similarity(Var pooled_visual, Var word_embeddings) {
  return cosine_rows(word_embeddings, pooled_visual);
}

GuidedLanguage visual_guided_language(Var word_embeddings, Var similarities,
                                      Var word_attention, const Mask& mask) {
  Var weights = softmax(mul(word_attention, similarities), mask);
  return {weights, weighted_sum_rows(weights, word_embeddings)};
}

Var vl_match_score(Var pooled_visual, Var guided_language) {
  return cosine_similarity(pooled_visual, guided_language);
}

LanguageGuidedAttention language_guided_attention(const ModelVars& vars,
                                                  Var visual_features,
                                                  const Mask& mask, Var phrase,
                                                  Module module) {
  const std::size_t n = visual_features.shape()[0];
  if (mask.size() != n) throw ShapeError("attention mask does not match slot count");
  Graph& g = *vars.graph;
  if (module == Module::kLocation) {
    Tensor one({n}, 0.0);
    for (std::size_t i = 0; i < n; ++i) one[i] = mask[i] ? 1.0 : 0.0;
    if (n != 1 || !mask[0]) throw InvalidMaskError("location module needs one slot");
    return {Var{}, g.constant(std::move(one))};
  }
  const auto& att = vars.attention[index_of(module)];
  const std::size_t d = vars.dims.embed_dim;
  // W1 [v ; q] = W1_v v + W1_q q, so the phrase half is computed once.
  Var keys = matmul(visual_features, slice(att.w1, 0, d));
  Var query = add(matmul(phrase, slice(att.w1, d, d)), att.b);
  Var hidden = tanh(add_row(keys, query));
  Var logits = reshape(matmul(hidden, att.w2), {n});
  return {hidden, softmax(logits, mask)};
}

Var language_guided_visual(Var visual_features, Var attention) {
  return weighted_sum_rows(attention, visual_features);
}

Var lv_match_score(const ModelVars& vars, Var phrase, Var guided_visual,
                   Module module) {
  const auto& mlp = vars.mlp[index_of(module)];
  Var joint = concat({phrase, guided_visual});
  Var hidden = relu(add(matmul(joint, mlp.w1), mlp.b1));
  Var out = add(matmul(hidden, mlp.w2), mlp.b2);
  return reshape(out, {});
}

ModuleScore module_score(const ModelVars& vars, const ModuleVisuals& visuals,
                         const ExpressionEncoding& expression, Module module,
                         Guidance mode) {
  const std::size_t i = index_of(module);
  ModuleScore score;
  score.module = module;
  score.mode = mode;
  if (!visuals.active(module)) {
    score.active = false;
    score.combined = vars.graph->constant(Tensor::scalar(0.0));
    return score;
  }
  Var pooled = visuals.pooled[i];
  Var phrase = expression.phrase_embeddings[i];

  if (mode == Guidance::kNone) {
    score.vl_score = cosine_similarity(pooled, phrase);
    score.guided_visual = pooled;
  } else {
    score.word_similarities = word_visual_similarity(pooled, expression.word_embeddings);
    GuidedLanguage guided =
        visual_guided_language(expression.word_embeddings, score.word_similarities,
                               expression.word_attention[i], expression.mask);
    score.language_weights = guided.weights;
    score.guided_language = guided.embedding;
    score.vl_score = vl_match_score(pooled, guided.embedding);
    if (mode == Guidance::kMutual) {
      LanguageGuidedAttention att = language_guided_attention(
          vars, visuals.features[i], visuals.mask[i], phrase, module);
      score.hidden = att.hidden;
      score.visual_attention = att.attention;
      score.guided_visual = language_guided_visual(visuals.features[i], att.attention);
    } else {
      // Uniform attention over the unmasked slots is their masked mean.
      score.guided_visual = pooled;
    }
  }
  score.lv_score = lv_match_score(vars, phrase, score.guided_visual, module);
  score.combined = add(score.vl_score, score.lv_score);
  return score;
}

OverallScore overall_score(const ModelVars& vars, const ModuleVisuals& visuals,
                           const ExpressionEncoding& expression,
                           const AblationFlags& flags) {
  OverallScore out;
  std::array<Var, 3> combined;
  for (Module m : kModules) {
    out.modules[index_of(m)] = module_score(vars, visuals, expression, m, flags[m]);
    combined[index_of(m)] = reshape(out.modules[index_of(m)].combined, {1});
  }
  out.module_weights = expression.module_weights;
  out.total = dot(out.module_weights, concat(std::span<const Var>(combined)));
  return out;
}

std::vector<double> score_candidates(const ModelParams& params,
                                     std::span<const RegionFeatures> regions,
                                     std::span<const std::int64_t> token_ids,
                                     const AblationFlags& flags) {
  Graph graph;
  const ModelVars vars = bind_params(graph, params);
  const ExpressionEncoding expression = encode_expression(vars, token_ids);
  std::vector<double> totals;
  totals.reserve(regions.size());
  for (const RegionFeatures& region : regions) {
    const ModuleVisuals visuals = assemble_module_visuals(vars, region);
    totals.push_back(overall_score(vars, visuals, expression, flags).total.item());
  }
  return totals;
}

}  // namespace mutatt
