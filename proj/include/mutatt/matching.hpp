#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mutatt/graph.hpp"
#include "mutatt/language.hpp"
#include "mutatt/params.hpp"
#include "mutatt/visual.hpp"

namespace mutatt {

// Guidance arms per module:
//   kNone              cos(v, q) + MLP(q, v)
//   kVisualToLanguage  cos(v, q_bar) + MLP(q, v)          (uniform attention)
//   kMutual            cos(v, q_bar) + MLP(q, v_bar)
enum class Guidance { kNone, kVisualToLanguage, kMutual };

std::string_view guidance_name(Guidance g);
Guidance parse_guidance(std::string_view text);

struct AblationFlags {
  std::array<Guidance, 3> mode = {Guidance::kMutual, Guidance::kMutual,
                                  Guidance::kMutual};

  static AblationFlags uniform(Guidance g) { return {{g, g, g}}; }
  // "subj=mutual,loc=vl,rel=none"; modules not named keep `base`.
  static AblationFlags parse(std::string_view text, const AblationFlags& base);
  static AblationFlags parse(std::string_view text);
  std::string to_string() const;
  Guidance operator[](Module m) const { return mode[index_of(m)]; }

  bool operator==(const AblationFlags&) const = default;
};

struct GuidedLanguage {
  Var weights;    // [T], softmax(lambda . s) over nonpadding words
  Var embedding;  // [d], q_bar
};

struct LanguageGuidedAttention {
  Var hidden;     // [N x d_h], h_n (invalid for the single-slot module)
  Var attention;  // [N], a_n
};

struct ModuleScore {
  Module module = Module::kSubject;
  Guidance mode = Guidance::kMutual;
  bool active = true;
  Var vl_score;           // F(v, q_bar)
  Var lv_score;           // F(q, v_bar)
  Var combined;           // vl + lv
  Var word_similarities;  // s_t
  Var language_weights;   // softmax(lambda . s)
  Var guided_language;    // q_bar
  Var hidden;             // h_n
  Var visual_attention;   // a_n
  Var guided_visual;      // v_bar
};

struct OverallScore {
  std::array<ModuleScore, 3> modules;
  Var module_weights;  // omega
  Var total;           // sum_m omega_m * combined_m
};

// s_t = cos(v, e_t) for every word.
Var word_visual_similarity(Var pooled_visual, Var word_embeddings);

// q_bar = sum_t softmax(lambda . s)_t e_t, padding excluded from the softmax.
GuidedLanguage visual_guided_language(Var word_embeddings, Var similarities,
                                      Var word_attention, const Mask& mask);

Var vl_match_score(Var pooled_visual, Var guided_language);

// h_n = tanh(W1 [v_n ; q] + b), a = softmax_n(W2 h_n) over unmasked slots.
LanguageGuidedAttention language_guided_attention(const ModelVars& vars,
                                                  Var visual_features,
                                                  const Mask& mask, Var phrase,
                                                  Module module);

// v_bar = sum_n a_n v_n
Var language_guided_visual(Var visual_features, Var attention);

// W2 relu(W1 [q ; v_bar] + b1) + b2, rank-0.
Var lv_match_score(const ModelVars& vars, Var phrase, Var guided_visual,
                   Module module);

ModuleScore module_score(const ModelVars& vars, const ModuleVisuals& visuals,
                         const ExpressionEncoding& expression, Module module,
                         Guidance mode);

OverallScore overall_score(const ModelVars& vars, const ModuleVisuals& visuals,
                           const ExpressionEncoding& expression,
                           const AblationFlags& flags);

// Totals for every candidate against one expression, without gradients.
std::vector<double> score_candidates(const ModelParams& params,
                                     std::span<const RegionFeatures> regions,
                                     std::span<const std::int64_t> token_ids,
                                     const AblationFlags& flags);

}  // namespace mutatt
