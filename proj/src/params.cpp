#include "mutatt/params.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "mutatt/error.hpp"

namespace mutatt {

std::string_view module_name(Module m) {
  switch (m) {
    case Module::kSubject:
      return "subj";
    case Module::kLocation:
      return "loc";
    case Module::kRelationship:
      return "rel";
  }
  return "?";
}

namespace {

std::size_t input_dim(const ModelDims& dims, Module m) {
  switch (m) {
    case Module::kSubject:
      return dims.visual_dim;
    case Module::kLocation:
      return kLocationInputDim;
    case Module::kRelationship:
      return dims.visual_dim + kLocationDim;
  }
  return 0;
}

AttentionParams zero_attention(const ModelDims& dims) {
  const std::size_t d = dims.embed_dim, h = dims.hidden_dim;
  return {Tensor({2 * d, h}), Tensor({h}), Tensor({h, 1})};
}

MlpParams zero_mlp(const ModelDims& dims) {
  const std::size_t d = dims.embed_dim, h = dims.hidden_dim;
  return {Tensor({2 * d, h}), Tensor({h}), Tensor({h, 1}), Tensor({1})};
}

ProjectionParams zero_projection(const ModelDims& dims, Module m) {
  return {Tensor({input_dim(dims, m), dims.embed_dim}), Tensor({dims.embed_dim})};
}

}  // namespace

ModelParams ModelParams::zeros(const ModelDims& dims) {
  if (dims.vocab_size < 2 || dims.embed_dim == 0 || dims.hidden_dim == 0 ||
      dims.visual_dim == 0) {
    throw ConfigError("model dimensions must be positive and vocab_size >= 2");
  }
  const std::size_t d = dims.embed_dim;
  ModelParams p;
  p.dims = dims;
  p.embedding = Tensor({dims.vocab_size, d});
  for (auto& q : p.word_query) q = Tensor({2 * d});
  p.module_weight_w = Tensor({3 * d, 3});
  p.module_weight_b = Tensor({3});
  p.subject_proj = zero_projection(dims, Module::kSubject);
  p.location_proj = zero_projection(dims, Module::kLocation);
  p.relationship_proj = zero_projection(dims, Module::kRelationship);
  p.subject_attention = zero_attention(dims);
  p.relationship_attention = zero_attention(dims);
  for (auto& m : p.mlp) m = zero_mlp(dims);
  return p;
}

ModelParams ModelParams::initialize(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p = zeros(dims);
  std::mt19937_64 rng(seed);

  auto uniform_fill = [&rng](Tensor& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : t.storage()) x = dist(rng);
  };

  std::normal_distribution<double> normal(0.0, 0.01);
  for (std::size_t i = p.dims.embed_dim; i < p.embedding.numel(); ++i) {
    p.embedding[i] = normal(rng);
  }
  const std::size_t d = dims.embed_dim;
  for (auto& q : p.word_query) uniform_fill(q, 2 * d);
  uniform_fill(p.module_weight_w, 3 * d);
  uniform_fill(p.module_weight_b, 3 * d);
  for (ProjectionParams* proj :
       {&p.subject_proj, &p.location_proj, &p.relationship_proj}) {
    const std::size_t fan_in = proj->w.shape()[0];
    uniform_fill(proj->w, fan_in);
    uniform_fill(proj->b, fan_in);
  }
  for (AttentionParams* att : {&p.subject_attention, &p.relationship_attention}) {
    uniform_fill(att->w1, 2 * d);
    uniform_fill(att->b, 2 * d);
    uniform_fill(att->w2, dims.hidden_dim);
  }
  for (auto& m : p.mlp) {
    uniform_fill(m.w1, 2 * d);
    uniform_fill(m.b1, 2 * d);
    uniform_fill(m.w2, dims.hidden_dim);
    uniform_fill(m.b2, dims.hidden_dim);
  }
  return p;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.emplace_back("lang.embedding", &embedding);
  for (Module m : kModules) {
    out.emplace_back("lang.query." + std::string(module_name(m)),
                     &word_query[index_of(m)]);
  }
  out.emplace_back("lang.module_weights.w", &module_weight_w);
  out.emplace_back("lang.module_weights.b", &module_weight_b);
  out.emplace_back("vis.subj.w", &subject_proj.w);
  out.emplace_back("vis.subj.b", &subject_proj.b);
  out.emplace_back("vis.loc.w", &location_proj.w);
  out.emplace_back("vis.loc.b", &location_proj.b);
  out.emplace_back("vis.rel.w", &relationship_proj.w);
  out.emplace_back("vis.rel.b", &relationship_proj.b);
  for (Module m : {Module::kSubject, Module::kRelationship}) {
    const std::string prefix = "match." + std::string(module_name(m)) + ".att.";
    const AttentionParams& att = attention(m);
    out.emplace_back(prefix + "w1", &att.w1);
    out.emplace_back(prefix + "b", &att.b);
    out.emplace_back(prefix + "w2", &att.w2);
  }
  for (Module m : kModules) {
    const std::string prefix = "match." + std::string(module_name(m)) + ".mlp.";
    const MlpParams& mp = mlp[index_of(m)];
    out.emplace_back(prefix + "w1", &mp.w1);
    out.emplace_back(prefix + "b1", &mp.b1);
    out.emplace_back(prefix + "w2", &mp.w2);
    out.emplace_back(prefix + "b2", &mp.b2);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, ptr] : std::as_const(*this).named()) {
    out.emplace_back(name, const_cast<Tensor*>(ptr));
  }
  return out;
}

const AttentionParams& ModelParams::attention(Module m) const {
  switch (m) {
    case Module::kSubject:
      return subject_attention;
    case Module::kRelationship:
      return relationship_attention;
    case Module::kLocation:
      break;
  }
  throw ConfigError("the location module has no attention parameters");
}

void ModelParams::fill(double value) {
  for (auto& [name, t] : named()) t->fill(value);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->numel();
  return n;
}

ModelVars bind_params(Graph& graph, const ModelParams& params, ModelParams* grads) {
  auto bind = [&graph, grads](const Tensor& value, Tensor* sink) {
    return grads != nullptr ? graph.param(value, sink) : graph.constant(value);
  };
  ModelParams* g = grads;
  ModelVars v;
  v.graph = &graph;
  v.dims = params.dims;
  v.embedding = bind(params.embedding, g ? &g->embedding : nullptr);
  for (std::size_t i = 0; i < 3; ++i) {
    v.word_query[i] = bind(params.word_query[i], g ? &g->word_query[i] : nullptr);
  }
  v.module_weight_w = bind(params.module_weight_w, g ? &g->module_weight_w : nullptr);
  v.module_weight_b = bind(params.module_weight_b, g ? &g->module_weight_b : nullptr);

  const std::array<const ProjectionParams*, 3> projections = {
      &params.subject_proj, &params.location_proj, &params.relationship_proj};
  const std::array<ProjectionParams*, 3> projection_grads = {
      g ? &g->subject_proj : nullptr, g ? &g->location_proj : nullptr,
      g ? &g->relationship_proj : nullptr};
  for (std::size_t i = 0; i < 3; ++i) {
    v.proj_w[i] = bind(projections[i]->w, g ? &projection_grads[i]->w : nullptr);
    v.proj_b[i] = bind(projections[i]->b, g ? &projection_grads[i]->b : nullptr);
  }

  auto bind_attention = [&](const AttentionParams& a, AttentionParams* ga) {
    return ModelVars::Attention{bind(a.w1, ga ? &ga->w1 : nullptr),
                                bind(a.b, ga ? &ga->b : nullptr),
                                bind(a.w2, ga ? &ga->w2 : nullptr)};
  };
  v.attention[index_of(Module::kSubject)] =
      bind_attention(params.subject_attention, g ? &g->subject_attention : nullptr);
  v.attention[index_of(Module::kRelationship)] = bind_attention(
      params.relationship_attention, g ? &g->relationship_attention : nullptr);

  for (std::size_t i = 0; i < 3; ++i) {
    const MlpParams& m = params.mlp[i];
    MlpParams* gm = g ? &g->mlp[i] : nullptr;
    v.mlp[i] = {bind(m.w1, gm ? &gm->w1 : nullptr), bind(m.b1, gm ? &gm->b1 : nullptr),
                bind(m.w2, gm ? &gm->w2 : nullptr), bind(m.b2, gm ? &gm->b2 : nullptr)};
  }
  return v;
}

}  // namespace mutatt
