#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "mutatt/graph.hpp"
#include "mutatt/tensor.hpp"

namespace mutatt {

// The three matching channels, in the fixed order used by module weights.
enum class Module : std::size_t { kSubject = 0, kLocation = 1, kRelationship = 2 };

inline constexpr std::array<Module, 3> kModules = {
    Module::kSubject, Module::kLocation, Module::kRelationship};

std::string_view module_name(Module m);
inline std::size_t index_of(Module m) { return static_cast<std::size_t>(m); }

// Per-module slot counts of the visual sets: 7x7 subject grid, a single
// location vector, up to five context objects.
inline constexpr std::array<std::size_t, 3> kModuleSlots = {49, 1, 5};
inline constexpr std::size_t kGridCells = 49;
inline constexpr std::size_t kMaxContext = 5;
inline constexpr std::size_t kLocationDim = 5;
// l_i plus the five flattened offset rows.
inline constexpr std::size_t kLocationInputDim = kLocationDim + kMaxContext * kLocationDim;

struct ModelDims {
  std::size_t vocab_size = 2;
  std::size_t embed_dim = 32;   // d
  std::size_t hidden_dim = 32;  // d_h
  std::size_t visual_dim = 32;  // d_v

  bool operator==(const ModelDims&) const = default;
};

// Visual attention weights: W1 maps [v_n ; q] (2d) to d_h, W2 maps d_h to a logit.
struct AttentionParams {
  Tensor w1;  // [2d x d_h]
  Tensor b;   // [d_h]
  Tensor w2;  // [d_h x 1]

  bool operator==(const AttentionParams&) const = default;
};

// Two fully connected layers with a ReLU between, [q ; v] -> scalar.
struct MlpParams {
  Tensor w1;  // [2d x d_h]
  Tensor b1;  // [d_h]
  Tensor w2;  // [d_h x 1]
  Tensor b2;  // [1]

  bool operator==(const MlpParams&) const = default;
};

struct ProjectionParams {
  Tensor w;  // [in x d]
  Tensor b;  // [d]

  bool operator==(const ProjectionParams&) const = default;
};

// Every trainable tensor of the model. Also used, zero-filled, as the
// gradient accumulator and the Adam moment buffers.
//
// The location module has no attention parameters: it holds a single visual
// slot, and softmax over one slot is constant.
struct ModelParams {
  ModelDims dims;

  Tensor embedding;                  // [V x d]; row 0 (padding) stays zero
  std::array<Tensor, 3> word_query;  // [2d] per module, over [e_t ; pos_t]
  Tensor module_weight_w;            // [3d x 3] over [first ; last ; mean]
  Tensor module_weight_b;            // [3]

  ProjectionParams subject_proj;       // d_v -> d
  ProjectionParams location_proj;      // 30 -> d
  ProjectionParams relationship_proj;  // d_v + 5 -> d

  AttentionParams subject_attention;
  AttentionParams relationship_attention;
  std::array<MlpParams, 3> mlp;

  // Zero-valued parameters with the right shapes.
  static ModelParams zeros(const ModelDims& dims);
  // Uniform(+-1/sqrt(fan_in)) linear maps, Normal(0, 0.01) embeddings.
  static ModelParams initialize(const ModelDims& dims, std::uint64_t seed);

  ModelParams zeros_like() const { return zeros(dims); }

  // Tensors in a stable order with stable names.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;

  const AttentionParams& attention(Module m) const;

  void fill(double value);
  std::size_t parameter_count() const;

  bool operator==(const ModelParams&) const = default;
};

// Parameters lifted into a graph for one forward pass. With a gradient sink,
// backward adds into the matching tensors of `grads`; without one, the
// parameters are constants.
struct ModelVars {
  Graph* graph = nullptr;
  ModelDims dims;
  Var embedding;
  std::array<Var, 3> word_query;
  Var module_weight_w;
  Var module_weight_b;
  std::array<Var, 3> proj_w;
  std::array<Var, 3> proj_b;
  struct Attention {
    Var w1, b, w2;
  };
  std::array<Attention, 3> attention;  // loc entry left invalid
  struct Mlp {
    Var w1, b1, w2, b2;
  };
  std::array<Mlp, 3> mlp;
};

ModelVars bind_params(Graph& graph, const ModelParams& params,
                      ModelParams* grads = nullptr);

}  // namespace mutatt
