#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "mutatt/dataset.hpp"
#include "mutatt/graph.hpp"
#include "mutatt/matching.hpp"
#include "mutatt/model.hpp"

namespace mutatt {

struct TrainConfig {
  std::size_t batch_size = 15;
  double learning_rate = 4e-4;
  double lr_decay_factor = 10.0;
  std::size_t lr_decay_every = 8000;
  double margin = 0.1;
  std::size_t max_iterations = 2000;
  std::uint64_t seed = 1;
  AblationFlags ablation;
  double grad_clip = 10.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Score the instances of a batch on OpenMP threads. Per-instance gradient
  // buffers are reduced in batch order, so results match the serial path.
  bool parallel = false;

  void validate() const;
};

// lr / factor^floor(step / every)
double learning_rate_at(const TrainConfig& config, std::size_t step);

// [k - pos + neg_expr]_+ + [k - pos + neg_region]_+
double ranking_loss(double pos, double neg_expr, double neg_region, double margin);
// Graph version. A missing region negative contributes no term.
Var ranking_loss(Var pos, Var neg_expr, std::optional<Var> neg_region, double margin);

struct AdamState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ModelParams& params);
};

// One Adam update with bias correction.
void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state,
                 const TrainConfig& config, double learning_rate);

// Scales `grads` in place so the global L2 norm is at most `max_norm`;
// returns the norm before scaling.
double clip_gradients(ModelParams& grads, double max_norm);

// Indices into a pool of `pool_size` instances for a given step: epochs of a
// seeded permutation, so any step's batch is reproducible without history.
std::vector<std::size_t> batch_for_step(std::size_t pool_size, std::size_t batch_size,
                                        std::uint64_t seed, std::size_t step);

// Generator for the sampling decisions of one step.
std::mt19937_64 step_rng(std::uint64_t seed, std::size_t step);

struct NegativeSample {
  std::size_t expression = 0;           // E_j, from another batch instance
  std::optional<std::size_t> region;    // R_j, a non-target region of the same image
};

// Negatives for batch[position]; `batch` holds expression indices.
NegativeSample sample_negatives(const Dataset& dataset, std::span<const std::size_t> batch,
                                std::size_t position, std::mt19937_64& rng);

struct StepStats {
  std::size_t step = 0;
  double learning_rate = 0.0;
  double loss = 0.0;
  std::size_t active_hinges = 0;
  std::size_t total_hinges = 0;
  std::size_t skipped_region_negatives = 0;
  double grad_norm = 0.0;

  double active_fraction() const {
    return total_hinges == 0 ? 0.0
                             : static_cast<double>(active_hinges) /
                                   static_cast<double>(total_hinges);
  }
};

// Forward and backward of the ranking loss for one batch with fixed
// negatives. Gradients are added into `grads` when non-null.
StepStats batch_loss(const Dataset& dataset, const FeatureIndex& features,
                     const Model& model, std::span<const std::size_t> batch,
                     std::span<const NegativeSample> negatives,
                     const TrainConfig& config, ModelParams* grads);

// Full iteration: sample negatives, loss, backward, clip, Adam.
StepStats train_step(const Dataset& dataset, const FeatureIndex& features, Model& model,
                     AdamState& optimizer, const TrainConfig& config,
                     std::span<const std::size_t> batch, std::mt19937_64& rng);

// Drives train_step over the training split. The step counter lives in the
// optimizer state, so a restored (model, optimizer) pair continues the
// original trajectory exactly.
class Trainer {
 public:
  Trainer(const Dataset& dataset, Model& model, AdamState& optimizer, TrainConfig config);

  StepStats step();
  std::size_t current_step() const { return static_cast<std::size_t>(optimizer_.step); }
  const TrainConfig& config() const { return config_; }

 private:
  const Dataset& dataset_;
  FeatureIndex features_;
  Model& model_;
  AdamState& optimizer_;
  TrainConfig config_;
  std::vector<std::size_t> pool_;
};

}  // namespace mutatt
