#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mutatt/gradcheck.hpp"
#include "mutatt/matching.hpp"
#include "mutatt/params.hpp"
#include "mutatt/visual.hpp"

namespace mutatt::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// A randomly drawn scoring problem: parameters, two candidate regions of the
// same image and two expressions (the second serves as a negative).
struct RandomInstance {
  ModelParams params;
  RegionFeatures target;
  RegionFeatures distractor;
  std::vector<std::int64_t> tokens;
  std::vector<std::int64_t> other_tokens;
  AblationFlags flags;
};

ModelDims small_dims();

// Expressions of 1..max_tokens ids, sometimes padded; regions with 0..5
// context objects unless `with_context` forces at least one.
RandomInstance random_instance(std::mt19937_64& rng, const ModelDims& dims,
                               std::size_t max_tokens = 5, bool with_context = true);

// Ranking loss of an instance computed through the graph. With `grads`,
// back-propagates into it.
double instance_ranking_loss(const RandomInstance& inst, const ModelParams& params,
                             double margin, ModelParams* grads);

struct VerifyOptions {
  std::uint64_t seed = 1;
  std::size_t gradient_instances = 2;
  std::size_t oracle_instances = 100;
  std::size_t normalization_trials = 1000;
  double gradient_tolerance = 1e-4;
  double oracle_tolerance = 1e-10;
  double normalization_tolerance = 1e-12;
  // Corrupts one analytic gradient before comparison; the gradient checks
  // must then fail.
  bool inject_gradient_fault = false;
};

CheckResult check_op_gradients(const VerifyOptions& options);
CheckResult check_model_gradients(const VerifyOptions& options);
CheckResult check_oracle_equivalence(const VerifyOptions& options);
CheckResult check_normalization(const VerifyOptions& options);
CheckResult check_training_determinism(const VerifyOptions& options);

std::vector<CheckResult> run_all(const VerifyOptions& options);

}  // namespace mutatt::verify
