#include "mutatt/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "mutatt/error.hpp"

namespace mutatt {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(lr_decay_factor > 1.0)) throw ConfigError("train.lr_decay_factor must exceed 1");
  if (lr_decay_every == 0) throw ConfigError("train.lr_decay_every must be positive");
  if (!(margin >= 0.0)) throw ConfigError("train.margin must be nonnegative");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
}

double learning_rate_at(const TrainConfig& config, std::size_t step) {
  const auto decays = static_cast<double>(step / config.lr_decay_every);
  return config.learning_rate / std::pow(config.lr_decay_factor, decays);
}

double ranking_loss(double pos, double neg_expr, double neg_region, double margin) {
  return std::max(0.0, margin - pos + neg_expr) + std::max(0.0, margin - pos + neg_region);
}

Var ranking_loss(Var pos, Var neg_expr, std::optional<Var> neg_region, double margin) {
  // (k - pos) + neg, the scalar version's order, so both agree bitwise.
  const Var gap = add_scalar(scale(pos, -1.0), margin);
  Var loss = relu(add(gap, neg_expr));
  if (neg_region) loss = add(loss, relu(add(gap, *neg_region)));
  return loss;
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state,
                 const TrainConfig& config, double learning_rate) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  auto p = params.named();
  auto g = grads.named();
  auto m = state.first_moment.named();
  auto v = state.second_moment.named();
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto pd = p[i].second->data();
    auto gd = g[i].second->data();
    auto md = m[i].second->data();
    auto vd = v[i].second->data();
    for (std::size_t k = 0; k < pd.size(); ++k) {
      md[k] = config.beta1 * md[k] + (1.0 - config.beta1) * gd[k];
      vd[k] = config.beta2 * vd[k] + (1.0 - config.beta2) * gd[k] * gd[k];
      const double m_hat = md[k] / correction1;
      const double v_hat = vd[k] / correction2;
      pd[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

double clip_gradients(ModelParams& grads, double max_norm) {
  double squared = 0.0;
  for (const auto& [name, t] : std::as_const(grads).named()) {
    for (double x : t->data()) squared += x * x;
  }
  const double norm = std::sqrt(squared);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, t] : grads.named()) {
      for (double& x : t->storage()) x *= factor;
    }
  }
  return norm;
}

std::mt19937_64 step_rng(std::uint64_t seed, std::size_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32),
                    0x6e656761u};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> batch_for_step(std::size_t pool_size, std::size_t batch_size,
                                        std::uint64_t seed, std::size_t step) {
  if (pool_size == 0) throw ConfigError("training pool is empty");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(pool_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t position = step * batch_size + b;
    const std::size_t epoch = position / pool_size;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(epoch), 0x65706f63u};
      std::mt19937_64 rng(seq);
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[position % pool_size]);
  }
  return out;
}

NegativeSample sample_negatives(const Dataset& dataset, std::span<const std::size_t> batch,
                                std::size_t position, std::mt19937_64& rng) {
  if (batch.size() < 2) throw ConfigError("negative sampling needs a batch of at least 2");
  NegativeSample out;
  std::uniform_int_distribution<std::size_t> other(0, batch.size() - 2);
  std::size_t j = other(rng);
  if (j >= position) ++j;
  out.expression = batch[j];

  const Expression& expr = dataset.expressions.at(batch[position]);
  const std::size_t regions = dataset.images.at(expr.image).regions.size();
  if (regions >= 2) {
    std::uniform_int_distribution<std::size_t> pick(0, regions - 2);
    std::size_t r = pick(rng);
    if (r >= expr.target) ++r;
    out.region = r;
  }
  return out;
}

namespace {

struct InstanceResult {
  double loss = 0.0;
  std::size_t active = 0;
  std::size_t total = 0;
};

InstanceResult instance_loss(const Dataset& dataset, const FeatureIndex& features,
                             const Model& model, std::size_t expression,
                             const NegativeSample& negative, const TrainConfig& config,
                             ModelParams* grads) {
  const Expression& expr = dataset.expressions[expression];
  const Expression& other = dataset.expressions.at(negative.expression);
  const auto ids = encode_tokens(expr.tokens, model.vocab);
  const auto other_ids = encode_tokens(other.tokens, model.vocab);
  const auto& regions = features.annotated(expr.image);

  Graph graph;
  const ModelVars vars = bind_params(graph, model.params, grads);
  const ExpressionEncoding enc = encode_expression(vars, ids);
  const ExpressionEncoding other_enc = encode_expression(vars, other_ids);
  const ModuleVisuals target = assemble_module_visuals(vars, regions[expr.target]);
  const AblationFlags& flags = config.ablation;

  Var pos = overall_score(vars, target, enc, flags).total;
  Var neg_expr = overall_score(vars, target, other_enc, flags).total;
  std::optional<Var> neg_region;
  if (negative.region) {
    const ModuleVisuals distractor = assemble_module_visuals(vars, regions[*negative.region]);
    neg_region = overall_score(vars, distractor, enc, flags).total;
  }
  Var loss = ranking_loss(pos, neg_expr, neg_region, config.margin);

  InstanceResult result;
  result.loss = loss.item();
  if (!std::isfinite(result.loss)) {
    throw NonFiniteError("non-finite loss on expression " + std::to_string(expression) +
                         " (image " + std::to_string(expr.image) + ")");
  }
  result.total = negative.region ? 2 : 1;
  result.active += config.margin - pos.item() + neg_expr.item() > 0.0 ? 1 : 0;
  if (neg_region) result.active += config.margin - pos.item() + neg_region->item() > 0.0 ? 1 : 0;
  if (grads != nullptr) graph.backward(loss);
  return result;
}

void add_params(ModelParams& dst, const ModelParams& src) {
  auto d = dst.named();
  auto s = src.named();
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto dd = d[i].second->data();
    auto sd = s[i].second->data();
    for (std::size_t k = 0; k < dd.size(); ++k) dd[k] += sd[k];
  }
}

}  // namespace

StepStats batch_loss(const Dataset& dataset, const FeatureIndex& features,
                     const Model& model, std::span<const std::size_t> batch,
                     std::span<const NegativeSample> negatives,
                     const TrainConfig& config, ModelParams* grads) {
  if (batch.empty()) throw ConfigError("empty training batch");
  if (negatives.size() != batch.size()) {
    throw ConfigError("negative samples do not match batch size");
  }
  std::vector<InstanceResult> results(batch.size());

  if (config.parallel && grads != nullptr) {
    std::vector<ModelParams> buffers(batch.size());
    std::vector<std::exception_ptr> errors(batch.size());
    const auto n = static_cast<std::int64_t>(batch.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t b = 0; b < n; ++b) {
      const auto i = static_cast<std::size_t>(b);
      try {
        buffers[i] = model.params.zeros_like();
        results[i] = instance_loss(dataset, features, model, batch[i], negatives[i],
                                   config, &buffers[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (const auto& buffer : buffers) add_params(*grads, buffer);
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      results[i] = instance_loss(dataset, features, model, batch[i], negatives[i], config, grads);
    }
  }

  StepStats stats;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    stats.loss += results[i].loss;
    stats.active_hinges += results[i].active;
    stats.total_hinges += results[i].total;
    if (!negatives[i].region) ++stats.skipped_region_negatives;
  }
  return stats;
}

StepStats train_step(const Dataset& dataset, const FeatureIndex& features, Model& model,
                     AdamState& optimizer, const TrainConfig& config,
                     std::span<const std::size_t> batch, std::mt19937_64& rng) {
  if (batch.empty()) throw ConfigError("empty training batch");
  std::vector<NegativeSample> negatives;
  negatives.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    negatives.push_back(sample_negatives(dataset, batch, i, rng));
  }
  ModelParams grads = model.params.zeros_like();
  const std::size_t step = static_cast<std::size_t>(optimizer.step);
  StepStats stats = batch_loss(dataset, features, model, batch, negatives, config, &grads);
  stats.step = step;
  stats.grad_norm = clip_gradients(grads, config.grad_clip);
  stats.learning_rate = learning_rate_at(config, step);
  adam_update(model.params, grads, optimizer, config, stats.learning_rate);
  return stats;
}

Trainer::Trainer(const Dataset& dataset, Model& model, AdamState& optimizer,
                 TrainConfig config)
    : dataset_(dataset),
      features_(dataset),
      model_(model),
      optimizer_(optimizer),
      config_(std::move(config)),
      pool_(dataset.split_indices("train")) {
  config_.validate();
  if (pool_.size() < 2) throw ConfigError("training split needs at least 2 expressions");
}

StepStats Trainer::step() {
  const std::size_t step = current_step();
  std::vector<std::size_t> batch;
  for (std::size_t k : batch_for_step(pool_.size(), config_.batch_size, config_.seed, step)) {
    batch.push_back(pool_[k]);
  }
  std::mt19937_64 rng = step_rng(config_.seed, step);
  return train_step(dataset_, features_, model_, optimizer_, config_, batch, rng);
}

}  // namespace mutatt
