#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "mutatt/gradcheck.hpp"
#include "mutatt/synth.hpp"
#include "mutatt/training.hpp"
#include "test_support.hpp"

using namespace mutatt;

namespace {

const Dataset& small_dataset() {
  static const Dataset data = generate_synthetic(test::small_spec()).dataset;
  return data;
}

Model small_model(std::uint64_t seed) {
  return Model::create(small_dataset().vocab, {2, 8, 8, small_dataset().visual_dim}, seed);
}

double params_norm(const ModelParams& p) {
  double s = 0.0;
  for (const auto& [name, t] : p.named()) {
    for (double x : t->storage()) s += x * x;
  }
  return std::sqrt(s);
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  const auto x = a.named();
  const auto y = b.named();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(*x[i].second == *y[i].second)) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("ranking loss") {
  TEST_CASE("hand-computed values") {
    CHECK(ranking_loss(0.5, 0.5, 0.2, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(ranking_loss(1.0, 0.5, 0.2, 0.1) == 0.0);
    CHECK(ranking_loss(0.3, 0.3, 0.3, 0.1) == 0.2);
    CHECK(ranking_loss(0.6, 0.5, 0.5, 0.1) == 0.0);
  }

  TEST_CASE("graph version agrees and skips a missing region term") {
    Graph g;
    const Var pos = g.constant(Tensor::scalar(0.5));
    const Var ne = g.constant(Tensor::scalar(0.5));
    const Var nr = g.constant(Tensor::scalar(0.2));
    CHECK(ranking_loss(pos, ne, nr, 0.1).item() == ranking_loss(0.5, 0.5, 0.2, 0.1));
    CHECK(ranking_loss(pos, ne, std::nullopt, 0.1).item() == doctest::Approx(0.1).epsilon(1e-15));
  }

  TEST_CASE("gradient with respect to the positive score counts active hinges") {
    for (auto [neg_expr, neg_region, active] :
         {std::tuple{0.5, 0.45, 2.0}, {0.5, -1.0, 1.0}, {-1.0, -1.0, 0.0}}) {
      Graph g;
      const Var pos = g.leaf(Tensor::scalar(0.5));
      const Var loss = ranking_loss(pos, g.constant(Tensor::scalar(neg_expr)),
                                    g.constant(Tensor::scalar(neg_region)), 0.1);
      g.backward(loss);
      CHECK(g.grad(pos).item() == -active);
      const double h = 1e-6;
      const double numeric = (ranking_loss(0.5 + h, neg_expr, neg_region, 0.1) -
                              ranking_loss(0.5 - h, neg_expr, neg_region, 0.1)) /
                             (2 * h);
      CHECK(numeric == doctest::Approx(-active).epsilon(1e-6));
    }
  }

  TEST_CASE("nonnegative and zero iff every margin holds") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int i = 0; i < 1000; ++i) {
      const double p = u(rng), a = u(rng), b = u(rng);
      const double l = ranking_loss(p, a, b, 0.1);
      CHECK(l >= 0.0);
      CHECK((l == 0.0) == (p - a >= 0.1 && p - b >= 0.1));
    }
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("step decay schedule") {
    const TrainConfig c;
    CHECK(learning_rate_at(c, 0) == 4e-4);
    CHECK(learning_rate_at(c, 7999) == 4e-4);
    CHECK(learning_rate_at(c, 8000) == doctest::Approx(4e-5).epsilon(1e-15));
    CHECK(learning_rate_at(c, 16000) == doctest::Approx(4e-6).epsilon(1e-15));
  }

  TEST_CASE("invalid configs are rejected") {
    auto expect_invalid = [](auto mutate) {
      TrainConfig c;
      mutate(c);
      CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    expect_invalid([](TrainConfig& c) { c.batch_size = 1; });
    expect_invalid([](TrainConfig& c) { c.learning_rate = 0.0; });
    expect_invalid([](TrainConfig& c) { c.lr_decay_factor = 1.0; });
    expect_invalid([](TrainConfig& c) { c.lr_decay_every = 0; });
    expect_invalid([](TrainConfig& c) { c.margin = -0.1; });
    expect_invalid([](TrainConfig& c) { c.grad_clip = 0.0; });
  }

  TEST_CASE("zero gradient leaves parameters unchanged and decays moments") {
    ModelParams params = ModelParams::initialize({4, 3, 3, 2}, 1);
    const ModelParams before = params;
    AdamState state = AdamState::zeros_like(params);
    state.first_moment.fill(1.0);
    state.second_moment.fill(2.0);
    state.step = 5;
    const TrainConfig c;
    adam_update(params, params.zeros_like(), state, c, 1e-3);
    CHECK(state.step == 6);
    CHECK(state.first_moment.embedding[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(state.second_moment.embedding[0] == doctest::Approx(2.0 * 0.999).epsilon(1e-15));
    // Nonzero moments still move parameters; a fresh state with zero
    // gradients does not.
    AdamState fresh = AdamState::zeros_like(before);
    ModelParams p2 = before;
    adam_update(p2, before.zeros_like(), fresh, c, 1e-3);
    CHECK(params_equal(p2, before));
  }

  TEST_CASE("single element update matches the closed form") {
    ModelParams params = ModelParams::zeros({4, 2, 2, 2});
    ModelParams grads = params.zeros_like();
    grads.module_weight_b[0] = 0.5;
    AdamState state = AdamState::zeros_like(params);
    TrainConfig c;
    adam_update(params, grads, state, c, 0.1);
    // First step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
    CHECK(params.module_weight_b[0] == doctest::Approx(-0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    adam_update(params, grads, state, c, 0.1);
    const double m = (0.9 * 0.05 + 0.1 * 0.5) / (1 - 0.81);
    const double v = (0.999 * 0.00025 + 0.001 * 0.25) / (1 - 0.999 * 0.999);
    const double expect = -0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * m / (std::sqrt(v) + 1e-8);
    CHECK(params.module_weight_b[0] == doctest::Approx(expect).epsilon(1e-13));
  }

  TEST_CASE("global norm clipping") {
    ModelParams g = ModelParams::zeros({4, 2, 2, 2});
    g.embedding[0] = 30.0;
    g.module_weight_b[1] = 40.0;
    CHECK(clip_gradients(g, 10.0) == 50.0);
    CHECK(params_norm(g) == doctest::Approx(10.0).epsilon(1e-14));
    CHECK(g.embedding[0] == doctest::Approx(6.0).epsilon(1e-14));
    CHECK(clip_gradients(g, 100.0) == doctest::Approx(10.0).epsilon(1e-14));
    CHECK(g.embedding[0] == doctest::Approx(6.0).epsilon(1e-14));
  }
}

TEST_SUITE("sampling") {
  TEST_CASE("batches are reproducible epochs of a permutation") {
    const auto a = batch_for_step(10, 5, 3, 0);
    const auto b = batch_for_step(10, 5, 3, 1);
    CHECK(a == batch_for_step(10, 5, 3, 0));
    std::set<std::size_t> epoch(a.begin(), a.end());
    epoch.insert(b.begin(), b.end());
    CHECK(epoch.size() == 10);
    CHECK(batch_for_step(10, 5, 4, 0) != a);
    CHECK_THROWS_AS(batch_for_step(0, 5, 3, 0), ConfigError);
  }

  TEST_CASE("negatives come from elsewhere in the batch and the same image") {
    const Dataset& data = small_dataset();
    const std::vector<std::size_t> batch{0, 5, 9, 14};
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const NegativeSample n = sample_negatives(data, batch, i, rng);
        CHECK(n.expression != batch[i]);
        REQUIRE(n.region.has_value());
        CHECK(*n.region != data.expressions[batch[i]].target);
        CHECK(*n.region < data.images[data.expressions[batch[i]].image].regions.size());
      }
    }
  }

  TEST_CASE("batch of two and two-region images have unique choices") {
    SynthSpec spec = test::small_spec(10);
    spec.regions_per_image = 2;
    const Dataset data = generate_synthetic(spec).dataset;
    const std::vector<std::size_t> batch{0, 3};
    std::mt19937_64 rng(3);
    const NegativeSample n = sample_negatives(data, batch, 0, rng);
    CHECK(n.expression == 3);
    CHECK(n.region == std::optional<std::size_t>(1 - data.expressions[0].target));
  }

  TEST_CASE("seeded sampling trace repeats") {
    const Dataset& data = small_dataset();
    const std::vector<std::size_t> batch{1, 2, 3, 4, 5};
    auto trace = [&](std::uint64_t seed) {
      std::mt19937_64 rng = step_rng(seed, 17);
      std::vector<std::size_t> out;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto n = sample_negatives(data, batch, i, rng);
        out.push_back(n.expression);
        out.push_back(*n.region);
      }
      return out;
    };
    CHECK(trace(9) == trace(9));
  }

  TEST_CASE("single-region image skips the region negative") {
    Dataset data = small_dataset();
    Image& image = data.images[data.expressions[0].image];
    image.regions.resize(1);
    image.regions[0].context.clear();
    data.expressions[0].target = 0;
    const std::vector<std::size_t> batch{0, 8};
    std::mt19937_64 rng(4);
    const NegativeSample n = sample_negatives(data, batch, 0, rng);
    CHECK_FALSE(n.region.has_value());
    const FeatureIndex features(data);
    const Model model = small_model(1);
    TrainConfig c;
    const std::vector<NegativeSample> negatives{n, sample_negatives(data, batch, 1, rng)};
    const StepStats stats = batch_loss(data, features, model, batch, negatives, c, nullptr);
    CHECK(stats.skipped_region_negatives == 1);
    CHECK(stats.total_hinges == 3);
  }
}

TEST_SUITE("train step") {
  TEST_CASE("batch loss matches an oracle recomputation from candidate scores") {
    const Dataset& data = small_dataset();
    const FeatureIndex features(data);
    const Model model = small_model(5);
    TrainConfig c;
    c.margin = 0.5;
    const std::vector<std::size_t> batch{0, 7, 13};
    std::mt19937_64 rng = step_rng(1, 0);
    std::vector<NegativeSample> negatives;
    for (std::size_t i = 0; i < batch.size(); ++i) negatives.push_back(sample_negatives(data, batch, i, rng));
    const StepStats stats = batch_loss(data, features, model, batch, negatives, c, nullptr);
    double expect = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Expression& e = data.expressions[batch[i]];
      const auto ids = encode_tokens(e.tokens, model.vocab);
      const auto other = encode_tokens(data.expressions[negatives[i].expression].tokens, model.vocab);
      const auto& regions = features.annotated(e.image);
      const auto scores = score_candidates(model.params, regions, ids, c.ablation);
      const double neg_expr =
          score_candidates(model.params, std::span(&regions[e.target], 1), other, c.ablation)[0];
      expect += ranking_loss(scores[e.target], neg_expr, scores[*negatives[i].region], c.margin);
    }
    CHECK(stats.loss == doctest::Approx(expect).epsilon(1e-12));
    CHECK(stats.total_hinges == 6);
  }

  TEST_CASE("batch gradients match finite differences") {
    const Dataset& data = small_dataset();
    const FeatureIndex features(data);
    Model model = Model::create(data.vocab, {2, 4, 4, data.visual_dim}, 6);
    TrainConfig c;
    c.margin = 5.0;
    const std::vector<std::size_t> batch{2, 11};
    std::mt19937_64 rng = step_rng(2, 0);
    std::vector<NegativeSample> negatives;
    for (std::size_t i = 0; i < batch.size(); ++i) negatives.push_back(sample_negatives(data, batch, i, rng));
    ModelParams grads = model.params.zeros_like();
    batch_loss(data, features, model, batch, negatives, c, &grads);
    ModelParams probe = model.params;
    const auto report = finite_difference_check(
        [&](const ModelParams& p) {
          Model m{model.vocab, p};
          return batch_loss(data, features, m, batch, negatives, c, nullptr).loss;
        },
        probe, grads);
    CHECK(report.max_relative_error() < 1e-4);
  }

  TEST_CASE("non-finite loss aborts naming the expression") {
    const Dataset& data = small_dataset();
    const FeatureIndex features(data);
    Model model = small_model(7);
    model.params.mlp[0].b2[0] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig c;
    const std::vector<std::size_t> batch{3, 4};
    std::mt19937_64 rng(1);
    AdamState opt = AdamState::zeros_like(model.params);
    try {
      train_step(data, features, model, opt, c, batch, rng);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(std::string(e.what()).find("expression 3") != std::string::npos);
    }
  }

  TEST_CASE("parallel and serial training are bitwise identical, and reruns repeat") {
    const Dataset& data = small_dataset();
    auto run = [&](bool parallel) {
      Model model = small_model(8);
      AdamState opt = AdamState::zeros_like(model.params);
      TrainConfig c;
      c.parallel = parallel;
      c.seed = 8;
      Trainer trainer(data, model, opt, c);
      for (int i = 0; i < 5; ++i) trainer.step();
      return std::pair{model.params, opt};
    };
    const auto a = run(false);
    const auto b = run(false);
    const auto p = run(true);
    CHECK(params_equal(a.first, b.first));
    CHECK(params_equal(a.first, p.first));
    CHECK(params_equal(a.second.first_moment, p.second.first_moment));
    CHECK(a.second.step == 5);
  }

  TEST_CASE("resuming from a copied state continues the same trajectory") {
    const Dataset& data = small_dataset();
    TrainConfig c;
    c.seed = 9;
    Model straight = small_model(9);
    AdamState straight_opt = AdamState::zeros_like(straight.params);
    Trainer t1(data, straight, straight_opt, c);
    for (int i = 0; i < 6; ++i) t1.step();

    Model first = small_model(9);
    AdamState first_opt = AdamState::zeros_like(first.params);
    {
      Trainer t(data, first, first_opt, c);
      for (int i = 0; i < 3; ++i) t.step();
    }
    Model resumed = first;
    AdamState resumed_opt = first_opt;
    Trainer t2(data, resumed, resumed_opt, c);
    CHECK(t2.current_step() == 3);
    for (int i = 0; i < 3; ++i) t2.step();
    CHECK(params_equal(straight.params, resumed.params));
  }
}

TEST_CASE("loss falls on the synthetic task for three seeds") {
  const Dataset data = generate_synthetic(SynthSpec{}).dataset;
  for (std::uint64_t seed : {1, 2, 3}) {
    Model model = Model::create(data.vocab, {}, seed);
    AdamState opt = AdamState::zeros_like(model.params);
    TrainConfig c;
    c.seed = seed;
    Trainer trainer(data, model, opt, c);
    double early = 0.0, late = 0.0;
    for (std::size_t i = 0; i < 1000; ++i) {
      const double loss = trainer.step().loss;
      if (i < 100) early += loss;
      if (i >= 900) late += loss;
    }
    CAPTURE(seed);
    CAPTURE(early / 100);
    CAPTURE(late / 100);
    CHECK(late < 0.2 * early);
  }
}
