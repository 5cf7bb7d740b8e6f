#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "mutatt/gradcheck.hpp"
#include "mutatt/language.hpp"
#include "test_support.hpp"

using namespace mutatt;

namespace {

ModelParams small_params(std::uint64_t seed, std::size_t vocab = 8, std::size_t d = 6) {
  return ModelParams::initialize({vocab, d, 5, 4}, seed);
}

}  // namespace

TEST_SUITE("vocabulary") {
  TEST_CASE("ids start after the reserved entries") {
    const Vocabulary v({"a", "brown", "bowl"});
    CHECK(v.size() == 5);
    CHECK(v.id("a") == 2);
    CHECK(v.id("bowl") == 4);
    CHECK(v.token(3) == "brown");
    const std::vector<std::string> tokens{"a", "brown", "bowl"};
    CHECK(encode_tokens(tokens, v) == std::vector<std::int64_t>{2, 3, 4});
  }

  TEST_CASE("unseen tokens map to the unknown id") {
    const Vocabulary v({"a"});
    const std::vector<std::string> tokens{"zzz"};
    CHECK(encode_tokens(tokens, v) == std::vector<std::int64_t>{Vocabulary::kUnknown});
  }

  TEST_CASE("empty expression is an error") {
    const Vocabulary v({"a"});
    CHECK_THROWS_AS(encode_tokens({}, v), EmptyExpressionError);
  }

  TEST_CASE("duplicates are rejected and build sorts") {
    CHECK_THROWS_AS(Vocabulary({"a", "a"}), ConfigError);
    const std::vector<std::vector<std::string>> corpus{{"red", "cup"}, {"blue", "cup"}};
    const Vocabulary v = Vocabulary::build(corpus);
    CHECK(v.tokens() == std::vector<std::string>{"blue", "cup", "red"});
  }

  TEST_CASE("tokenize lowercases and splits on whitespace") {
    CHECK(tokenize("  The Red\tCUP  left ") ==
          std::vector<std::string>{"the", "red", "cup", "left"});
  }

  TEST_CASE("file round trip, line i holds id i+2") {
    const test::TempDir dir("vocab");
    const Vocabulary v({"x", "y", "z"});
    v.save(dir.path() / "vocab.txt");
    CHECK(test::read_text(dir.path() / "vocab.txt") == "x\ny\nz\n");
    CHECK(Vocabulary::load(dir.path() / "vocab.txt") == v);
  }
}

TEST_SUITE("embedding") {
  TEST_CASE("padding row is zero and repeated ids give identical rows") {
    const ModelParams p = small_params(1);
    Graph g;
    const ModelVars vars = bind_params(g, p);
    const std::vector<std::int64_t> ids{3, 0, 3};
    const Tensor e = embed(vars, ids).value();
    for (std::size_t c = 0; c < e.cols(); ++c) {
      CHECK(e.at(1, c) == 0.0);
      CHECK(e.at(0, c) == e.at(2, c));
      CHECK(e.at(0, c) == p.embedding.at(3, c));
    }
  }

  TEST_CASE("out of range id is an index error") {
    const ModelParams p = small_params(1);
    Graph g;
    const ModelVars vars = bind_params(g, p);
    const std::vector<std::int64_t> ids{99};
    CHECK_THROWS_AS(embed(vars, ids), IndexError);
  }

  TEST_CASE("gradient flows only to the touched row") {
    ModelParams p = small_params(2);
    const std::vector<std::int64_t> ids{5};
    auto loss = [&ids](const ModelParams& params, ModelParams* grads) {
      Graph g;
      const ModelVars vars = bind_params(g, params, grads);
      const Var e = embed(vars, ids);
      const Var l = sum(tanh(scale(e, 3.0)));
      if (grads) g.backward(l);
      return l.item();
    };
    ModelParams grads = p.zeros_like();
    loss(p, &grads);
    for (std::size_t r = 0; r < grads.embedding.rows(); ++r) {
      for (std::size_t c = 0; c < grads.embedding.cols(); ++c) {
        if (r == 5) {
          CHECK(grads.embedding.at(r, c) != 0.0);
        } else {
          CHECK(grads.embedding.at(r, c) == 0.0);
        }
      }
    }
    const auto report =
        finite_difference_check([&](const ModelParams& q) { return loss(q, nullptr); }, p, grads);
    CHECK(report.max_relative_error() < 1e-6);
  }
}

TEST_SUITE("position codes") {
  TEST_CASE("sinusoidal layout") {
    const Tensor pos = position_codes(3, 4);
    CHECK(pos.at(0, 0) == 0.0);
    CHECK(pos.at(0, 1) == 1.0);
    CHECK(pos.at(2, 0) == doctest::Approx(std::sin(2.0)).epsilon(1e-15));
    CHECK(pos.at(2, 3) == doctest::Approx(std::cos(2.0 / 100.0)).epsilon(1e-15));
  }
}

TEST_SUITE("word attention") {
  TEST_CASE("single word gets all the weight") {
    const ModelParams p = small_params(3);
    Graph g;
    const ModelVars vars = bind_params(g, p);
    const std::vector<std::int64_t> ids{4};
    const ExpressionEncoding enc = encode_expression(vars, ids);
    for (Module m : kModules) CHECK(enc.word_attention[index_of(m)].value()[0] == 1.0);
  }

  TEST_CASE("zero query gives uniform attention") {
    ModelParams p = small_params(3);
    for (Tensor& q : p.word_query) q.fill(0.0);
    Graph g;
    const ModelVars vars = bind_params(g, p);
    const std::vector<std::int64_t> ids{2, 3, 4, 5};
    const ExpressionEncoding enc = encode_expression(vars, ids);
    for (Module m : kModules) {
      for (double a : enc.word_attention[index_of(m)].value().storage()) CHECK(a == 0.25);
    }
  }

  TEST_CASE("matches a brute-force recomputation") {
    const ModelParams p = small_params(4);
    Graph g;
    const ModelVars vars = bind_params(g, p);
    const std::vector<std::int64_t> ids{2, 6, 3};
    const ExpressionEncoding enc = encode_expression(vars, ids);
    const std::size_t d = p.dims.embed_dim;
    const Tensor pos = position_codes(3, d);
    for (Module m : kModules) {
      const Tensor& q = p.word_query[index_of(m)];
      std::vector<double> logits(3);
      for (std::size_t t = 0; t < 3; ++t) {
        double z = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          z += q[i] * p.embedding.at(static_cast<std::size_t>(ids[t]), i) + q[d + i] * pos.at(t, i);
        }
        logits[t] = z;
      }
      const double top = *std::max_element(logits.begin(), logits.end());
      double total = 0.0;
      for (double& z : logits) total += (z = std::exp(z - top));
      for (std::size_t t = 0; t < 3; ++t) {
        CHECK(enc.word_attention[index_of(m)].value()[t] ==
              doctest::Approx(logits[t] / total).epsilon(1e-13));
      }
    }
  }

  TEST_CASE("padding excluded") {
    const ModelParams p = small_params(5);
    Graph g;
    const ModelVars vars = bind_params(g, p);
    const std::vector<std::int64_t> ids{2, 3, 0};
    const ExpressionEncoding enc = encode_expression(vars, ids);
    CHECK(enc.mask == Mask{1, 1, 0});
    for (Module m : kModules) CHECK(enc.word_attention[index_of(m)].value()[2] == 0.0);
  }

  TEST_CASE("all padding is an error") {
    const ModelParams p = small_params(5);
    Graph g;
    const ModelVars vars = bind_params(g, p);
    const std::vector<std::int64_t> ids{0, 0};
    CHECK_THROWS_AS(encode_expression(vars, ids), EmptyExpressionError);
  }
}

TEST_SUITE("phrase embedding") {
  TEST_CASE("one-hot attention selects a row, uniform gives the mean") {
    Graph g;
    const Var e = g.constant(Tensor::matrix({{1, 2}, {3, 4}, {5, 9}}));
    CHECK(phrase_embedding(e, g.constant(Tensor::vector({0, 0, 1}))).value().storage() ==
          std::vector<double>{5, 9});
    const Tensor mean = phrase_embedding(e, g.constant(Tensor::vector({1.0 / 3, 1.0 / 3, 1.0 / 3}))).value();
    CHECK(mean[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(mean[1] == doctest::Approx(5.0).epsilon(1e-15));
  }

  TEST_CASE("weighted sum matches recomputation and is a convex combination") {
    const ModelParams p = small_params(6);
    Graph g;
    const ModelVars vars = bind_params(g, p);
    const std::vector<std::int64_t> ids{7, 2, 5, 3};
    const ExpressionEncoding enc = encode_expression(vars, ids);
    const Tensor e = enc.word_embeddings.value();
    for (Module m : kModules) {
      const Tensor lambda = enc.word_attention[index_of(m)].value();
      const Tensor q = enc.phrase_embeddings[index_of(m)].value();
      for (std::size_t i = 0; i < e.cols(); ++i) {
        double expect = 0.0, lo = e.at(0, i), hi = e.at(0, i);
        for (std::size_t t = 0; t < e.rows(); ++t) {
          expect += lambda[t] * e.at(t, i);
          lo = std::min(lo, e.at(t, i));
          hi = std::max(hi, e.at(t, i));
        }
        CHECK(std::abs(q[i] - expect) <= 1e-12);
        CHECK(q[i] >= lo - 1e-15);
        CHECK(q[i] <= hi + 1e-15);
      }
    }
  }
}

TEST_SUITE("module weights") {
  TEST_CASE("zero head gives thirds") {
    ModelParams p = small_params(7);
    p.module_weight_w.fill(0.0);
    p.module_weight_b.fill(0.0);
    Graph g;
    const ModelVars vars = bind_params(g, p);
    const std::vector<std::int64_t> ids{2, 3};
    const Tensor w = encode_expression(vars, ids).module_weights.value();
    for (double x : w.storage()) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("matches recomputation over first, last and mean") {
    const ModelParams p = small_params(8);
    Graph g;
    const ModelVars vars = bind_params(g, p);
    const std::vector<std::int64_t> ids{4, 6, 2, 0};
    const Tensor w = encode_expression(vars, ids).module_weights.value();
    const std::size_t d = p.dims.embed_dim;
    std::vector<double> feature(3 * d);
    for (std::size_t i = 0; i < d; ++i) {
      feature[i] = p.embedding.at(4, i);
      feature[d + i] = p.embedding.at(2, i);
      feature[2 * d + i] = (p.embedding.at(4, i) + p.embedding.at(6, i) + p.embedding.at(2, i)) / 3.0;
    }
    std::vector<double> logits(3);
    for (std::size_t k = 0; k < 3; ++k) {
      logits[k] = p.module_weight_b[k];
      for (std::size_t i = 0; i < 3 * d; ++i) logits[k] += feature[i] * p.module_weight_w.at(i, k);
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& z : logits) total += (z = std::exp(z - top));
    for (std::size_t k = 0; k < 3; ++k) CHECK(w[k] == doctest::Approx(logits[k] / total).epsilon(1e-13));
  }

  TEST_CASE("normalization holds on random expressions") {
    std::mt19937_64 rng(9);
    const ModelParams p = small_params(9, 20);
    std::uniform_int_distribution<std::int64_t> id(1, 19);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<std::int64_t> ids(1 + static_cast<std::size_t>(trial % 6));
      for (auto& x : ids) x = id(rng);
      Graph g;
      const ModelVars vars = bind_params(g, p);
      const ExpressionEncoding enc = encode_expression(vars, ids);
      const auto& w = enc.module_weights.value().storage();
      REQUIRE(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) <= 1e-12);
      for (Module m : kModules) {
        const auto& a = enc.word_attention[index_of(m)].value().storage();
        REQUIRE(std::abs(std::accumulate(a.begin(), a.end(), 0.0) - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("permuting vocabulary ids leaves encodings bitwise identical") {
  const ModelParams p = small_params(10, 8);
  // Swap ids 3 and 6 together with their table rows.
  ModelParams swapped = p;
  for (std::size_t c = 0; c < p.dims.embed_dim; ++c) {
    std::swap(swapped.embedding.at(3, c), swapped.embedding.at(6, c));
  }
  const std::vector<std::int64_t> ids{3, 6, 2};
  const std::vector<std::int64_t> remapped{6, 3, 2};
  Graph g1, g2;
  const ExpressionEncoding a = encode_expression(bind_params(g1, p), ids);
  const ExpressionEncoding b = encode_expression(bind_params(g2, swapped), remapped);
  CHECK(a.module_weights.value() == b.module_weights.value());
  for (Module m : kModules) {
    CHECK(a.word_attention[index_of(m)].value() == b.word_attention[index_of(m)].value());
    CHECK(a.phrase_embeddings[index_of(m)].value() == b.phrase_embeddings[index_of(m)].value());
  }
}
