#pragma once

#include <cstdint>

#include "mutatt/language.hpp"
#include "mutatt/params.hpp"

namespace mutatt {

// Trained state needed to score expressions: the vocabulary the embedding
// table was built against, and the parameters.
struct Model {
  Vocabulary vocab;
  ModelParams params;

  static Model create(Vocabulary vocab, ModelDims dims, std::uint64_t seed) {
    dims.vocab_size = vocab.size();
    Model m{std::move(vocab), {}};
    m.params = ModelParams::initialize(dims, seed);
    return m;
  }
};

}  // namespace mutatt
