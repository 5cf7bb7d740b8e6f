#include "mutatt/language.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace mutatt {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ConfigError("vocabulary contains an empty token");
    auto [it, inserted] =
        index_.emplace(tokens_[i], static_cast<std::int64_t>(i) + kFirstToken);
    if (!inserted) throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> corpus) {
  std::set<std::string> unique;
  for (const auto& sentence : corpus) unique.insert(sentence.begin(), sentence.end());
  return Vocabulary(std::vector<std::string>(unique.begin(), unique.end()));
}

std::int64_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknown : it->second;
}

const std::string& Vocabulary::token(std::int64_t id) const {
  static const std::string kPad = "<pad>";
  static const std::string kUnk = "<unk>";
  if (id == kPadding) return kPad;
  if (id == kUnknown) return kUnk;
  if (id < kFirstToken || static_cast<std::size_t>(id) >= size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id - kFirstToken)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DatasetError(DatasetError::Kind::kMissingFile,
                       "cannot open vocabulary " + path.string());
  }
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

std::vector<std::string> tokenize(std::string_view text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream stream(lowered);
  std::vector<std::string> out;
  for (std::string word; stream >> word;) out.push_back(word);
  return out;
}

std::vector<std::int64_t> encode_tokens(std::span<const std::string> tokens,
                                        const Vocabulary& vocab) {
  if (tokens.empty()) throw EmptyExpressionError("expression has no tokens");
  std::vector<std::int64_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

Tensor position_codes(std::size_t length, std::size_t dim) {
  Tensor codes({length, dim});
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      codes.at(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return codes;
}

Mask padding_mask(std::span<const std::int64_t> token_ids) {
  Mask mask(token_ids.size());
  for (std::size_t t = 0; t < token_ids.size(); ++t) {
    mask[t] = token_ids[t] != Vocabulary::kPadding;
  }
  return mask;
}

Var embed(const ModelVars& vars, std::span<const std::int64_t> token_ids) {
  if (token_ids.empty()) throw EmptyExpressionError("expression has no tokens");
  return gather_rows(vars.embedding, token_ids, Vocabulary::kPadding);
}

Var word_attention(const ModelVars& vars, Var word_embeddings, const Mask& mask,
                   Module module) {
  const std::size_t length = word_embeddings.shape()[0];
  const std::size_t d = vars.dims.embed_dim;
  Graph& g = *vars.graph;
  Var positions = g.constant(position_codes(length, d));
  Var features = concat_cols(word_embeddings, positions);
  Var query = reshape(vars.word_query[index_of(module)], {2 * d, 1});
  Var logits = reshape(matmul(features, query), {length});
  return softmax(logits, mask);
}

Var phrase_embedding(Var word_embeddings, Var attention) {
  return weighted_sum_rows(attention, word_embeddings);
}

Var module_weights(const ModelVars& vars, Var word_embeddings, const Mask& mask) {
  std::size_t first = mask.size(), last = 0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    first = std::min(first, t);
    last = t;
  }
  if (first == mask.size()) {
    throw EmptyExpressionError("expression consists only of padding");
  }
  const std::size_t d = vars.dims.embed_dim;
  Var first_row = reshape(slice(word_embeddings, first, 1), {d});
  Var last_row = reshape(slice(word_embeddings, last, 1), {d});
  Var mean = masked_mean_rows(word_embeddings, mask);
  Var features = concat({first_row, last_row, mean});
  Var logits = add(matmul(features, vars.module_weight_w), vars.module_weight_b);
  return softmax(logits);
}

ExpressionEncoding encode_expression(const ModelVars& vars,
                                     std::span<const std::int64_t> token_ids) {
  ExpressionEncoding enc;
  enc.token_ids.assign(token_ids.begin(), token_ids.end());
  enc.mask = padding_mask(token_ids);
  if (std::find(enc.mask.begin(), enc.mask.end(), 1) == enc.mask.end()) {
    throw EmptyExpressionError("expression consists only of padding");
  }
  enc.word_embeddings = embed(vars, token_ids);
  for (Module m : kModules) {
    const std::size_t i = index_of(m);
    enc.word_attention[i] = word_attention(vars, enc.word_embeddings, enc.mask, m);
    enc.phrase_embeddings[i] = phrase_embedding(enc.word_embeddings, enc.word_attention[i]);
  }
  enc.module_weights = module_weights(vars, enc.word_embeddings, enc.mask);
  return enc;
}

}  // namespace mutatt
