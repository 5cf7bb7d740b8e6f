#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mutatt/error.hpp"
#include "mutatt/graph.hpp"
#include "mutatt/params.hpp"

namespace mutatt {

class EmptyExpressionError : public Error {
 public:
  using Error::Error;
};

// Token <-> id map. Ids 0 and 1 are reserved for padding and unknown tokens;
// real tokens start at 2.
class Vocabulary {
 public:
  static constexpr std::int64_t kPadding = 0;
  static constexpr std::int64_t kUnknown = 1;
  static constexpr std::int64_t kFirstToken = 2;

  Vocabulary() = default;
  // Tokens in id order (first one gets id 2). Duplicates are rejected.
  explicit Vocabulary(std::vector<std::string> tokens);

  // Sorted unique tokens of a corpus.
  static Vocabulary build(std::span<const std::vector<std::string>> corpus);

  std::int64_t id(std::string_view token) const;
  const std::string& token(std::int64_t id) const;
  // Including the two reserved ids.
  std::size_t size() const { return tokens_.size() + kFirstToken; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line; line i holds id i + 2.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
};

// Lowercased whitespace split.
std::vector<std::string> tokenize(std::string_view text);

std::vector<std::int64_t> encode_tokens(std::span<const std::string> tokens,
                                        const Vocabulary& vocab);

// Sinusoidal codes: pos[t][2i] = sin(t / 10000^(2i/d)), pos[t][2i+1] = cos(..).
Tensor position_codes(std::size_t length, std::size_t dim);

struct ExpressionEncoding {
  std::vector<std::int64_t> token_ids;
  Mask mask;                             // nonpadding positions
  Var word_embeddings;                   // [T x d], e_t
  std::array<Var, 3> word_attention;     // [T] per module, lambda^m
  std::array<Var, 3> phrase_embeddings;  // [d] per module, q^m
  Var module_weights;                    // [3], (subj, loc, rel)

  std::size_t length() const { return token_ids.size(); }
};

Mask padding_mask(std::span<const std::int64_t> token_ids);

Var embed(const ModelVars& vars, std::span<const std::int64_t> token_ids);

// softmax_t <query_m, [e_t ; pos_t]> over nonpadding positions.
Var word_attention(const ModelVars& vars, Var word_embeddings, const Mask& mask,
                   Module module);

// sum_t lambda_t e_t
Var phrase_embedding(Var word_embeddings, Var attention);

// softmax(W [first ; last ; mean] + b) of the nonpadding embeddings.
Var module_weights(const ModelVars& vars, Var word_embeddings, const Mask& mask);

ExpressionEncoding encode_expression(const ModelVars& vars,
                                     std::span<const std::int64_t> token_ids);

}  // namespace mutatt
