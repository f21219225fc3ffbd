#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "stmn/language/graph.hpp"
#include "stmn/numerics/checkpoint.hpp"
#include "stmn/numerics/ops.hpp"

namespace stmn::language {

inline std::string normalize_word(const std::string& w) {
  std::string out = w;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Word -> embedding row. Row 0 is reserved for unknown words.
class WordVocabulary {
 public:
  static constexpr const char* kUnk = "<unk>";

  WordVocabulary() : words_{kUnk} {}

  template <typename Range>
  static WordVocabulary from_words(const Range& words) {
    std::set<std::string> sorted;
    for (const auto& w : words) sorted.insert(normalize_word(w));
    sorted.erase(kUnk);
    WordVocabulary v;
    for (const auto& w : sorted) {
      v.index_.emplace(w, v.words_.size());
      v.words_.push_back(w);
    }
    return v;
  }

  std::size_t index(const std::string& word) const {
    auto it = index_.find(normalize_word(word));
    return it == index_.end() ? 0 : it->second;
  }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
};

// The token-embedding table lives in the ParamStore as text.embedding
// (V x C_t), text.root and text.cls (1 x C_t each).
inline void register_embeddings(ParamStore& params, std::size_t vocab_size, std::size_t c_t, std::mt19937_64& rng) {
  params.create("text.embedding", {vocab_size, c_t}, Init::uniform_fan_in, rng);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& x : params.get("text.embedding").mutable_data()) x = dist(rng);
  params.create("text.root", {1, c_t}, Init::zeros, rng);
  params.create("text.cls", {1, c_t}, Init::zeros, rng);
  for (const char* name : {"text.root", "text.cls"})
    for (double& x : params.get(name).mutable_data()) x = dist(rng);
}

struct EmbeddedTokens {
  Tensor words;  // N_w x C_t
  Tensor cls;    // 1 x C_t
};

inline EmbeddedTokens embed_tokens(const Expression& expr, const WordVocabulary& vocab, const ParamStore& params) {
  std::vector<std::size_t> ids;
  ids.reserve(expr.words());
  for (const auto& t : expr.tokens) ids.push_back(vocab.index(t));
  return {gather_rows(params.get("text.embedding"), std::move(ids)), params.get("text.cls")};
}

}  // namespace stmn::language
