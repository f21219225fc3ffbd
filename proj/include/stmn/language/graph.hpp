#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "stmn/errors.hpp"
#include "stmn/language/conllu.hpp"

namespace stmn::language {

inline constexpr std::size_t kMaxWords = 80;

// Dependency-relation label -> id. Ids start at 1 and follow sorted label order.
class RelationVocabulary {
 public:
  RelationVocabulary() = default;

  template <typename Range>
  static RelationVocabulary from_labels(const Range& labels) {
    std::set<std::string> sorted(labels.begin(), labels.end());
    RelationVocabulary v;
    for (const auto& l : sorted) {
      v.labels_.push_back(l);
      v.ids_.emplace(l, static_cast<int>(v.labels_.size()));
    }
    return v;
  }

  // Universal Dependencies v2 relation inventory plus the labels in `extra`.
  template <typename Range>
  static RelationVocabulary universal_plus(const Range& extra) {
    std::vector<std::string> all{"acl",   "advcl",    "advmod", "amod",      "appos",    "aux",   "case",
                                 "cc",    "ccomp",    "clf",    "compound",  "conj",     "cop",   "csubj",
                                 "dep",   "det",      "discourse", "dislocated", "expl", "fixed", "flat",
                                 "goeswith", "iobj",  "list",   "mark",      "nmod",     "nsubj", "nummod",
                                 "obj",   "obl",      "orphan", "parataxis", "punct",    "reparandum", "root",
                                 "vocative", "xcomp"};
    all.insert(all.end(), extra.begin(), extra.end());
    return from_labels(all);
  }

  int id(const std::string& label) const {
    auto it = ids_.find(label);
    if (it == ids_.end()) throw ValidationError("dependency relation '" + label + "' is not in the vocabulary");
    return it->second;
  }
  bool contains(const std::string& label) const { return ids_.contains(label); }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }

 private:
  std::map<std::string, int> ids_;
  std::vector<std::string> labels_;
};

enum class Direction { forward, reverse, bidirectional };

inline std::string to_string(Direction d) {
  switch (d) {
    case Direction::forward: return "forward";
    case Direction::reverse: return "reverse";
    case Direction::bidirectional: return "bidirectional";
  }
  return "?";
}

inline Direction direction_from_string(const std::string& s) {
  if (s == "forward") return Direction::forward;
  if (s == "reverse") return Direction::reverse;
  if (s == "bidirectional") return Direction::bidirectional;
  throw ConfigError("unknown edge direction '" + s + "'");
}

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  int relation = 0;
  bool operator==(const Edge&) const = default;
  auto operator<=>(const Edge&) const = default;
};

// Node 0 is ROOT; word i (0-based, reading order) is node i + 1.
struct DependencyGraph {
  std::size_t node_count = 1;
  std::vector<Edge> edges;
  Direction direction = Direction::forward;
  std::size_t relation_count = 0;  // size of the vocabulary the ids came from

  std::size_t words() const { return node_count - 1; }
};

struct Expression {
  std::vector<std::string> tokens;
  std::vector<std::pair<std::size_t, std::size_t>> sentence_spans;  // [start, end)
  std::string raw_text;

  std::size_t words() const { return tokens.size(); }
};

inline Expression expression_from_sentences(const std::vector<ConlluSentence>& sentences) {
  Expression e;
  for (const auto& s : sentences) {
    const std::size_t start = e.tokens.size();
    for (const auto& t : s.tokens) e.tokens.push_back(t.form);
    e.sentence_spans.push_back({start, e.tokens.size()});
  }
  if (e.tokens.empty()) throw ValidationError("expression has no words");
  if (e.tokens.size() > kMaxWords) {
    throw ValidationError("expression has " + std::to_string(e.tokens.size()) + " words, limit is " +
                          std::to_string(kMaxWords));
  }
  for (std::size_t i = 0; i < e.tokens.size(); ++i) e.raw_text += (i ? " " : "") + e.tokens[i];
  return e;
}

// Joins per-sentence trees at a shared ROOT. Edges are head -> dependent and
// listed in dependent reading order.
inline DependencyGraph merge_trees(const std::vector<ConlluSentence>& trees, const RelationVocabulary& relations) {
  if (trees.empty()) throw ValidationError("merge_trees needs at least one sentence");
  DependencyGraph g;
  g.relation_count = relations.size();
  std::size_t offset = 0;
  for (const auto& s : trees) {
    for (const auto& t : s.tokens) {
      const std::size_t dep = offset + static_cast<std::size_t>(t.id);
      const std::size_t head = t.head == 0 ? 0 : offset + static_cast<std::size_t>(t.head);
      g.edges.push_back({head, dep, relations.id(t.deprel)});
    }
    offset += s.tokens.size();
  }
  g.node_count = offset + 1;
  return g;
}

// forward keeps head -> dependent, reverse flips every edge, bidirectional
// appends flipped copies whose ids are shifted past the vocabulary.
inline DependencyGraph orient_edges(const DependencyGraph& g, Direction mode) {
  DependencyGraph out = g;
  switch (mode) {
    case Direction::forward:
      if (g.direction == Direction::bidirectional) throw ContractError("cannot re-orient a bidirectional graph");
      if (g.direction == Direction::reverse) {
        for (auto& e : out.edges) std::swap(e.src, e.dst);
      }
      out.direction = Direction::forward;
      break;
    case Direction::reverse:
      if (g.direction == Direction::bidirectional) throw ContractError("cannot re-orient a bidirectional graph");
      for (auto& e : out.edges) std::swap(e.src, e.dst);
      out.direction = g.direction == Direction::reverse ? Direction::forward : Direction::reverse;
      break;
    case Direction::bidirectional:
      if (g.direction != Direction::forward) throw ContractError("bidirectional expects a head->dependent graph");
      for (const auto& e : g.edges)
        out.edges.push_back({e.dst, e.src, e.relation + static_cast<int>(g.relation_count)});
      out.direction = Direction::bidirectional;
      break;
  }
  return out;
}

}  // namespace stmn::language
