#pragma once

#include <random>
#include <set>
#include <string>
#include <vector>

#include "stmn/errors.hpp"
#include "stmn/language/conllu.hpp"
#include "stmn/language/embedding.hpp"
#include "stmn/language/graph.hpp"
#include "stmn/scene/scene.hpp"

// Referring expressions paired with hand-built dependency parses. Slots:
// {color} {cat} describe the target, {color2} {cat2} its nearest neighbor.
namespace stmn::language {

struct TemplateToken {
  std::string form;
  int head = 0;
  std::string deprel;
};

struct ExpressionTemplate {
  std::string name;
  std::vector<std::vector<TemplateToken>> sentences;
  bool needs_neighbor = false;
  bool needs_unique_category = false;
};

inline std::vector<ExpressionTemplate> default_templates() {
  return {
      {"color_cat", {{{"the", 3, "det"}, {"{color}", 3, "amod"}, {"{cat}", 0, "root"}}}, false, false},
      {"cat_only", {{{"the", 2, "det"}, {"{cat}", 0, "root"}}}, false, true},
      {"near",
       {{{"the", 3, "det"},
         {"{color}", 3, "amod"},
         {"{cat}", 0, "root"},
         {"near", 6, "case"},
         {"the", 6, "det"},
         {"{cat2}", 3, "nmod"}}},
       true,
       false},
      {"two_sentence",
       {{{"a", 3, "det"}, {"{color}", 3, "amod"}, {"{cat}", 0, "root"}, {".", 3, "punct"}},
        {{"it", 6, "nsubj"},
         {"is", 6, "cop"},
         {"near", 6, "case"},
         {"the", 6, "det"},
         {"{color2}", 6, "amod"},
         {"{cat2}", 0, "root"},
         {".", 6, "punct"}}},
       true,
       false},
      {"copula", {{{"this", 2, "det"}, {"{cat}", 4, "nsubj"}, {"is", 4, "cop"}, {"{color}", 0, "root"}}}, false, false},
      {"imperative",
       {{{"find", 0, "root"}, {"the", 4, "det"}, {"{color}", 4, "amod"}, {"{cat}", 1, "obj"}}},
       false,
       false},
      {"there_is",
       {{{"there", 2, "expl"}, {"is", 0, "root"}, {"a", 5, "det"}, {"{color}", 5, "amod"}, {"{cat}", 2, "nsubj"},
         {".", 2, "punct"}},
        {{"it", 4, "nsubj"}, {"is", 4, "cop"}, {"beside", 4, "case"}, {"{cat2}", 0, "root"}, {".", 4, "punct"}}},
       true,
       false},
  };
}

struct GeneratedExpression {
  Expression expression;
  std::vector<ConlluSentence> sentences;
  std::string conllu;
  int target_instance = 0;
  std::string tag;  // "unique" | "multiple"
  std::string template_name;
};

inline const scene::ObjectRecord* find_object(const std::vector<scene::ObjectRecord>& objects, int instance) {
  for (const auto& o : objects)
    if (o.instance == instance) return &o;
  return nullptr;
}

// Fills one template for one target. Throws GenerationError when the template
// does not apply to this target.
inline GeneratedExpression instantiate(const ExpressionTemplate& tpl, const std::vector<scene::ObjectRecord>& objects,
                                       const scene::ObjectRecord& target) {
  std::size_t same_category = 0, same_pair = 0;
  for (const auto& o : objects) {
    same_category += o.category == target.category;
    same_pair += o.category == target.category && o.color == target.color;
  }
  if (same_pair != 1) throw GenerationError("target is not uniquely describable by color and category");
  if (tpl.needs_unique_category && same_category != 1) throw GenerationError("category is not unique");
  const scene::ObjectRecord* neighbor = nullptr;
  for (const auto& r : target.relations)
    if (r.type == "near") neighbor = find_object(objects, r.instance);
  if (tpl.needs_neighbor && neighbor == nullptr) throw GenerationError("target has no neighbor");

  GeneratedExpression out;
  out.template_name = tpl.name;
  out.target_instance = target.instance;
  out.tag = same_category == 1 ? "unique" : "multiple";
  for (const auto& sent : tpl.sentences) {
    std::vector<std::string> forms, rels;
    std::vector<int> heads;
    for (const auto& t : sent) {
      std::string f = t.form;
      if (f == "{color}") f = target.color;
      else if (f == "{cat}") f = target.category;
      else if (f == "{color2}") f = neighbor->color;
      else if (f == "{cat2}") f = neighbor->category;
      forms.push_back(f);
      heads.push_back(t.head);
      rels.push_back(t.deprel);
    }
    out.sentences.push_back(make_sentence(forms, heads, rels));
  }
  out.conllu = serialize_conllu(out.sentences);
  out.expression = expression_from_sentences(out.sentences);
  return out;
}

// Picks a random describable target and a random applicable template.
inline GeneratedExpression generate_expression(const std::vector<scene::ObjectRecord>& objects,
                                               const std::vector<ExpressionTemplate>& templates, std::mt19937_64& rng) {
  std::vector<std::size_t> order(objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (auto oi : order) {
    std::vector<GeneratedExpression> options;
    for (const auto& tpl : templates) {
      try {
        options.push_back(instantiate(tpl, objects, objects[oi]));
      } catch (const GenerationError&) {
      }
    }
    if (!options.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
      return options[pick(rng)];
    }
  }
  throw GenerationError("no object in the scene can be described uniquely");
}

// Category ids (1-based palette index) whose names occur among the tokens.
inline std::set<int> mentioned_categories(const Expression& expr, const scene::SceneConfig& config) {
  std::set<int> out;
  for (const auto& tok : expr.tokens)
    for (std::size_t c = 0; c < config.categories.size(); ++c)
      if (normalize_word(tok) == config.categories[c].name) out.insert(static_cast<int>(c) + 1);
  return out;
}

}  // namespace stmn::language
