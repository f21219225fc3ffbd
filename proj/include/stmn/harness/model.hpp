#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stmn/errors.hpp"
#include "stmn/harness/config.hpp"
#include "stmn/harness/dataset.hpp"
#include "stmn/language/conllu.hpp"
#include "stmn/language/embedding.hpp"
#include "stmn/language/expression_gen.hpp"
#include "stmn/language/graph.hpp"
#include "stmn/language/laplacian.hpp"
#include "stmn/numerics/adam.hpp"
#include "stmn/numerics/checkpoint.hpp"
#include "stmn/objective/losses.hpp"
#include "stmn/scene/encoder.hpp"
#include "stmn/scene/superpoints.hpp"
#include "stmn/stm/stm.hpp"

namespace stmn::harness {

// Everything about a scene that does not depend on trainable parameters.
struct PreparedScene {
  std::string scene_id;
  Tensor input;  // N_p x 9
  NeighborLists neighbors;
  scene::SuperpointPartition partition;
  std::vector<int> instance_id;
  std::vector<int> category_id;
};

inline PreparedScene prepare_scene(const scene::PointCloudScene& s, scene::SuperpointPartition partition,
                                   std::size_t encoder_knn) {
  if (partition.points() != s.size()) {
    throw ValidationError("superpoint partition covers " + std::to_string(partition.points()) +
                          " points but scene " + s.scene_id + " has " + std::to_string(s.size()));
  }
  PreparedScene p;
  p.scene_id = s.scene_id;
  p.input = scene::encoder_input(s);
  p.neighbors = scene::knn_lists(s, encoder_knn);
  p.partition = std::move(partition);
  p.instance_id = s.instance_id;
  p.category_id = s.category_id;
  return p;
}

struct PreparedExpression {
  std::string expr_id;
  std::string scene_id;
  std::string tag;
  int target_instance = -1;  // -1 when there is no ground truth
  language::Expression expression;
  language::DependencyGraph graph;  // oriented
  Tensor pe;                        // canonical signs
  std::set<int> mentioned;
};

inline std::vector<std::string> relation_labels(const std::vector<language::ConlluSentence>& sentences) {
  std::vector<std::string> out;
  for (const auto& s : sentences)
    for (const auto& t : s.tokens) out.push_back(t.deprel);
  return out;
}

using objective::GroundTruth;

inline GroundTruth make_ground_truth(const PreparedScene& s, const PreparedExpression& e) {
  GroundTruth gt;
  gt.point_mask.resize(s.instance_id.size());
  for (std::size_t i = 0; i < gt.point_mask.size(); ++i) gt.point_mask[i] = s.instance_id[i] == e.target_instance;
  gt.sp_mask = scene::pool_gt_mask(gt.point_mask, s.partition);
  gt.relevance = objective::relevance_labels(s.partition, s.category_id, e.mentioned);
  return gt;
}

struct ForwardResult {
  stm::StmOutput stm;
  std::vector<double> sp_probs;     // N_s
  std::vector<double> point_mask;   // N_p, 0/1
};

struct LossResult {
  Tensor total;
  double bce = 0, dice = 0, rel = 0, score = 0;
  double sp_iou = 0;
};

class Model {
 public:
  RunConfig config;
  language::WordVocabulary words;
  language::RelationVocabulary relations;
  ParamStore params;
  stm::StmParams stm;

  Model(const RunConfig& cfg, language::WordVocabulary word_vocab, language::RelationVocabulary relation_vocab,
        std::mt19937_64& rng)
      : config(cfg), words(std::move(word_vocab)), relations(std::move(relation_vocab)) {
    config.validate();
    scene::register_encoder(params, config.model.c_p, rng);
    language::register_embeddings(params, words.size(), config.model.c_t, rng);
    stm::StmDims dims;
    dims.c_p = config.model.c_p;
    dims.c_t = config.model.c_t;
    dims.d = config.model.d;
    dims.d_h = config.model.d_h;
    dims.k_pe = config.model.k_pe;
    dims.relation_ids = relations.size() * (config.direction() == language::Direction::bidirectional ? 2 : 1);
    dims.structure = config.structure();
    dims.heads = config.ddi.heads;
    stm = stm::register_stm(params, dims, config.stm_settings(), rng);
  }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  PreparedExpression prepare_expression(const std::string& conllu, const std::string& expr_id = "",
                                        const std::string& scene_id = "", int target = -1,
                                        const std::string& tag = "") const {
    PreparedExpression p;
    const auto sentences = language::parse_conllu(conllu);
    p.expr_id = expr_id;
    p.scene_id = scene_id;
    p.tag = tag;
    p.target_instance = target;
    p.expression = language::expression_from_sentences(sentences);
    p.graph = language::orient_edges(language::merge_trees(sentences, relations), config.direction());
    p.pe = language::laplacian_pe(p.graph, config.model.k_pe).encoding;
    p.mentioned = language::mentioned_categories(p.expression, config.scene_config());
    return p;
  }

  PreparedExpression prepare_expression(const ExpressionRecord& r) const {
    return prepare_expression(r.conllu, r.expr_id, r.scene_id, r.target_instance, r.tag);
  }

  // Superpoint features for a prepared scene.
  Tensor scene_features(const PreparedScene& s) const {
    return scene::superpoint_pool(scene::encode_points(s.input, s.neighbors, params), s.partition);
  }

  ForwardResult match(const Tensor& superpoints, const scene::SuperpointPartition& partition,
                      const PreparedExpression& e, std::mt19937_64* pe_rng = nullptr) const {
    const auto emb = language::embed_tokens(e.expression, words, params);
    stm::ExpressionInput in{emb.words, params.get("text.root"), emb.cls, e.graph, e.pe};
    if (pe_rng != nullptr) in.pe = flip_columns(e.pe, *pe_rng);
    ForwardResult r;
    r.stm = stm::stm_forward(superpoints, in, stm, config.stm_settings(), config.loss.aux);
    r.sp_probs = r.stm.final_map.to_vector();
    r.point_mask = scene::expand_mask(objective::binarize(r.sp_probs), partition);
    return r;
  }

  ForwardResult forward(const PreparedScene& s, const PreparedExpression& e, std::mt19937_64* pe_rng = nullptr) const {
    return match(scene_features(s), s.partition, e, pe_rng);
  }

  LossResult loss(const ForwardResult& f, const GroundTruth& gt, std::size_t n_words) const {
    LossResult r;
    const auto& w = config.loss.weights;
    const Tensor& m = f.stm.final_map;
    r.sp_iou = objective::mask_iou(objective::binarize(f.sp_probs), gt.sp_mask);
    objective::LossComponents c{objective::bce_loss(m, gt.sp_mask), objective::dice_loss(m, gt.sp_mask),
                                objective::rel_loss(f.stm.relevance.s_r, n_words, gt.relevance),
                                objective::score_loss(f.stm.quality, r.sp_iou)};
    r.bce = c.bce.item();
    r.dice = c.dice.item();
    r.rel = c.rel.item();
    r.score = c.score.item();
    r.total = objective::total_loss(c, w);
    if (config.loss.aux) {
      for (std::size_t l = 0; l + 1 < f.stm.rounds.size(); ++l) {
        const Tensor& ml = f.stm.rounds[l].kernel.map;
        r.total = add(r.total, add(scale(objective::bce_loss(ml, gt.sp_mask), w.bce),
                                   scale(objective::dice_loss(ml, gt.sp_mask), w.dice)));
      }
    }
    return r;
  }

  static Tensor flip_columns(const Tensor& pe, std::mt19937_64& rng) {
    std::vector<double> v = pe.to_vector();
    const std::size_t rows = pe.rows(), cols = pe.cols();
    for (std::size_t c = 0; c < cols; ++c) {
      if (!std::bernoulli_distribution(0.5)(rng)) continue;
      for (std::size_t r = 0; r < rows; ++r) v[r * cols + c] = -v[r * cols + c];
    }
    return Tensor::matrix(rows, cols, std::move(v));
  }

  std::vector<NamedArray> arrays() const {
    std::vector<NamedArray> out;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = params.tensors()[i];
      out.push_back({params.names()[i], t.shape(), t.to_vector()});
    }
    return out;
  }

  nlohmann::json metadata() const {
    return {{"config", to_json(config)}, {"words", words.words()}, {"relations", relations.labels()}};
  }

  // Overwrites every parameter from a checkpoint; names and shapes must match.
  void load_arrays(const LoadedCheckpoint& ck) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& name = params.names()[i];
      const auto* a = ck.find(name);
      auto& t = params.tensors()[i];
      if (a == nullptr) throw ValidationError("checkpoint lacks parameter " + name);
      if (a->shape != t.shape()) {
        throw ValidationError("checkpoint parameter " + name + " has shape " + shape_str(a->shape) + ", expected " +
                              shape_str(t.shape()));
      }
      std::copy(a->values.begin(), a->values.end(), t.mutable_data().begin());
    }
  }
};

inline language::WordVocabulary vocabulary_from_records(const std::vector<const ExpressionRecord*>& records) {
  std::vector<std::string> forms;
  for (const auto* r : records)
    for (const auto& s : language::parse_conllu(r->conllu))
      for (const auto& t : s.tokens) forms.push_back(t.form);
  return language::WordVocabulary::from_words(forms);
}

inline language::RelationVocabulary relations_from_records(const std::vector<const ExpressionRecord*>& records) {
  std::vector<std::string> labels;
  for (const auto* r : records) {
    auto more = relation_labels(language::parse_conllu(r->conllu));
    labels.insert(labels.end(), more.begin(), more.end());
  }
  return language::RelationVocabulary::universal_plus(labels);
}

struct LoadedModel {
  std::unique_ptr<Model> model;
  nlohmann::json extra;
};

inline LoadedModel load_model(const std::string& path) {
  auto ck = load_checkpoint(path);
  try {
    const auto cfg = config_from_json(ck.extra.at("config"));
    auto words = language::WordVocabulary::from_words(ck.extra.at("words").get<std::vector<std::string>>());
    auto relations =
        language::RelationVocabulary::from_labels(ck.extra.at("relations").get<std::vector<std::string>>());
    std::mt19937_64 rng(cfg.seed);
    LoadedModel out{std::make_unique<Model>(cfg, std::move(words), std::move(relations), rng), ck.extra};
    out.model->load_arrays(ck);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": checkpoint metadata is malformed: " + e.what());
  }
}

// Scenes of a manifest, prepared once and shared by every expression.
class SceneCache {
 public:
  SceneCache(const DatasetManifest& m, std::size_t encoder_knn) : manifest_(m), knn_(encoder_knn) {}

  const PreparedScene& get(const std::string& scene_id) {
    auto it = cache_.find(scene_id);
    if (it != cache_.end()) return it->second;
    const auto& entry = manifest_.scene(scene_id);
    auto g = scene::read_scene((manifest_.root / entry.scene_file).string());
    auto part = scene::read_superpoints((manifest_.root / entry.superpoint_file).string(), scene_id, g.scene.size());
    return cache_.emplace(scene_id, prepare_scene(g.scene, std::move(part), knn_)).first->second;
  }

 private:
  const DatasetManifest& manifest_;
  std::size_t knn_;
  std::map<std::string, PreparedScene> cache_;
};

}  // namespace stmn::harness
