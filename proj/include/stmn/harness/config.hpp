#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stmn/ddi/ddi.hpp"
#include "stmn/errors.hpp"
#include "stmn/language/graph.hpp"
#include "stmn/numerics/adam.hpp"
#include "stmn/objective/losses.hpp"
#include "stmn/scene/scene.hpp"
#include "stmn/scene/superpoints.hpp"
#include "stmn/stm/stm.hpp"

namespace stmn::harness {

struct ModelSection {
  std::size_t c_p = 32;
  std::size_t c_t = 64;
  std::size_t d = 64;
  std::size_t d_h = 256;
  std::size_t k_pe = 8;
  std::size_t encoder_knn = 10;
};

struct StmSection {
  std::size_t rounds = 6;
  std::size_t k_rel = 64;
  double tau = 0.5;
  std::string kernel_strategy = "Top1";
  bool use_ddi = true;
  bool swa_residual = false;
};

struct DdiSection {
  std::string structure = "GA_PAR_SA";
  std::string direction = "reverse";
  std::size_t heads = 1;
};

struct OptimSection {
  double lr = 1e-4;
  std::vector<int> decay_epochs{26, 34, 40};
  double decay_factor = 0.5;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  double clip_norm = 1.0;  // 0 disables clipping
  bool pe_sign_flip = true;
};

struct DataSection {
  std::string root = "data";
  std::size_t train_expressions = 200;
  std::size_t val_expressions = 50;
  std::size_t expressions_per_scene = 4;
  std::size_t n_points = 4096;
  int min_objects = 3;
  int max_objects = 6;
  scene::SuperpointParams superpoints;
};

struct LossSection {
  objective::LossWeights weights;
  bool aux = false;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelSection model;
  StmSection stm;
  DdiSection ddi;
  OptimSection optim;
  DataSection data;
  LossSection loss;

  stm::StmSettings stm_settings() const {
    stm::StmSettings s;
    s.rounds = stm.rounds;
    s.k_rel = stm.k_rel;
    s.tau = stm.tau;
    s.strategy = stm::kernel_strategy_from_string(stm.kernel_strategy);
    s.use_ddi = stm.use_ddi;
    s.swa_residual = stm.swa_residual;
    return s;
  }
  language::Direction direction() const { return language::direction_from_string(ddi.direction); }
  ddi::Structure structure() const { return ddi::structure_from_string(ddi.structure); }
  LrSchedule schedule() const { return {optim.lr, optim.decay_epochs, optim.decay_factor}; }

  scene::SceneConfig scene_config() const {
    scene::SceneConfig c;
    c.n_points = data.n_points;
    c.min_objects = data.min_objects;
    c.max_objects = data.max_objects;
    return c;
  }

  // Throws ConfigError on the first inconsistent setting.
  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError(what);
    };
    require(model.c_p > 0 && model.c_t > 0 && model.d > 0 && model.d_h > 0 && model.k_pe > 0,
            "model dimensions must be positive");
    require(model.encoder_knn > 0, "model.encoder_knn must be positive");
    require(stm.rounds >= 1, "stm.rounds must be at least 1");
    require(stm.k_rel >= 1, "stm.k_rel must be at least 1");
    require(stm.tau > 0.0 && stm.tau < 1.0, "stm.tau must lie in (0, 1)");
    stm_settings();
    direction();
    structure();
    require(ddi.heads >= 1 && model.d % ddi.heads == 0, "ddi.heads must divide model.d");
    require(optim.lr > 0.0, "optim.lr must be positive");
    require(optim.decay_factor > 0.0, "optim.decay_factor must be positive");
    require(optim.batch_size >= 1, "optim.batch_size must be at least 1");
    require(optim.clip_norm >= 0.0, "optim.clip_norm must be nonnegative");
    require(data.expressions_per_scene >= 1, "data.expressions_per_scene must be at least 1");
    require(data.train_expressions + data.val_expressions > 0, "the dataset must contain expressions");
    require(data.min_objects >= 1 && data.min_objects <= data.max_objects, "data object counts are inconsistent");
    require(data.n_points >= 100, "data.n_points must be at least 100");
    const auto& w = loss.weights;
    require(w.bce >= 0 && w.dice >= 0 && w.rel >= 0 && w.score >= 0, "loss weights must be nonnegative");
  }
};

namespace detail {

// Reads known keys from one JSON object and rejects anything else.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key " + name_ + "." + key + " has the wrong type");
    }
  }

  const nlohmann::json* section(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw ConfigError("unknown config key " + (name_.empty() ? k : name_ + "." + k));
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& sp = c.data.superpoints;
  const auto& w = c.loss.weights;
  return {
      {"seed", c.seed},
      {"model",
       {{"c_p", c.model.c_p}, {"c_t", c.model.c_t}, {"d", c.model.d}, {"d_h", c.model.d_h},
        {"k_pe", c.model.k_pe}, {"encoder_knn", c.model.encoder_knn}}},
      {"stm",
       {{"rounds", c.stm.rounds}, {"k_rel", c.stm.k_rel}, {"tau", c.stm.tau},
        {"kernel_strategy", c.stm.kernel_strategy}, {"use_ddi", c.stm.use_ddi}, {"swa_residual", c.stm.swa_residual}}},
      {"ddi", {{"structure", c.ddi.structure}, {"direction", c.ddi.direction}, {"heads", c.ddi.heads}}},
      {"optim",
       {{"lr", c.optim.lr}, {"decay_epochs", c.optim.decay_epochs}, {"decay_factor", c.optim.decay_factor},
        {"batch_size", c.optim.batch_size}, {"epochs", c.optim.epochs}, {"clip_norm", c.optim.clip_norm},
        {"pe_sign_flip", c.optim.pe_sign_flip}}},
      {"data",
       {{"root", c.data.root},
        {"train_expressions", c.data.train_expressions},
        {"val_expressions", c.data.val_expressions},
        {"expressions_per_scene", c.data.expressions_per_scene},
        {"n_points", c.data.n_points},
        {"min_objects", c.data.min_objects},
        {"max_objects", c.data.max_objects},
        {"superpoints",
         {{"knn", sp.knn}, {"spatial_w", sp.spatial_w}, {"color_w", sp.color_w}, {"normal_w", sp.normal_w},
          {"threshold", sp.threshold}, {"max_cell", sp.max_cell}}}}},
      {"loss", {{"bce", w.bce}, {"dice", w.dice}, {"rel", w.rel}, {"score", w.score}, {"aux", c.loss.aux}}},
  };
}

// Missing keys keep their defaults; `base` supplies them.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  detail::SectionReader top(j, "");
  top.read("seed", c.seed);
  if (auto* s = top.section("model")) {
    detail::SectionReader r(*s, "model");
    r.read("c_p", c.model.c_p);
    r.read("c_t", c.model.c_t);
    r.read("d", c.model.d);
    r.read("d_h", c.model.d_h);
    r.read("k_pe", c.model.k_pe);
    r.read("encoder_knn", c.model.encoder_knn);
    r.finish();
  }
  if (auto* s = top.section("stm")) {
    detail::SectionReader r(*s, "stm");
    r.read("rounds", c.stm.rounds);
    r.read("k_rel", c.stm.k_rel);
    r.read("tau", c.stm.tau);
    r.read("kernel_strategy", c.stm.kernel_strategy);
    r.read("use_ddi", c.stm.use_ddi);
    r.read("swa_residual", c.stm.swa_residual);
    r.finish();
  }
  if (auto* s = top.section("ddi")) {
    detail::SectionReader r(*s, "ddi");
    r.read("structure", c.ddi.structure);
    r.read("direction", c.ddi.direction);
    r.read("heads", c.ddi.heads);
    r.finish();
  }
  if (auto* s = top.section("optim")) {
    detail::SectionReader r(*s, "optim");
    r.read("lr", c.optim.lr);
    r.read("decay_epochs", c.optim.decay_epochs);
    r.read("decay_factor", c.optim.decay_factor);
    r.read("batch_size", c.optim.batch_size);
    r.read("epochs", c.optim.epochs);
    r.read("clip_norm", c.optim.clip_norm);
    r.read("pe_sign_flip", c.optim.pe_sign_flip);
    r.finish();
  }
  if (auto* s = top.section("data")) {
    detail::SectionReader r(*s, "data");
    r.read("root", c.data.root);
    r.read("train_expressions", c.data.train_expressions);
    r.read("val_expressions", c.data.val_expressions);
    r.read("expressions_per_scene", c.data.expressions_per_scene);
    r.read("n_points", c.data.n_points);
    r.read("min_objects", c.data.min_objects);
    r.read("max_objects", c.data.max_objects);
    if (auto* sp = r.section("superpoints")) {
      detail::SectionReader q(*sp, "data.superpoints");
      q.read("knn", c.data.superpoints.knn);
      q.read("spatial_w", c.data.superpoints.spatial_w);
      q.read("color_w", c.data.superpoints.color_w);
      q.read("normal_w", c.data.superpoints.normal_w);
      q.read("threshold", c.data.superpoints.threshold);
      q.read("max_cell", c.data.superpoints.max_cell);
      q.finish();
    }
    r.finish();
  }
  if (auto* s = top.section("loss")) {
    detail::SectionReader r(*s, "loss");
    r.read("bce", c.loss.weights.bce);
    r.read("dice", c.loss.weights.dice);
    r.read("rel", c.loss.weights.rel);
    r.read("score", c.loss.weights.score);
    r.read("aux", c.loss.aux);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": malformed JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace stmn::harness
