#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stmn/errors.hpp"
#include "stmn/harness/config.hpp"
#include "stmn/language/conllu.hpp"
#include "stmn/language/expression_gen.hpp"
#include "stmn/scene/scene.hpp"
#include "stmn/scene/superpoints.hpp"

// On-disk synthetic dataset: scenes/, superpoints/, expressions.jsonl and a
// manifest.json tying them together. Paths in the manifest are relative.
namespace stmn::harness {

inline constexpr const char* kDatasetFormat = "stmn-dataset/1";

struct SceneEntry {
  std::string scene_id;
  std::string scene_file;
  std::string superpoint_file;
  std::string split;
};

struct ExpressionRecord {
  std::string expr_id;
  std::string scene_id;
  std::string split;
  int target_instance = 0;
  std::string tag;
  std::string template_name;
  std::string text;
  std::string conllu;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::uint64_t seed = 0;
  std::vector<SceneEntry> scenes;
  std::vector<ExpressionRecord> expressions;

  std::size_t count(const std::string& split) const {
    std::size_t n = 0;
    for (const auto& e : expressions) n += e.split == split;
    return n;
  }
  const SceneEntry& scene(const std::string& id) const {
    for (const auto& s : scenes)
      if (s.scene_id == id) return s;
    throw ValidationError("manifest has no scene " + id);
  }
  std::vector<const ExpressionRecord*> all() const {
    std::vector<const ExpressionRecord*> out;
    for (const auto& e : expressions) out.push_back(&e);
    return out;
  }
  std::vector<const ExpressionRecord*> split(const std::string& name) const {
    std::vector<const ExpressionRecord*> out;
    for (const auto& e : expressions)
      if (e.split == name) out.push_back(&e);
    return out;
  }
};

inline nlohmann::json to_json(const ExpressionRecord& e) {
  return {{"expr_id", e.expr_id}, {"scene_id", e.scene_id},   {"split", e.split},
          {"target_instance", e.target_instance}, {"tag", e.tag}, {"template", e.template_name},
          {"text", e.text},       {"conllu", e.conllu}};
}

inline ExpressionRecord expression_from_json(const nlohmann::json& j) {
  try {
    ExpressionRecord e;
    e.expr_id = j.at("expr_id").get<std::string>();
    e.scene_id = j.at("scene_id").get<std::string>();
    e.split = j.value("split", "");
    e.target_instance = j.value("target_instance", 0);
    e.tag = j.value("tag", "");
    e.template_name = j.value("template", "");
    e.text = j.value("text", "");
    e.conllu = j.at("conllu").get<std::string>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed expression record: ") + ex.what());
  }
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string scene_name(std::size_t i) {
  std::ostringstream s;
  s << "scene_" << std::setw(4) << std::setfill('0') << i;
  return s.str();
}

}  // namespace detail

// Generates scenes until both splits hold the requested number of expressions.
inline DatasetManifest make_dataset(const RunConfig& config, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  config.validate();
  std::error_code ec;
  fs::create_directories(root / "scenes", ec);
  fs::create_directories(root / "superpoints", ec);
  if (ec) throw IoError("cannot create dataset directories under " + root.string() + ": " + ec.message());

  DatasetManifest m;
  m.root = root;
  m.seed = config.seed;
  std::mt19937_64 rng(config.seed);
  const auto scene_cfg = config.scene_config();
  const auto templates = language::default_templates();
  std::size_t scene_index = 0;
  for (const std::string split : {"train", "val"}) {
    const std::size_t wanted = split == "train" ? config.data.train_expressions : config.data.val_expressions;
    std::size_t have = 0;
    std::size_t failures = 0;
    while (have < wanted) {
      const std::string id = detail::scene_name(scene_index);
      const std::uint64_t scene_seed = rng();
      scene::GeneratedScene g;
      try {
        g = scene::generate_scene(scene_cfg, scene_seed, id);
      } catch (const GenerationError&) {
        if (++failures > 100) throw;
        continue;
      }
      std::vector<language::GeneratedExpression> picked;
      std::set<std::pair<int, std::string>> used;
      const std::size_t take = std::min(config.data.expressions_per_scene, wanted - have);
      for (std::size_t attempt = 0; attempt < 8 * take && picked.size() < take; ++attempt) {
        language::GeneratedExpression e;
        try {
          e = language::generate_expression(g.objects, templates, rng);
        } catch (const GenerationError&) {
          break;
        }
        if (used.insert({e.target_instance, e.template_name}).second) picked.push_back(std::move(e));
      }
      if (picked.empty()) {
        if (++failures > 100) throw GenerationError("could not generate describable scenes");
        continue;
      }
      SceneEntry entry{id, "scenes/" + id + ".json", "superpoints/" + id + ".json", split};
      scene::write_scene((root / entry.scene_file).string(), g);
      const auto partition = scene::build_superpoints(g.scene, config.data.superpoints);
      scene::write_superpoints((root / entry.superpoint_file).string(), id, partition);
      for (std::size_t k = 0; k < picked.size(); ++k) {
        ExpressionRecord r;
        r.expr_id = id + "_e" + std::to_string(k);
        r.scene_id = id;
        r.split = split;
        r.target_instance = picked[k].target_instance;
        r.tag = picked[k].tag;
        r.template_name = picked[k].template_name;
        r.text = picked[k].expression.raw_text;
        r.conllu = picked[k].conllu;
        m.expressions.push_back(std::move(r));
      }
      have += picked.size();
      m.scenes.push_back(std::move(entry));
      ++scene_index;
    }
  }

  std::string lines;
  for (const auto& e : m.expressions) lines += to_json(e).dump() + "\n";
  detail::write_text(root / "expressions.jsonl", lines);
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& s : m.scenes) {
    scenes.push_back(
        {{"scene_id", s.scene_id}, {"scene_file", s.scene_file}, {"superpoints", s.superpoint_file}, {"split", s.split}});
  }
  nlohmann::json manifest{{"format", kDatasetFormat},
                          {"seed", config.seed},
                          {"expressions_file", "expressions.jsonl"},
                          {"counts", {{"train", m.count("train")}, {"val", m.count("val")}}},
                          {"generator", to_json(config)["data"]},
                          {"scenes", scenes}};
  detail::write_text(root / "manifest.json", manifest.dump(2) + "\n");
  return m;
}

inline DatasetManifest load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const auto manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open dataset manifest " + manifest_path.string());
  DatasetManifest m;
  m.root = root;
  std::string expressions_file;
  try {
    auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != kDatasetFormat) throw ValidationError("unsupported dataset format");
    m.seed = j.value("seed", std::uint64_t{0});
    expressions_file = j.at("expressions_file").get<std::string>();
    for (const auto& s : j.at("scenes")) {
      m.scenes.push_back({s.at("scene_id").get<std::string>(), s.at("scene_file").get<std::string>(),
                          s.at("superpoints").get<std::string>(), s.at("split").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  std::set<std::string> ids;
  for (const auto& s : m.scenes) {
    if (!ids.insert(s.scene_id).second) throw ValidationError(manifest_path.string() + ": duplicate scene " + s.scene_id);
    for (const auto& f : {s.scene_file, s.superpoint_file})
      if (!fs::exists(root / f)) throw IoError("dataset file missing: " + (root / f).string());
  }
  std::ifstream ein(root / expressions_file);
  if (!ein) throw IoError("cannot open " + (root / expressions_file).string());
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> expr_ids;
  while (std::getline(ein, line)) {
    ++line_no;
    if (line.empty()) continue;
    ExpressionRecord r;
    try {
      r = expression_from_json(nlohmann::json::parse(line));
      language::parse_conllu(r.conllu);
    } catch (const std::exception& e) {
      throw ValidationError((root / expressions_file).string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const auto& sc = m.scene(r.scene_id);
    if (sc.split != r.split) {
      throw ValidationError("expression " + r.expr_id + " is in split " + r.split + " but its scene is in " +
                            sc.split);
    }
    if (!expr_ids.insert(r.expr_id).second) throw ValidationError("duplicate expression id " + r.expr_id);
    m.expressions.push_back(std::move(r));
  }
  return m;
}

}  // namespace stmn::harness
