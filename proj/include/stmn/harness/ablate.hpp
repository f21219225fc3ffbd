#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stmn/harness/evaluate.hpp"
#include "stmn/harness/train.hpp"

namespace stmn::harness {

struct AblationVariant {
  std::string name;
  nlohmann::json delta;  // partial config applied on top of the base
};

// Named grids over the ablation axes. The "without DDI" row pairs use_ddi=false with CLS kernels.
inline std::vector<AblationVariant> ablation_grid(const std::string& name) {
  auto structure = [](const char* s) { return nlohmann::json{{"ddi", {{"structure", s}}}}; };
  const AblationVariant no_ddi{"w/o DDI", {{"stm", {{"use_ddi", false}, {"kernel_strategy", "CLS"}}}}};
  if (name == "structure") {
    return {no_ddi,
            {"GA", structure("GA")},
            {"SA_GA", structure("SA_GA")},
            {"GA_SA", structure("GA_SA")},
            {"GA_PAR_SA", structure("GA_PAR_SA")}};
  }
  if (name == "kernel") {
    std::vector<AblationVariant> out{no_ddi};
    for (const char* k : {"Root", "Avg", "Top1"}) out.push_back({k, {{"stm", {{"kernel_strategy", k}}}}});
    return out;
  }
  if (name == "direction") {
    std::vector<AblationVariant> out;
    for (const char* d : {"forward", "reverse", "bidirectional"}) out.push_back({d, {{"ddi", {{"direction", d}}}}});
    return out;
  }
  if (name == "sampling") {
    std::vector<AblationVariant> out;
    for (int k : {16, 32, 64, 128}) out.push_back({"k_rel=" + std::to_string(k), {{"stm", {{"k_rel", k}}}}});
    return out;
  }
  if (name == "headline") return {no_ddi, {"GA", structure("GA")}, {"GA_PAR_SA", structure("GA_PAR_SA")}};
  throw ConfigError("unknown ablation grid '" + name + "' (expected structure, kernel, direction, sampling or headline)");
}

// A grid file is either a grid name string or a list of {"name", "delta"} objects.
inline std::vector<AblationVariant> ablation_grid_from_json(const nlohmann::json& j) {
  if (j.is_string()) return ablation_grid(j.get<std::string>());
  if (!j.is_array() || j.empty()) throw ConfigError("ablation grid must be a grid name or a nonempty list");
  std::vector<AblationVariant> out;
  for (const auto& v : j) {
    if (!v.is_object() || !v.contains("name") || !v.contains("delta") || !v.at("name").is_string()) {
      throw ConfigError("each ablation variant needs a string 'name' and an object 'delta'");
    }
    out.push_back({v.at("name").get<std::string>(), v.at("delta")});
  }
  return out;
}

struct AblationRow {
  std::string name;
  std::uint64_t seed = 0;
  nlohmann::json metrics;
};

inline std::string variant_dir(const std::string& name) {
  std::string out;
  for (char c : name) out += std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ? c : '_';
  return out;
}

inline std::vector<AblationRow> run_ablation(const RunConfig& base, const DatasetManifest& manifest,
                                             const std::vector<AblationVariant>& variants,
                                             const std::filesystem::path& out) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    const RunConfig cfg = config_from_json(v.delta, base);
    TrainOptions opts;
    opts.out = out / variant_dir(v.name);
    auto trained = train(cfg, manifest, opts);
    auto report = evaluate(*trained.model, manifest, "val");
    rows.push_back({v.name, cfg.seed, report.metrics});
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s.precision(17);
  s << "variant,seed,mIoU,acc_at_025,acc_at_05,unique_mIoU,multiple_mIoU,n_expressions\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    s << '"' << r.name << "\"," << r.seed << ',' << m.at("mIoU").get<double>() << ','
      << m.at("acc_at_025").get<double>() << ',' << m.at("acc_at_05").get<double>() << ','
      << m.at("per_tag").at("unique").at("mIoU").get<double>() << ','
      << m.at("per_tag").at("multiple").at("mIoU").get<double>() << ',' << m.at("n_expressions").get<std::size_t>()
      << "\n";
  }
  return s.str();
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back({{"variant", r.name}, {"seed", r.seed}, {"metrics", r.metrics}});
  return out;
}

}  // namespace stmn::harness
