#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stmn/stmn.hpp"

namespace fs = std::filesystem;
using namespace stmn;
using namespace stmn::harness;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "Overrides the configured seed");
  cmd->add_option("--out", f.out, "Output location");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  c.validate();
  return c;
}

fs::path data_root(const RunConfig& c) {
  if (const char* env = std::getenv("STMN_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return c.data.root;
}

fs::path output_dir(const CommonFlags& f, const char* fallback) {
  const fs::path dir = f.out.empty() ? fs::path(fallback) : fs::path(f.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string jsonl(const std::vector<PredictionRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

int cmd_make_dataset(const CommonFlags& f) {
  const auto cfg = resolve_config(f);
  const fs::path root = f.out.empty() ? data_root(cfg) : fs::path(f.out);
  const auto m = make_dataset(cfg, root);
  std::cout << nlohmann::json{{"root", root.string()},
                              {"scenes", m.scenes.size()},
                              {"train", m.count("train")},
                              {"val", m.count("val")}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(const CommonFlags& f, const std::string& resume, bool eval_each_epoch) {
  const auto cfg = resolve_config(f);
  const auto manifest = load_dataset(data_root(cfg));
  TrainOptions opts;
  opts.out = output_dir(f, "runs/train");
  opts.resume = resume;
  opts.eval_each_epoch = eval_each_epoch;
  opts.on_epoch = [](const nlohmann::json& e) {
    auto brief = e;
    brief.erase("batch_losses");
    std::cerr << brief.dump() << "\n";
  };
  const auto result = train(cfg, manifest, opts);
  std::cout << nlohmann::json{{"checkpoint", result.checkpoint.string()}, {"epochs", result.log.size()}}.dump()
            << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, const std::string& split, std::size_t workers) {
  auto loaded = load_model(checkpoint);
  RunConfig cfg = loaded.model->config;
  if (!f.config.empty()) cfg.data.root = load_config(f.config).data.root;
  const auto manifest = load_dataset(data_root(cfg));
  const auto report = evaluate(*loaded.model, manifest, split, workers);
  const auto dir = output_dir(f, "runs/eval");
  write_file(dir / "metrics.json", report.metrics.dump(2) + "\n");
  write_file(dir / "predictions.jsonl", jsonl(report.predictions));
  std::cout << report.metrics.dump() << "\n";
  return 0;
}

ExpressionRecord read_expression(const fs::path& path) {
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
    auto r = expression_from_json(j);
    if (!j.contains("target_instance")) r.target_instance = -1;
    return r;
  }
  ExpressionRecord r;
  r.expr_id = path.stem().string();
  r.target_instance = -1;
  r.conllu = text;
  return r;
}

int cmd_infer(const CommonFlags& f, const std::string& checkpoint, const std::string& scene_path,
              const std::string& superpoint_path, const std::string& expression_path) {
  auto loaded = load_model(checkpoint);
  const Model& model = *loaded.model;
  const auto g = scene::read_scene(scene_path);
  auto partition = superpoint_path.empty()
                       ? scene::build_superpoints(g.scene, model.config.data.superpoints)
                       : scene::read_superpoints(superpoint_path, g.scene.scene_id, g.scene.size());
  const auto prepared = prepare_scene(g.scene, std::move(partition), model.config.model.encoder_knn);
  auto record = read_expression(expression_path);
  if (record.scene_id.empty()) record.scene_id = g.scene.scene_id;
  PreparedExpression expr;
  try {
    expr = model.prepare_expression(record);
  } catch (const ValidationError& e) {
    throw ValidationError(expression_path + ": " + e.what());
  }
  std::optional<GroundTruth> gt;
  if (record.target_instance >= 0) gt = make_ground_truth(prepared, expr);
  const auto r = predict(model, prepared, expr, gt ? &gt->point_mask : nullptr);
  const std::string line = to_json(r).dump() + "\n";
  if (f.out.empty()) {
    std::cout << line;
  } else {
    write_file(f.out, line);
  }
  return 0;
}

int cmd_ablate(const CommonFlags& f, const std::string& grid) {
  const auto cfg = resolve_config(f);
  const auto manifest = load_dataset(data_root(cfg));
  std::vector<AblationVariant> variants;
  if (fs::exists(grid)) {
    try {
      variants = ablation_grid_from_json(nlohmann::json::parse(read_file(grid)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(grid + ": " + e.what());
    }
  } else {
    variants = ablation_grid(grid);
  }
  const auto dir = output_dir(f, "runs/ablate");
  const auto rows = run_ablation(cfg, manifest, variants, dir);
  write_file(dir / "ablation.csv", ablation_csv(rows));
  write_file(dir / "ablation.json", ablation_json(rows).dump(2) + "\n");
  std::cout << ablation_csv(rows);
  return 0;
}

int cmd_bench(const CommonFlags& f, const std::string& checkpoint, std::size_t runs, const std::string& split) {
  std::unique_ptr<Model> model;
  RunConfig cfg = resolve_config(f);
  const auto manifest = load_dataset(data_root(cfg));
  if (!checkpoint.empty()) {
    model = load_model(checkpoint).model;
  } else {
    std::mt19937_64 rng(cfg.seed);
    model = std::make_unique<Model>(cfg, vocabulary_from_records(manifest.split("train")),
                                    relations_from_records(manifest.all()), rng);
  }
  SceneCache scenes(manifest, model->config.model.encoder_knn);
  auto records = manifest.split(split);
  if (records.empty()) throw ValidationError("dataset has no expressions in split '" + split + "'");
  const auto samples = make_samples(*model, scenes, records);
  const auto result = run_bench(*model, samples, runs);
  const auto j = to_json(result);
  if (!f.out.empty()) write_file(output_dir(f, "runs/bench") / "bench.json", j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_gradcheck(const CommonFlags& f, double tolerance) {
  const std::uint64_t seed = f.seed.value_or(0);
  nlohmann::json report = nlohmann::json::array();
  bool ok = true;
  for (const auto& e : full_gradcheck_suite(seed)) {
    const bool pass = e.max_rel_error <= tolerance;
    ok = ok && pass;
    report.push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error}, {"entries", e.entries}, {"pass", pass}});
    std::cout << (pass ? "ok   " : "FAIL ") << e.name << " max_rel_error=" << e.max_rel_error << "\n";
  }
  if (!f.out.empty()) write_file(output_dir(f, "runs/gradcheck") / "gradcheck.json", report.dump(2) + "\n");
  if (!ok) throw NumericalError("gradient check exceeded tolerance " + std::to_string(tolerance));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Superpoint-text matching for 3D referring segmentation"};
  app.require_subcommand(1);

  CommonFlags make_f, train_f, eval_f, infer_f, ablate_f, bench_f, grad_f;
  auto* make_cmd = app.add_subcommand("make-dataset", "Generate a synthetic dataset");
  add_common(make_cmd, make_f);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd, train_f);
  std::string resume;
  bool eval_each_epoch = false;
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train_cmd->add_flag("--eval-each-epoch", eval_each_epoch, "Log validation metrics after every epoch");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval_cmd, eval_f);
  std::string eval_ckpt, eval_split = "val";
  std::size_t workers = 1;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--split", eval_split, "Dataset split");
  eval_cmd->add_option("--workers", workers, "Evaluation threads")->check(CLI::PositiveNumber);

  auto* infer_cmd = app.add_subcommand("infer", "Segment one expression in one scene");
  add_common(infer_cmd, infer_f);
  std::string infer_ckpt, scene_path, superpoint_path, expression_path;
  infer_cmd->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required();
  infer_cmd->add_option("--scene", scene_path, "Scene JSON")->required();
  infer_cmd->add_option("--superpoints", superpoint_path, "Superpoint cache; computed when omitted");
  infer_cmd->add_option("--expression", expression_path, "Expression record JSON or CoNLL-U file")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate a grid of variants");
  add_common(ablate_cmd, ablate_f);
  std::string grid = "headline";
  ablate_cmd->add_option("--grid", grid, "Grid name or JSON file of variants");

  auto* bench_cmd = app.add_subcommand("bench", "Latency of superpoint versus point matching");
  add_common(bench_cmd, bench_f);
  std::string bench_ckpt, bench_split = "val";
  std::size_t runs = 100;
  bench_cmd->add_option("--checkpoint", bench_ckpt, "Checkpoint; a freshly initialized model when omitted");
  bench_cmd->add_option("--runs", runs, "Inferences per mode")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--split", bench_split, "Dataset split");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  add_common(grad_cmd, grad_f);
  double tolerance = 1e-5;
  grad_cmd->add_option("--tolerance", tolerance, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*make_cmd) return cmd_make_dataset(make_f);
    if (*train_cmd) return cmd_train(train_f, resume, eval_each_epoch);
    if (*eval_cmd) return cmd_eval(eval_f, eval_ckpt, eval_split, workers);
    if (*infer_cmd) return cmd_infer(infer_f, infer_ckpt, scene_path, superpoint_path, expression_path);
    if (*ablate_cmd) return cmd_ablate(ablate_f, grid);
    if (*bench_cmd) return cmd_bench(bench_f, bench_ckpt, runs, bench_split);
    if (*grad_cmd) return cmd_gradcheck(grad_f, tolerance);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
