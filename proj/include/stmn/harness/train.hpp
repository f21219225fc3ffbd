#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stmn/harness/evaluate.hpp"
#include "stmn/harness/model.hpp"

namespace stmn::harness {

inline constexpr const char* kCheckpointFile = "checkpoint.stmn";
inline constexpr const char* kTrainLogFile = "train_log.jsonl";

struct StepStats {
  double loss = 0, bce = 0, dice = 0, rel = 0, score = 0, iou = 0;
};

// Thrown when a batch produces a non-finite loss; carries a description of the batch.
class NonFiniteLoss : public NumericalError {
 public:
  NonFiniteLoss(const std::string& what, nlohmann::json dump) : NumericalError(what), dump_(std::move(dump)) {}
  const nlohmann::json& dump() const { return dump_; }

 private:
  nlohmann::json dump_;
};

class Trainer {
 public:
  Trainer(Model& model, std::mt19937_64& rng) : model_(model), rng_(rng) {}

  // One optimizer step on the mean loss of the batch.
  StepStats step(const std::vector<const Sample*>& batch, double lr) {
    auto& params = model_.params;
    params.zero_grad();
    StepStats stats;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto* s : batch) {
      const auto f = model_.forward(*s->scene, s->expr, model_.config.optim.pe_sign_flip ? &rng_ : nullptr);
      const auto l = model_.loss(f, s->gt, s->expr.expression.words());
      const double v = l.total.item();
      if (!std::isfinite(v)) {
        nlohmann::json dump{{"loss", std::to_string(v)}, {"lr", lr}, {"step", optimizer.step + 1}};
        for (const auto* b : batch) dump["batch"].push_back({{"expr_id", b->expr.expr_id}, {"scene_id", b->scene->scene_id}});
        dump["offending"] = s->expr.expr_id;
        dump["components"] = {{"bce", l.bce}, {"dice", l.dice}, {"rel", l.rel}, {"score", l.score}};
        throw NonFiniteLoss("non-finite loss on expression " + s->expr.expr_id, dump);
      }
      scale(l.total, inv).backward();
      stats.loss += v * inv;
      stats.bce += l.bce * inv;
      stats.dice += l.dice * inv;
      stats.rel += l.rel * inv;
      stats.score += l.score * inv;
      stats.iou += l.sp_iou * inv;
    }
    if (model_.config.optim.clip_norm > 0) clip_grad_norm(params.tensors(), model_.config.optim.clip_norm);
    adam_step(optimizer, params.tensors(), lr);
    return stats;
  }

  OptimizerState optimizer;

 private:
  Model& model_;
  std::mt19937_64& rng_;
};

struct TrainOptions {
  std::filesystem::path out;
  std::string resume;              // checkpoint to continue from
  bool eval_each_epoch = false;    // adds val metrics to the epoch log
  std::size_t stop_after_epochs = 0;  // 0 runs the configured number
  std::function<void(const nlohmann::json&)> on_epoch;
};

struct TrainResult {
  std::unique_ptr<Model> model;
  std::vector<nlohmann::json> log;
  std::filesystem::path checkpoint;
};

namespace detail {

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

inline void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream s(state);
  s >> rng;
  if (!s) throw ValidationError("checkpoint holds a malformed RNG state");
}

}  // namespace detail

inline void save_training_checkpoint(const std::filesystem::path& path, const Model& model, const Trainer& trainer,
                                     std::size_t epoch, const std::mt19937_64& rng) {
  auto arrays = model.arrays();
  const auto& opt = trainer.optimizer;
  for (std::size_t i = 0; i < opt.first_moment.size(); ++i) {
    const auto& name = model.params.names()[i];
    const auto shape = model.params.tensors()[i].shape();
    arrays.push_back({"adam.m." + name, shape, opt.first_moment[i]});
    arrays.push_back({"adam.v." + name, shape, opt.second_moment[i]});
  }
  auto extra = model.metadata();
  extra["seed"] = model.config.seed;
  extra["epoch"] = epoch;
  extra["adam_step"] = opt.step;
  extra["rng"] = detail::rng_state(rng);
  const auto tmp = path.string() + ".tmp";
  save_checkpoint(tmp, arrays, extra);
  std::filesystem::rename(tmp, path);
}

inline void restore_optimizer(OptimizerState& opt, const ParamStore& params, const LoadedCheckpoint& ck) {
  const long step = ck.extra.value("adam_step", 0L);
  opt = OptimizerState{};
  opt.step = step;
  if (step == 0) return;
  for (const auto& name : params.names()) {
    const auto* m = ck.find("adam.m." + name);
    const auto* v = ck.find("adam.v." + name);
    if (m == nullptr || v == nullptr) throw ValidationError("checkpoint lacks optimizer state for " + name);
    opt.first_moment.push_back(m->values);
    opt.second_moment.push_back(v->values);
  }
}

inline TrainResult train(const RunConfig& config, const DatasetManifest& manifest, const TrainOptions& options) {
  namespace fs = std::filesystem;
  const auto train_records = manifest.split("train");
  if (train_records.empty()) throw ValidationError("dataset has no training expressions");
  std::error_code ec;
  fs::create_directories(options.out, ec);
  if (ec) throw IoError("cannot create output directory " + options.out.string() + ": " + ec.message());

  std::mt19937_64 rng(config.seed);
  TrainResult result;
  std::size_t start_epoch = 0;
  std::optional<LoadedCheckpoint> resumed;
  if (!options.resume.empty()) {
    auto loaded = load_model(options.resume);
    result.model = std::move(loaded.model);
    resumed = load_checkpoint(options.resume);
    start_epoch = resumed->extra.value("epoch", std::size_t{0});
    detail::restore_rng(rng, resumed->extra.at("rng").get<std::string>());
  } else {
    result.model = std::make_unique<Model>(config, vocabulary_from_records(train_records),
                                           relations_from_records(manifest.all()), rng);
  }
  Model& model = *result.model;
  Trainer trainer(model, rng);
  if (resumed) restore_optimizer(trainer.optimizer, model.params, *resumed);

  SceneCache scenes(manifest, model.config.model.encoder_knn);
  const auto samples = make_samples(model, scenes, train_records);
  std::vector<Sample> val;
  if (options.eval_each_epoch && manifest.count("val") > 0) val = make_samples(model, scenes, manifest.split("val"));

  const auto log_path = options.out / kTrainLogFile;
  std::ofstream log(log_path, resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path.string());
  result.checkpoint = options.out / kCheckpointFile;

  const auto& optim = model.config.optim;
  const std::size_t last_epoch =
      options.stop_after_epochs > 0 ? std::min(optim.epochs, start_epoch + options.stop_after_epochs) : optim.epochs;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t epoch = start_epoch; epoch < last_epoch; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = model.config.schedule().rate(static_cast<int>(epoch));
    std::vector<double> batch_losses;
    StepStats mean;
    for (std::size_t b = 0; b < order.size(); b += optim.batch_size) {
      std::vector<const Sample*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + optim.batch_size); ++i) batch.push_back(&samples[order[i]]);
      StepStats s;
      try {
        s = trainer.step(batch, lr);
      } catch (const NonFiniteLoss& e) {
        auto dump = e.dump();
        dump["epoch"] = epoch + 1;
        std::ofstream(options.out / "nan_dump.json") << dump.dump(2) << "\n";
        throw;
      }
      batch_losses.push_back(s.loss);
      const double w = static_cast<double>(batch.size()) / static_cast<double>(order.size());
      mean.loss += s.loss * w;
      mean.bce += s.bce * w;
      mean.dice += s.dice * w;
      mean.rel += s.rel * w;
      mean.score += s.score * w;
      mean.iou += s.iou * w;
    }
    nlohmann::json entry{{"epoch", epoch + 1},      {"lr", lr},           {"loss", mean.loss},
                         {"bce", mean.bce},         {"dice", mean.dice},  {"rel", mean.rel},
                         {"score", mean.score},     {"train_sp_iou", mean.iou}, {"batch_losses", batch_losses}};
    if (!val.empty()) {
      entry["val"] = evaluate_samples(model, val).metrics;
      entry["val"].erase("mean_latency_ms");
    }
    log << entry.dump() << "\n" << std::flush;
    save_training_checkpoint(result.checkpoint, model, trainer, epoch + 1, rng);
    if (options.on_epoch) options.on_epoch(entry);
    result.log.push_back(std::move(entry));
  }
  if (!fs::exists(result.checkpoint)) save_training_checkpoint(result.checkpoint, model, trainer, start_epoch, rng);
  return result;
}

}  // namespace stmn::harness
