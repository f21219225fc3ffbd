#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "oracles.hpp"
#include "stmn/stmn.hpp"
#include "test_util.hpp"

using namespace stmn;
using namespace stmn::harness;
using stmn::testing::random_tensor;

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// Generalization runs use two decoder rounds, the residual word path in SWA and a raised learning rate;
// everything else keeps its documented default.
RunConfig acceptance_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.stm.rounds = 2;
  c.stm.swa_residual = true;
  c.optim.lr = 1e-3;
  c.optim.batch_size = 1;
  c.optim.epochs = 30;
  c.optim.decay_epochs = {20, 26};
  c.validate();
  return c;
}

Outcome gradients() {
  const auto start = Clock::now();
  const auto entries = full_gradcheck_suite(7);
  const double elapsed = seconds_since(start);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& e : entries) {
    if (!(e.max_rel_error <= worst)) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  }
  const bool ok = std::isfinite(worst) && worst <= 1e-5 && elapsed < 120.0;
  return {ok, std::to_string(entries.size()) + " checks, worst " + fmt(worst) + " (" + worst_name + "), " +
                  fmt(elapsed, 3) + " s"};
}

struct MaxDiff {
  double value = 0.0;
  bool structural_mismatch = false;
  void add(double a, double b) { value = std::max(value, std::fabs(a - b)); }
};

language::DependencyGraph random_tree(std::mt19937_64& rng, std::size_t n) {
  language::DependencyGraph g;
  g.node_count = n;
  g.relation_count = 6;
  for (std::size_t v = 1; v < n; ++v) g.edges.push_back({rng() % v, v, static_cast<int>(1 + rng() % 6)});
  return g;
}

std::vector<std::size_t> random_assignment(std::mt19937_64& rng, std::size_t n, std::size_t cells) {
  std::vector<std::size_t> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = i < cells ? i : rng() % cells;
  std::shuffle(a.begin(), a.end(), rng);
  return a;
}

std::vector<double> random_labels(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> y(n);
  for (auto& v : y) v = static_cast<double>(rng() % 2);
  return y;
}

Outcome oracle_equivalence() {
  constexpr int kInstances = 100;
  std::mt19937_64 rng(2024);
  MaxDiff pool, gt, attention, relevance, losses;
  for (int t = 0; t < kInstances; ++t) {
    const std::size_t n = 5 + rng() % 60, cells = 1 + rng() % n, c = 1 + rng() % 8;
    const auto assignment = random_assignment(rng, n, cells);
    const auto part = scene::SuperpointPartition::from_assignment(assignment);
    const Tensor f = random_tensor(rng, n, c, false);
    const auto got = scene::superpoint_pool(f, part);
    const auto want = oracle::pool(oracle::to_matrix(f), assignment, cells);
    for (std::size_t s = 0; s < cells; ++s)
      for (std::size_t j = 0; j < c; ++j) pool.add(got.at(s, j), want[s][j]);

    const auto mask = random_labels(rng, n);
    const auto got_gt = scene::pool_gt_mask(mask, part);
    const auto want_gt = oracle::pool_gt(mask, assignment, cells);
    for (std::size_t s = 0; s < cells; ++s) gt.add(got_gt[s], want_gt[s]);
  }
  for (int t = 0; t < kInstances; ++t) {
    const std::size_t n = 2 + rng() % 10, d = 2 + rng() % 6;
    ParamStore params;
    auto layer = ddi::register_ddi_layer(params, 1, d, 4 * d, ddi::Structure::GA, 1, rng);
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    for (auto& p : params.tensors())
      for (double& x : p.mutable_data()) x += jitter(rng);
    const auto graph = random_tree(rng, n);
    const ddi::DdiState state{random_tensor(rng, n, d, false), random_tensor(rng, graph.edges.size(), d, false)};
    const auto got = ddi::graph_attention(state, graph, layer);
    const auto want = oracle::graph_attention(state, graph, layer);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) attention.add(got.node_update.at(i, j), want.node_update[i][j]);
    for (std::size_t k = 0; k < graph.edges.size(); ++k) {
      attention.add(got.weights.at(k, 0), want.weight[k]);
      for (std::size_t j = 0; j < d; ++j) attention.add(got.edge_update.at(k, j), want.edge_update[k][j]);
    }
  }
  for (int t = 0; t < kInstances; ++t) {
    const std::size_t ns = 1 + rng() % 40, nw = 1 + rng() % 8, d = 1 + rng() % 6, ct = 1 + rng() % 5;
    const std::size_t k = 1 + rng() % 48;
    const auto s_hat = random_tensor(rng, ns, d, false, -2, 2);
    const auto words = random_tensor(rng, nw, ct, false, -2, 2);
    const auto q = random_tensor(rng, d, d, false), kt = random_tensor(rng, ct, d, false);
    const auto got = stm::relevance_filter(s_hat, words, q, kt, k);
    const auto want = oracle::relevance(oracle::to_matrix(s_hat), oracle::to_matrix(words), oracle::to_matrix(q),
                                        oracle::to_matrix(kt), k);
    if (got.indices != want.indices) relevance.structural_mismatch = true;
    for (std::size_t i = 0; i < ns; ++i) relevance.add(got.s_r.at(i, 0), want.s_r[i]);
    for (std::size_t r = 0; r < want.s_rel.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) relevance.add(got.s_rel.at(r, j), want.s_rel[r][j]);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int t = 0; t < kInstances; ++t) {
    const std::size_t n = 1 + rng() % 60, nw = 1 + rng() % 8;
    const auto p = random_tensor(rng, 1, n, false, 0.0, 1.0);
    const auto y = random_labels(rng, n);
    const auto s_r = random_tensor(rng, n, 1, false, 0.0, static_cast<double>(nw));
    const double s = unit(rng), iou = unit(rng);
    const auto pv = p.to_vector();
    const double b = objective::bce_loss(p, y).item(), dc = objective::dice_loss(p, y).item();
    const double r = objective::rel_loss(s_r, nw, y).item(), sc = objective::score_loss(Tensor::scalar(s), iou).item();
    losses.add(b, oracle::bce(pv, y));
    losses.add(dc, oracle::dice(pv, y));
    losses.add(r, oracle::rel(s_r.to_vector(), nw, y));
    losses.add(sc, oracle::score(s, iou));
    const objective::LossWeights w;
    const double total = objective::total_loss({Tensor::scalar(b), Tensor::scalar(dc), Tensor::scalar(r),
                                                Tensor::scalar(sc)}, w).item();
    losses.add(total, w.bce * oracle::bce(pv, y) + w.dice * oracle::dice(pv, y) +
                          w.rel * oracle::rel(s_r.to_vector(), nw, y) + w.score * oracle::score(s, iou));
  }
  const double worst = std::max({pool.value, gt.value, attention.value, relevance.value, losses.value});
  const bool ok = worst <= 1e-10 && !relevance.structural_mismatch;
  return {ok, std::to_string(kInstances) + " instances per operator; max |diff| pool " + fmt(pool.value) + ", gt " +
                  fmt(gt.value) + ", graph attention " + fmt(attention.value) + ", relevance " +
                  fmt(relevance.value) + (relevance.structural_mismatch ? " (top-k mismatch)" : "") + ", losses " +
                  fmt(losses.value)};
}

Outcome structural_invariants(const DatasetManifest& manifest) {
  RunConfig cfg = acceptance_config(3);
  std::mt19937_64 rng(cfg.seed);
  Model model(cfg, vocabulary_from_records(manifest.split("train")), relations_from_records(manifest.all()), rng);
  std::size_t graph_violations = 0, graphs = 0;
  double pe_residual = 0.0;
  for (const auto* r : manifest.all()) {
    const auto sentences = language::parse_conllu(r->conllu);
    const auto expr = language::expression_from_sentences(sentences);
    const auto merged = language::merge_trees(sentences, model.relations);
    for (auto mode : {language::Direction::forward, language::Direction::reverse}) {
      const auto g = language::orient_edges(merged, mode);
      ++graphs;
      if (g.edges.size() != expr.words() || g.node_count != expr.words() + 1) ++graph_violations;
    }
    const auto pe = language::laplacian_pe(merged, cfg.model.k_pe);
    const Eigen::MatrixXd lap = language::graph_laplacian(merged);
    for (std::size_t col = 0; col < pe.eigenvalues.size(); ++col) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(merged.node_count));
      for (std::size_t i = 0; i < merged.node_count; ++i) v(static_cast<Eigen::Index>(i)) = pe.encoding.at(i, col);
      pe_residual = std::max(pe_residual, (lap * v - pe.eigenvalues[col] * v).norm());
    }
  }

  SceneCache scenes(manifest, cfg.model.encoder_knn);
  const auto samples = make_samples(model, scenes, manifest.split("val"));
  NoGradGuard no_grad;
  double softmax_err = 0.0;
  std::size_t bad_mask = 0, closed_global = 0, masks = 0;
  auto check_rows = [&](const Tensor& t) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < t.cols(); ++j) acc += t.at(i, j);
      softmax_err = std::max(softmax_err, std::fabs(acc - 1.0));
    }
  };
  for (const auto& s : samples) {
    const auto out = model.forward(*s.scene, s.expr);
    check_rows(transpose(out.stm.relevance.attention));
    const std::size_t slots = out.stm.relevance.s_rel.rows();
    for (const auto& round : out.stm.rounds) {
      check_rows(round.attention);
      ++masks;
      for (std::size_t i = 0; i < round.mask.size(); ++i) {
        const double a = round.mask[i];
        if (!(a == 0.0 || a == -std::numeric_limits<double>::infinity())) ++bad_mask;
        if (i % slots == slots - 1 && a != 0.0) ++closed_global;
      }
    }
    const auto emb = language::embed_tokens(s.expr.expression, model.words, model.params);
    const Tensor entry = matmul(concat_rows({model.params.get("text.root"), emb.words}), model.stm.w_t);
    const auto state = ddi::init_ddi_state(entry, s.expr.graph, *model.stm.ddi_input, s.expr.pe);
    const auto ga = ddi::graph_attention(state, s.expr.graph, model.stm.ddi_layers.front());
    std::vector<double> per_node(s.expr.graph.node_count, 0.0);
    std::vector<bool> has_incoming(s.expr.graph.node_count, false);
    for (std::size_t k = 0; k < s.expr.graph.edges.size(); ++k) {
      per_node[s.expr.graph.edges[k].dst] += ga.weights.at(k, 0);
      has_incoming[s.expr.graph.edges[k].dst] = true;
    }
    for (std::size_t i = 0; i < per_node.size(); ++i)
      if (has_incoming[i]) softmax_err = std::max(softmax_err, std::fabs(per_node[i] - 1.0));
  }
  std::mt19937_64 srng(5);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_tensor(srng, 1 + srng() % 9, 1 + srng() % 9, false, -30, 30);
    check_rows(softmax_axis(x, 1));
    check_rows(transpose(softmax_axis(x, 0)));
  }
  const bool ok = graph_violations == 0 && pe_residual <= 1e-8 && softmax_err <= 1e-9 && bad_mask == 0 &&
                  closed_global == 0;
  return {ok, std::to_string(graphs) + " graphs (" + std::to_string(graph_violations) + " bad), PE residual " +
                  fmt(pe_residual) + ", softmax |sum-1| " + fmt(softmax_err) + ", " + std::to_string(masks) +
                  " masks (" + std::to_string(bad_mask) + " bad entries, " + std::to_string(closed_global) +
                  " closed global slots)"};
}


Outcome single_sample_overfit(const DatasetManifest& manifest) {
  const RunConfig cfg = acceptance_config(1);
  std::mt19937_64 rng(cfg.seed);
  Model model(cfg, vocabulary_from_records(manifest.split("train")), relations_from_records(manifest.all()), rng);
  SceneCache scenes(manifest, cfg.model.encoder_knn);
  const auto samples = make_samples(model, scenes, {manifest.split("train").front()});
  const Sample& sample = samples.front();
  Trainer trainer(model, rng);
  const auto start = Clock::now();
  double iou = 0.0;
  std::size_t step = 0;
  while (step < 300) {
    trainer.step({&sample}, cfg.optim.lr);
    ++step;
    iou = *predict(model, *sample.scene, sample.expr, &sample.gt.point_mask).iou;
    if (iou >= 0.9) break;
  }
  const double elapsed = seconds_since(start);
  return {iou >= 0.9 && elapsed < 120.0,
          "IoU " + fmt(iou) + " after " + std::to_string(step) + " steps, " + fmt(elapsed, 3) + " s"};
}

struct TrainedRun {
  std::unique_ptr<Model> model;
  nlohmann::json metrics;
  std::vector<nlohmann::json> log;
  fs::path checkpoint;
  double seconds = 0.0;
};

TrainedRun train_and_evaluate(const RunConfig& cfg, const DatasetManifest& manifest, const fs::path& out) {
  TrainOptions opts;
  opts.out = out;
  const auto start = Clock::now();
  auto trained = train(cfg, manifest, opts);
  TrainedRun r;
  r.seconds = seconds_since(start);
  r.metrics = evaluate(*trained.model, manifest, "val").metrics;
  r.model = std::move(trained.model);
  r.log = std::move(trained.log);
  r.checkpoint = trained.checkpoint;
  return r;
}

double miou(const nlohmann::json& m) { return m.at("mIoU").get<double>(); }
double acc25(const nlohmann::json& m) { return m.at("acc_at_025").get<double>(); }

Outcome generalization(const TrainedRun& first, const TrainedRun& second) {
  const double gap = std::fabs(miou(first.metrics) - miou(second.metrics));
  const bool ok = miou(first.metrics) >= 0.5 && acc25(first.metrics) >= 0.6 && gap <= 0.1 &&
                  first.seconds < 1800.0 && second.seconds < 1800.0 && first.log.size() <= 30;
  return {ok, "seed 1: mIoU " + fmt(miou(first.metrics)) + ", Acc@0.25 " + fmt(acc25(first.metrics)) + ", " +
                  fmt(first.seconds, 4) + " s; seed 2: mIoU " + fmt(miou(second.metrics)) + ", Acc@0.25 " +
                  fmt(acc25(second.metrics)) + ", " + fmt(second.seconds, 4) + " s; gap " + fmt(gap)};
}

Outcome ablation_ordering(const TrainedRun& full, const DatasetManifest& manifest, const fs::path& out) {
  const RunConfig base = acceptance_config(1);
  std::vector<AblationVariant> variants;
  for (const auto& v : ablation_grid("headline"))
    if (v.name != "GA_PAR_SA") variants.push_back(v);
  const auto rows = run_ablation(base, manifest, variants, out);
  double ga = 0.0, no_ddi = 0.0;
  for (const auto& r : rows) (r.name == "GA" ? ga : no_ddi) = miou(r.metrics);
  const double par = miou(full.metrics);
  const bool ok = par >= ga - 0.05 && ga >= no_ddi - 0.05;
  return {ok, "val mIoU GA_PAR_SA " + fmt(par) + ", GA " + fmt(ga) + ", w/o DDI " + fmt(no_ddi)};
}

nlohmann::json without_latency(nlohmann::json m) {
  m.erase("mean_latency_ms");
  return m;
}

Outcome determinism(const TrainedRun& full, const DatasetManifest& manifest, const fs::path& out) {
  const RunConfig cfg = acceptance_config(11);
  std::vector<std::string> logs;
  for (const char* name : {"a", "b"}) {
    TrainOptions opts;
    opts.out = out / name;
    opts.stop_after_epochs = 1;
    logs.push_back(train(cfg, manifest, opts).log.front().dump());
  }
  const bool logs_equal = logs[0] == logs[1];

  const auto loaded = load_model(full.checkpoint.string());
  const auto reloaded = evaluate(*loaded.model, manifest, "val");
  const auto original = evaluate(*full.model, manifest, "val");
  bool masks_equal = reloaded.predictions.size() == original.predictions.size();
  for (std::size_t i = 0; masks_equal && i < original.predictions.size(); ++i)
    masks_equal = reloaded.predictions[i].superpoint_mask == original.predictions[i].superpoint_mask &&
                  reloaded.predictions[i].quality == original.predictions[i].quality;
  const bool metrics_equal = without_latency(reloaded.metrics).dump() == without_latency(original.metrics).dump();
  return {logs_equal && metrics_equal && masks_equal,
          std::string("epoch-1 logs ") + (logs_equal ? "identical" : "differ") + "; checkpoint round trip metrics " +
              (metrics_equal ? "identical" : "differ") + ", predictions " + (masks_equal ? "identical" : "differ")};
}

Outcome bench(const TrainedRun& full, const DatasetManifest& manifest) {
  SceneCache scenes(manifest, full.model->config.model.encoder_knn);
  const auto samples = make_samples(*full.model, scenes, manifest.split("val"));
  const auto r = run_bench(*full.model, samples, 100);
  const bool ok = r.superpoint_matching.runs >= 100 && r.reduction() >= 10.0 && r.speedup() >= 2.0;
  return {ok, std::to_string(r.superpoint_matching.runs) + " runs, " + fmt(r.reduction(), 3) +
                  " points per superpoint; matching mean/median superpoint " + fmt(r.superpoint_matching.mean_ms) +
                  "/" + fmt(r.superpoint_matching.median_ms) + " ms, point " + fmt(r.point_matching.mean_ms) + "/" +
                  fmt(r.point_matching.median_ms) + " ms; speedup " + fmt(r.speedup(), 3) + "x"};
}

class Report {
 public:
  void run(const std::string& name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures_ += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  int failures() const { return failures_; }

 private:
  int failures_ = 0;
};

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / ("stmn_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(work);
  Report report;
  try {
    const auto manifest = make_dataset(acceptance_config(1), work / "data");
    report.run("gradients", gradients);
    report.run("oracle_equivalence", oracle_equivalence);
    report.run("structural_invariants", [&] { return structural_invariants(manifest); });
    report.run("single_sample_overfit", [&] { return single_sample_overfit(manifest); });

    TrainedRun first, second;
    report.run("generalization", [&] {
      first = train_and_evaluate(acceptance_config(1), manifest, work / "seed1");
      second = train_and_evaluate(acceptance_config(2), manifest, work / "seed2");
      return generalization(first, second);
    });
    auto needs_first = [&](const std::function<Outcome()>& f) {
      return [&, f] { return first.model ? f() : Outcome{false, "seed 1 training did not complete"}; };
    };
    report.run("determinism", needs_first([&] { return determinism(first, manifest, work / "determinism"); }));
    report.run("bench", needs_first([&] { return bench(first, manifest); }));
    report.run("ablation_ordering", needs_first([&] { return ablation_ordering(first, manifest, work / "ablation"); }));
  } catch (const std::exception& e) {
    std::cout << "FAIL setup: " << e.what() << std::endl;
    fs::remove_all(work);
    return 1;
  }
  fs::remove_all(work);
  return report.failures() == 0 ? 0 : 1;
}
