#pragma once

#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "stmn/harness/model.hpp"
#include "stmn/numerics/gradcheck.hpp"
#include "stmn/numerics/ops.hpp"

namespace stmn::harness {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

namespace detail {

inline Tensor uniform_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                             double hi = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return Tensor::matrix(rows, cols, std::move(v), requires_grad);
}

// Weighted sum with fixed random weights, so every output entry gets a distinct upstream gradient.
inline Tensor probe(const Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(t, uniform_tensor(rng, t.rows(), t.cols(), -1.0, 1.0, false)));
}

inline GradcheckEntry check(const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> params) {
  const auto r = finite_difference_check(f, std::move(params));
  return {name, r.max_rel_error, r.entries};
}

}  // namespace detail

// Every differentiable operation on small random inputs.
inline std::vector<GradcheckEntry> op_gradchecks(std::uint64_t seed) {
  using detail::probe;
  std::mt19937_64 rng(seed);
  auto rnd = [&](std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    return detail::uniform_tensor(rng, r, c, lo, hi);
  };
  Tensor a = rnd(4, 5), b = rnd(5, 3), c = rnd(4, 5), row = rnd(1, 5), col = rnd(4, 1);
  Tensor pos = rnd(4, 5, 0.5, 2.0), gain = rnd(1, 5, 0.5, 1.5);
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> mask(20, 0.0);
  mask[1] = mask[7] = ninf;
  for (int j = 10; j < 15; ++j) mask[j] = ninf;
  NeighborLists lists;
  lists.index = {1, 2, 0, 3, 1, 2, 0};
  lists.offset = {0, 2, 2, 5, 7};

  std::vector<GradcheckEntry> out;
  auto run = [&](const char* name, const std::function<Tensor()>& f, std::vector<Tensor> params) {
    out.push_back(detail::check(name, f, std::move(params)));
  };
  run("matmul", [&] { return probe(matmul(a, b), 1); }, {a, b});
  run("transpose", [&] { return probe(transpose(a), 2); }, {a});
  run("add", [&] { return probe(add(a, c), 3); }, {a, c});
  run("sub", [&] { return probe(sub(a, c), 4); }, {a, c});
  run("mul", [&] { return probe(mul(a, c), 5); }, {a, c});
  run("div", [&] { return probe(div(a, pos), 6); }, {a, pos});
  run("add_row", [&] { return probe(add_row(a, row), 7); }, {a, row});
  run("mul_col", [&] { return probe(mul_col(a, col), 8); }, {a, col});
  run("scale", [&] { return probe(add_scalar(scale(a, -1.7), 0.3), 9); }, {a});
  run("sum", [&] { return sum(mul(a, c)); }, {a, c});
  run("mean", [&] { return mean(mul(a, a)); }, {a});
  run("row_sum", [&] { return probe(row_sum(a), 10); }, {a});
  run("mean_rows", [&] { return probe(mean_rows(a), 11); }, {a});
  run("sigmoid", [&] { return probe(sigmoid(a), 12); }, {a});
  run("gelu", [&] { return probe(gelu(a), 13); }, {a});
  run("relu", [&] { return probe(relu(a), 14); }, {a});
  run("log", [&] { return probe(log(pos), 15); }, {pos});
  run("abs", [&] { return probe(abs(a), 16); }, {a});
  run("clamp", [&] { return probe(clamp(a, -0.5, 0.5), 17); }, {a});
  run("softmax_rows", [&] { return probe(softmax_axis(a, 1), 18); }, {a});
  run("softmax_cols", [&] { return probe(softmax_axis(a, 0), 19); }, {a});
  run("masked_softmax_rows", [&] { return probe(masked_softmax_rows(a, mask), 20); }, {a});
  run("layer_norm", [&] { return probe(layer_norm(a, gain, row), 21); }, {a, gain, row});
  run("gather_rows", [&] { return probe(gather_rows(a, {3, 0, 3}), 22); }, {a});
  run("concat_rows", [&] { return probe(concat_rows({a, row, c}), 23); }, {a, row, c});
  run("slice_cols", [&] { return probe(slice_cols(a, 1, 3), 24); }, {a});
  run("concat_cols", [&] { return probe(concat_cols({a, col}), 25); }, {a, col});
  run("segment_sum", [&] { return probe(segment_sum(a, {1, 0, 1, 2}, 3), 26); }, {a});
  run("segment_mean", [&] { return probe(segment_mean(a, {1, 0, 1, 2}, 3), 27); }, {a});
  run("segment_softmax", [&] { return probe(segment_softmax(col, {0, 1, 0, 0}, 2), 28); }, {col});
  run("neighbor_mean", [&] { return probe(neighbor_mean(a, lists), 29); }, {a});
  return out;
}

inline constexpr const char* kMicroExpression =
    "1\tthe\tthe\tDET\t_\t_\t2\tdet\t_\t_\n"
    "2\tchair\tchair\tNOUN\t_\t_\t0\troot\t_\t_\n"
    "3\tnear\tnear\tADP\t_\t_\t5\tcase\t_\t_\n"
    "4\tred\tred\tADJ\t_\t_\t5\tamod\t_\t_\n"
    "5\ttable\ttable\tNOUN\t_\t_\t2\tnmod\t_\t_\n\n";

// A deliberately tiny end-to-end instance: 200 points, 12 superpoints, 5 words, D = 8, two rounds.
struct MicroInstance {
  std::unique_ptr<Model> model;
  PreparedScene scene;
  PreparedExpression expr;
  GroundTruth gt;
};

inline MicroInstance micro_instance(ddi::Structure structure, std::uint64_t seed, std::size_t heads = 1,
                                    bool swa_residual = false) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.model = {4, 5, 8, 8, 3, 6};
  cfg.stm.rounds = 2;
  cfg.stm.k_rel = 8;
  cfg.stm.swa_residual = swa_residual;
  cfg.ddi.structure = ddi::to_string(structure);
  cfg.ddi.heads = heads;
  cfg.data.n_points = 200;
  cfg.data.min_objects = 2;
  cfg.data.max_objects = 2;
  auto scene_cfg = cfg.scene_config();
  scene_cfg.min_points_per_object = 20;
  const auto g = scene::generate_scene(scene_cfg, seed, "micro");
  std::vector<std::size_t> assignment(g.scene.size());
  for (std::size_t i = 0; i < assignment.size(); ++i) assignment[i] = i % 12;

  const auto sentences = language::parse_conllu(kMicroExpression);
  std::vector<std::string> forms;
  for (const auto& t : sentences.front().tokens) forms.push_back(t.form);
  std::mt19937_64 rng(seed);
  MicroInstance m;
  m.model = std::make_unique<Model>(cfg, language::WordVocabulary::from_words(forms),
                                    language::RelationVocabulary::universal_plus(relation_labels(sentences)), rng);
  m.scene = prepare_scene(g.scene, scene::SuperpointPartition::from_assignment(assignment), cfg.model.encoder_knn);
  m.expr = m.model->prepare_expression(kMicroExpression, "micro_e0", "micro", g.objects.front().instance);
  m.gt = make_ground_truth(m.scene, m.expr);
  return m;
}

// Gradient of the full weighted objective with respect to every parameter.
inline GradcheckEntry model_gradcheck(ddi::Structure structure, std::uint64_t seed, std::size_t heads = 1,
                                      bool swa_residual = false) {
  auto m = micro_instance(structure, seed, heads, swa_residual);
  auto f = [&] {
    const auto out = m.model->forward(m.scene, m.expr);
    return m.model->loss(out, m.gt, m.expr.expression.words()).total;
  };
  return detail::check("total_loss/" + ddi::to_string(structure) + "/heads" + std::to_string(heads) +
                           (swa_residual ? "/residual" : ""),
                       f,
                       m.model->params.tensors());
}

inline std::vector<GradcheckEntry> full_gradcheck_suite(std::uint64_t seed) {
  auto out = op_gradchecks(seed);
  for (auto s : {ddi::Structure::GA, ddi::Structure::SA_GA, ddi::Structure::GA_SA, ddi::Structure::GA_PAR_SA})
    out.push_back(model_gradcheck(s, seed));
  out.push_back(model_gradcheck(ddi::Structure::GA_PAR_SA, seed, 1, true));
  return out;
}

}  // namespace stmn::harness
