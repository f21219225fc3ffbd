#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stmn/ddi/ddi.hpp"
#include "stmn/errors.hpp"
#include "stmn/language/graph.hpp"
#include "stmn/numerics/checkpoint.hpp"
#include "stmn/numerics/ops.hpp"

// Superpoint-text matching decoder.
namespace stmn::stm {

enum class KernelStrategy { Root, Avg, Top1, CLS };

inline std::string to_string(KernelStrategy s) {
  switch (s) {
    case KernelStrategy::Root: return "Root";
    case KernelStrategy::Avg: return "Avg";
    case KernelStrategy::Top1: return "Top1";
    case KernelStrategy::CLS: return "CLS";
  }
  return "?";
}

inline KernelStrategy kernel_strategy_from_string(const std::string& s) {
  for (auto v : {KernelStrategy::Root, KernelStrategy::Avg, KernelStrategy::Top1, KernelStrategy::CLS})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown kernel strategy '" + s + "'");
}

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct StmSettings {
  std::size_t rounds = 6;
  std::size_t k_rel = 64;
  double tau = 0.5;
  KernelStrategy strategy = KernelStrategy::Top1;
  bool use_ddi = true;
  bool swa_residual = false;  // adds the incoming word features to the SWA output
};

struct RoundParams {
  Tensor q, k, v;  // SWA projections, D x D
  Tensor q_t, k_s; // kernel scoring, D x D
};

struct StmParams {
  Tensor w_s;  // C_p x D
  Tensor w_t;  // C_t x D
  Tensor q_s;  // D x D
  Tensor k_t;  // C_t x D
  std::vector<RoundParams> rounds;
  Tensor score_w;  // D x 1
  Tensor score_b;  // 1 x 1
  std::optional<ddi::DdiInputParams> ddi_input;
  std::vector<ddi::DdiLayerParams> ddi_layers;  // one per round

  std::size_t dim() const { return w_s.cols(); }
};

struct StmDims {
  std::size_t c_p = 32;
  std::size_t c_t = 64;
  std::size_t d = 64;
  std::size_t d_h = 256;
  std::size_t k_pe = 8;
  std::size_t relation_ids = 2 * 64;
  ddi::Structure structure = ddi::Structure::GA_PAR_SA;
  std::size_t heads = 1;
};

inline StmParams register_stm(ParamStore& params, const StmDims& dims, const StmSettings& settings,
                              std::mt19937_64& rng) {
  if (settings.rounds < 1) throw ConfigError("the decoder needs at least one round");
  if (!(settings.tau > 0.0 && settings.tau < 1.0)) throw ConfigError("mask threshold must lie in (0, 1)");
  if (settings.k_rel < 1) throw ConfigError("k_rel must be at least 1");
  const std::size_t d = dims.d;
  StmParams p;
  p.w_s = params.create("stm.w_s", {dims.c_p, d}, Init::uniform_fan_in, rng);
  p.w_t = params.create("stm.w_t", {dims.c_t, d}, Init::uniform_fan_in, rng);
  p.q_s = params.create("stm.q_s", {d, d}, Init::uniform_fan_in, rng);
  p.k_t = params.create("stm.k_t", {dims.c_t, d}, Init::uniform_fan_in, rng);
  for (std::size_t l = 1; l <= settings.rounds; ++l) {
    const std::string pre = "stm.round" + std::to_string(l) + ".";
    RoundParams r;
    r.q = params.create(pre + "q", {d, d}, Init::uniform_fan_in, rng);
    r.k = params.create(pre + "k", {d, d}, Init::uniform_fan_in, rng);
    r.v = params.create(pre + "v", {d, d}, Init::uniform_fan_in, rng);
    r.q_t = params.create(pre + "q_t", {d, d}, Init::uniform_fan_in, rng);
    r.k_s = params.create(pre + "k_s", {d, d}, Init::uniform_fan_in, rng);
    p.rounds.push_back(r);
  }
  p.score_w = params.create("stm.score.w", {d, 1}, Init::uniform_fan_in, rng);
  p.score_b = params.create("stm.score.b", {1, 1}, Init::zeros, rng);
  if (settings.use_ddi) {
    p.ddi_input = ddi::register_ddi_input(params, d, dims.k_pe, dims.relation_ids, rng);
    for (std::size_t l = 1; l <= settings.rounds; ++l)
      p.ddi_layers.push_back(ddi::register_ddi_layer(params, l, d, dims.d_h, dims.structure, dims.heads, rng));
  }
  return p;
}

inline Tensor project_superpoints(const Tensor& s, const Tensor& w_s) { return matmul(s, w_s); }

struct RelevanceOutput {
  Tensor s_rel;                      // (k_rel + 1) x D, last row is the global slot
  Tensor s_r;                        // N_s x 1
  Tensor attention;                  // N_s x N_w, each column sums to 1
  std::vector<std::size_t> indices;  // ascending
};

// Indices of the k largest values; ties go to the lower index. Returned ascending.
inline std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  k = std::min(k, values.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

inline RelevanceOutput relevance_filter(const Tensor& s_hat, const Tensor& words, const Tensor& q_s, const Tensor& k_t,
                                        std::size_t k_rel) {
  if (words.rows() == 0) throw ValidationError("relevance_filter: expression has no words");
  if (s_hat.rows() == 0) throw ValidationError("relevance_filter: scene has no superpoints");
  const double inv = 1.0 / std::sqrt(static_cast<double>(s_hat.cols()));
  RelevanceOutput out;
  out.attention = softmax_axis(scale(matmul(matmul(s_hat, q_s), transpose(matmul(words, k_t))), inv), 0);
  out.s_r = row_sum(out.attention);
  out.indices = top_k_indices(out.s_r.data(), k_rel);
  out.s_rel = concat_rows({gather_rows(s_hat, out.indices), mean_rows(s_hat)});
  return out;
}

struct SwaOutput {
  Tensor features;   // (N_w + 1) x D
  Tensor attention;  // (N_w + 1) x (k_rel + 1)
};

inline SwaOutput swa(const Tensor& words, const Tensor& s_rel, std::span<const double> mask, const RoundParams& r,
                     bool residual = false) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(words.cols()));
  SwaOutput out;
  out.attention = masked_softmax_rows(scale(matmul(matmul(words, r.q), transpose(matmul(s_rel, r.k))), inv), mask);
  out.features = matmul(out.attention, matmul(s_rel, r.v));
  if (residual) out.features = add(out.features, words);
  return out;
}

// (N_w + 1) x (k_rel + 1) mask in row-major order; the last column is the global slot.
inline std::vector<double> mask_from_map(const Tensor& m, const std::vector<std::size_t>& indices, double tau) {
  const std::size_t rows = m.rows(), k = indices.size();
  std::vector<double> a(rows * (k + 1), 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < k; ++j) a[i * (k + 1) + j] = m.at(i, indices[j]) >= tau ? 0.0 : kNegInf;
  return a;
}

inline Tensor response_map(const Tensor& words, const Tensor& s_hat) { return sigmoid(matmul(words, transpose(s_hat))); }

struct KernelSelection {
  Tensor map;                // 1 x N_s
  Tensor kernel;             // 1 x D, the embedding that produced the map
  int kernel_index = -1;     // row of the word features, -1 for Avg and CLS
  std::vector<double> s_v;   // per-word scores, Top1 only
};

inline std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// `cls_projected` is only read by the CLS strategy.
inline KernelSelection select_kernel(const Tensor& words, const Tensor& s_rel, const Tensor& s_hat, const Tensor& m,
                                     KernelStrategy strategy, const RoundParams& r, const Tensor& cls_projected) {
  KernelSelection out;
  switch (strategy) {
    case KernelStrategy::Top1: {
      const double inv = 1.0 / std::sqrt(static_cast<double>(words.cols()));
      Tensor scores;
      {
        NoGradGuard guard;
        scores = row_sum(softmax_axis(scale(matmul(matmul(words, r.q_t), transpose(matmul(s_rel, r.k_s))), inv), 0));
      }
      out.s_v = scores.to_vector();
      out.kernel_index = static_cast<int>(argmax_lowest(out.s_v));
      break;
    }
    case KernelStrategy::Root: out.kernel_index = 0; break;
    case KernelStrategy::Avg:
      out.kernel = mean_rows(words);
      out.map = response_map(out.kernel, s_hat);
      return out;
    case KernelStrategy::CLS:
      if (!cls_projected.defined()) throw ContractError("CLS kernel needs a projected cls vector");
      out.kernel = cls_projected;
      out.map = response_map(out.kernel, s_hat);
      return out;
  }
  const std::vector<std::size_t> row{static_cast<std::size_t>(out.kernel_index)};
  out.kernel = gather_rows(words, row);
  out.map = gather_rows(m, row);
  return out;
}

struct ExpressionInput {
  Tensor words;                    // N_w x C_t
  Tensor root;                     // 1 x C_t
  Tensor cls;                      // 1 x C_t
  language::DependencyGraph graph; // oriented, N_w + 1 nodes
  Tensor pe;                       // (N_w + 1) x k_pe
};

struct DecodeState {
  std::size_t round = 0;
  Tensor words;              // Ê_l
  Tensor map;                // M_l, (N_w + 1) x N_s
  std::vector<double> mask;  // A_l, (N_w + 1) x (k_rel + 1)
  Tensor attention;          // SWA attention of this round
  Tensor edges;              // DDI edge state after this round
  KernelSelection kernel;    // only filled for the last round unless every round is requested
};

struct StmOutput {
  Tensor final_map;  // 1 x N_s
  int kernel_index = -1;
  Tensor quality;    // 1 x 1
  RelevanceOutput relevance;
  std::vector<DecodeState> rounds;
};

inline StmOutput stm_forward(const Tensor& superpoints, const ExpressionInput& expr, const StmParams& p,
                             const StmSettings& settings, bool select_every_round = false) {
  const std::size_t n_words = expr.words.rows();
  if (n_words == 0) throw ValidationError("expression has no words");
  if (expr.graph.node_count != n_words + 1) {
    throw ShapeError("dependency graph has " + std::to_string(expr.graph.node_count) + " nodes for " +
                     std::to_string(n_words) + " words");
  }
  if (p.rounds.size() != settings.rounds) throw ContractError("parameter rounds differ from settings");
  StmOutput out;
  const Tensor s_hat = project_superpoints(superpoints, p.w_s);
  out.relevance = relevance_filter(s_hat, expr.words, p.q_s, p.k_t, settings.k_rel);
  const Tensor& s_rel = out.relevance.s_rel;
  const std::size_t slots = s_rel.rows();

  Tensor e = matmul(concat_rows({expr.root, expr.words}), p.w_t);
  Tensor cls_projected;
  if (settings.strategy == KernelStrategy::CLS) cls_projected = matmul(expr.cls, p.w_t);
  std::vector<double> mask((n_words + 1) * slots, 0.0);
  ddi::DdiState state;
  for (std::size_t l = 0; l < settings.rounds; ++l) {
    DecodeState ds;
    ds.round = l + 1;
    Tensor nodes = e;
    if (settings.use_ddi) {
      if (!p.ddi_input || p.ddi_layers.size() != settings.rounds) throw ContractError("DDI parameters are missing");
      if (l == 0) {
        state = ddi::init_ddi_state(e, expr.graph, *p.ddi_input, expr.pe);
      } else {
        state.h = e;
      }
      state = ddi::ddi_layer(state, expr.graph, p.ddi_layers[l]);
      nodes = state.h;
      ds.edges = state.e;
    }
    auto sw = swa(nodes, s_rel, mask, p.rounds[l], settings.swa_residual);
    e = sw.features;
    ds.words = e;
    ds.attention = sw.attention;
    ds.map = response_map(e, s_hat);
    mask = mask_from_map(ds.map, out.relevance.indices, settings.tau);
    ds.mask = mask;
    if (select_every_round || l + 1 == settings.rounds)
      ds.kernel = select_kernel(e, s_rel, s_hat, ds.map, settings.strategy, p.rounds[l], cls_projected);
    out.rounds.push_back(std::move(ds));
  }
  const auto& last = out.rounds.back().kernel;
  out.final_map = last.map;
  out.kernel_index = last.kernel_index;
  out.quality = sigmoid(add(matmul(last.kernel, p.score_w), p.score_b));
  return out;
}

}  // namespace stmn::stm
