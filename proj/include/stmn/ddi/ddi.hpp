#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "stmn/errors.hpp"
#include "stmn/language/graph.hpp"
#include "stmn/numerics/checkpoint.hpp"
#include "stmn/numerics/ops.hpp"

// Dependency-driven interaction: graph attention with typed edge features,
// optionally combined with full self-attention over all nodes.
namespace stmn::ddi {

enum class Structure { GA, SA_GA, GA_SA, GA_PAR_SA };

inline std::string to_string(Structure s) {
  switch (s) {
    case Structure::GA: return "GA";
    case Structure::SA_GA: return "SA_GA";
    case Structure::GA_SA: return "GA_SA";
    case Structure::GA_PAR_SA: return "GA_PAR_SA";
  }
  return "?";
}

inline Structure structure_from_string(const std::string& s) {
  for (auto v : {Structure::GA, Structure::SA_GA, Structure::GA_SA, Structure::GA_PAR_SA})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown DDI structure '" + s + "'");
}

inline bool uses_self_attention(Structure s) { return s != Structure::GA; }

struct NormParams {
  Tensor gain;
  Tensor bias;
};

struct DdiLayerParams {
  Tensor q_h, k_h, v_h, e_e, o_h, o_e;  // D x D
  Tensor q_sa, k_sa, v_sa, o_sa;        // D x D, only for structures with SA
  Tensor w_h1, w_h2;                    // D x D_h, D_h x D
  Tensor w_e1, w_e2;                    // D x 2D, 2D x D
  NormParams norm_h1, norm_h2, norm_e1, norm_e2;
  NormParams norm_sa;  // the extra residual block of SA_GA / GA_SA
  Structure structure = Structure::GA_PAR_SA;
  std::size_t heads = 1;

  std::size_t dim() const { return q_h.rows(); }
};

struct DdiInputParams {
  Tensor b0;       // 1 x D, B^0
  Tensor b0_bias;  // 1 x D, b^0
  Tensor c0;       // D x k, C^0
  Tensor c0_bias;  // 1 x D, c^0
};

struct DdiState {
  Tensor h;  // (N_w + 1) x D
  Tensor e;  // edges x D, aligned with the graph's edge list
};

namespace detail {

inline NormParams make_norm(ParamStore& params, const std::string& prefix, std::size_t d,
                            std::mt19937_64& rng) {
  return {params.create(prefix + ".gain", {1, d}, Init::ones, rng),
          params.create(prefix + ".bias", {1, d}, Init::zeros, rng)};
}

inline Tensor apply_norm(const Tensor& x, const NormParams& n) { return layer_norm(x, n.gain, n.bias); }

inline void check_heads(std::size_t d, std::size_t heads) {
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("head count " + std::to_string(heads) + " must divide the model width " + std::to_string(d));
  }
}

}  // namespace detail

inline DdiInputParams register_ddi_input(ParamStore& params, std::size_t d, std::size_t k_pe,
                                         std::size_t relation_ids, std::mt19937_64& rng) {
  DdiInputParams p;
  p.b0 = params.create("ddi.input.B0", {1, d}, Init::zeros, rng);
  // Relation ids enter as raw scalars, so B^0 starts small enough that the
  // largest id yields unit-scale edge features.
  const double bound = 1.0 / static_cast<double>(std::max<std::size_t>(relation_ids, 1));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : p.b0.mutable_data()) x = dist(rng);
  p.b0_bias = params.create("ddi.input.b0", {1, d}, Init::uniform_fan_in, rng);
  p.c0 = params.create("ddi.input.C0", {d, k_pe}, Init::uniform_fan_in, rng);
  p.c0_bias = params.create("ddi.input.c0", {1, d}, Init::zeros, rng);
  return p;
}

inline DdiLayerParams register_ddi_layer(ParamStore& params, std::size_t layer, std::size_t d, std::size_t d_h,
                                         Structure structure, std::size_t heads, std::mt19937_64& rng) {
  detail::check_heads(d, heads);
  const std::string pre = "ddi.layer" + std::to_string(layer) + ".";
  DdiLayerParams p;
  p.structure = structure;
  p.heads = heads;
  p.q_h = params.create(pre + "q_h", {d, d}, Init::uniform_fan_in, rng);
  p.k_h = params.create(pre + "k_h", {d, d}, Init::uniform_fan_in, rng);
  p.v_h = params.create(pre + "v_h", {d, d}, Init::uniform_fan_in, rng);
  p.e_e = params.create(pre + "e_e", {d, d}, Init::uniform_fan_in, rng);
  p.o_h = params.create(pre + "o_h", {d, d}, Init::uniform_fan_in, rng);
  p.o_e = params.create(pre + "o_e", {d, d}, Init::uniform_fan_in, rng);
  if (uses_self_attention(structure)) {
    p.q_sa = params.create(pre + "q_sa", {d, d}, Init::uniform_fan_in, rng);
    p.k_sa = params.create(pre + "k_sa", {d, d}, Init::uniform_fan_in, rng);
    p.v_sa = params.create(pre + "v_sa", {d, d}, Init::uniform_fan_in, rng);
    p.o_sa = params.create(pre + "o_sa", {d, d}, Init::uniform_fan_in, rng);
  }
  p.w_h1 = params.create(pre + "w_h1", {d, d_h}, Init::uniform_fan_in, rng);
  p.w_h2 = params.create(pre + "w_h2", {d_h, d}, Init::uniform_fan_in, rng);
  p.w_e1 = params.create(pre + "w_e1", {d, 2 * d}, Init::uniform_fan_in, rng);
  p.w_e2 = params.create(pre + "w_e2", {2 * d, d}, Init::uniform_fan_in, rng);
  p.norm_h1 = detail::make_norm(params, pre + "norm_h1", d, rng);
  p.norm_h2 = detail::make_norm(params, pre + "norm_h2", d, rng);
  p.norm_e1 = detail::make_norm(params, pre + "norm_e1", d, rng);
  p.norm_e2 = detail::make_norm(params, pre + "norm_e2", d, rng);
  if (structure == Structure::SA_GA || structure == Structure::GA_SA)
    p.norm_sa = detail::make_norm(params, pre + "norm_sa", d, rng);
  return p;
}

// Largest valid relation id for a graph (reversed copies are shifted past the vocabulary).
inline int max_relation_id(const language::DependencyGraph& g) {
  const auto r = static_cast<int>(g.relation_count);
  return g.direction == language::Direction::bidirectional ? 2 * r : r;
}

inline DdiState init_ddi_state(const Tensor& word_features, const language::DependencyGraph& graph,
                               const DdiInputParams& p, const Tensor& pe) {
  const std::size_t n = word_features.rows(), d = word_features.cols();
  if (n != graph.node_count || pe.rows() != n) {
    throw ShapeError("init_ddi_state: " + std::to_string(n) + " node features and " + std::to_string(pe.rows()) +
                     " encodings for a graph of " + std::to_string(graph.node_count) + " nodes");
  }
  if (p.b0.cols() != d || p.c0.rows() != d || p.c0.cols() != pe.cols()) {
    throw ShapeError("init_ddi_state: input parameters do not match width " + std::to_string(d));
  }
  const int max_id = max_relation_id(graph);
  std::vector<double> beta;
  beta.reserve(graph.edges.size());
  for (const auto& e : graph.edges) {
    if (e.relation < 1 || e.relation > max_id) {
      throw ValidationError("edge relation id " + std::to_string(e.relation) + " is outside the vocabulary (1.." +
                            std::to_string(max_id) + ")");
    }
    beta.push_back(static_cast<double>(e.relation));
  }
  DdiState s;
  s.h = add(word_features, add_row(matmul(pe, transpose(p.c0)), p.c0_bias));
  if (graph.edges.empty()) {
    s.e = Tensor::zeros({0, d});
  } else {
    const std::size_t m = beta.size();
    const Tensor b = Tensor::matrix(m, 1, std::move(beta));
    s.e = add_row(matmul(b, p.b0), p.b0_bias);
  }
  return s;
}

struct GraphAttentionOutput {
  Tensor node_update;  // (N_w + 1) x D
  Tensor edge_scores;  // edges x D, the unnormalized score vectors
  Tensor edge_update;  // edges x D
  Tensor weights;      // edges x heads, softmax-normalized per destination node
};

// Messages flow src -> dst; the softmax for node i runs over edges with dst = i.
inline GraphAttentionOutput graph_attention(const DdiState& state, const language::DependencyGraph& graph,
                                            const DdiLayerParams& p) {
  const std::size_t n = state.h.rows(), d = state.h.cols(), m = graph.edges.size();
  detail::check_heads(d, p.heads);
  if (state.e.rows() != m) {
    throw ShapeError("graph_attention: " + std::to_string(state.e.rows()) + " edge features for " +
                     std::to_string(m) + " edges");
  }
  GraphAttentionOutput out;
  if (m == 0) {
    out.node_update = Tensor::zeros({n, d});
    out.edge_scores = Tensor::zeros({0, d});
    out.edge_update = Tensor::zeros({0, d});
    out.weights = Tensor::zeros({0, p.heads});
    return out;
  }
  std::vector<std::size_t> src(m), dst(m);
  for (std::size_t i = 0; i < m; ++i) {
    src[i] = graph.edges[i].src;
    dst[i] = graph.edges[i].dst;
  }
  const std::size_t dh = d / p.heads;
  const Tensor q = gather_rows(matmul(state.h, p.q_h), dst);
  const Tensor k = gather_rows(matmul(state.h, p.k_h), src);
  const Tensor v = gather_rows(matmul(state.h, p.v_h), src);
  const Tensor w_hat =
      mul(scale(mul(q, k), 1.0 / std::sqrt(static_cast<double>(dh))), matmul(state.e, p.e_e));
  std::vector<Tensor> agg, weights;
  for (std::size_t head = 0; head < p.heads; ++head) {
    const Tensor logit = row_sum(p.heads == 1 ? w_hat : slice_cols(w_hat, head * dh, dh));
    const Tensor w = segment_softmax(logit, dst, n);
    const Tensor vh = p.heads == 1 ? v : slice_cols(v, head * dh, dh);
    agg.push_back(segment_sum(mul_col(vh, w), dst, n));
    weights.push_back(w);
  }
  out.node_update = matmul(p.heads == 1 ? agg[0] : concat_cols(agg), p.o_h);
  out.edge_scores = w_hat;
  out.edge_update = matmul(w_hat, p.o_e);
  out.weights = p.heads == 1 ? weights[0] : concat_cols(weights);
  return out;
}

// Full self-attention over all nodes, projected back by o_sa.
inline Tensor self_attention(const Tensor& h, const DdiLayerParams& p) {
  const std::size_t d = h.cols(), dh = d / p.heads;
  const Tensor q = matmul(h, p.q_sa), k = matmul(h, p.k_sa), v = matmul(h, p.v_sa);
  std::vector<Tensor> parts;
  for (std::size_t head = 0; head < p.heads; ++head) {
    const Tensor qh = p.heads == 1 ? q : slice_cols(q, head * dh, dh);
    const Tensor kh = p.heads == 1 ? k : slice_cols(k, head * dh, dh);
    const Tensor vh = p.heads == 1 ? v : slice_cols(v, head * dh, dh);
    const Tensor a = softmax_axis(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))), 1);
    parts.push_back(matmul(a, vh));
  }
  return matmul(p.heads == 1 ? parts[0] : concat_cols(parts), p.o_sa);
}

inline DdiState ddi_layer(const DdiState& state, const language::DependencyGraph& graph, const DdiLayerParams& p) {
  Tensor h1;
  Tensor edge_update;
  auto run_ga = [&](const Tensor& h) {
    auto ga = graph_attention({h, state.e}, graph, p);
    edge_update = ga.edge_update;
    return ga.node_update;
  };
  switch (p.structure) {
    case Structure::GA:
      h1 = detail::apply_norm(add(state.h, run_ga(state.h)), p.norm_h1);
      break;
    case Structure::GA_PAR_SA:
      h1 = detail::apply_norm(add(add(state.h, self_attention(state.h, p)), run_ga(state.h)), p.norm_h1);
      break;
    case Structure::SA_GA: {
      const Tensor hs = detail::apply_norm(add(state.h, self_attention(state.h, p)), p.norm_sa);
      h1 = detail::apply_norm(add(hs, run_ga(hs)), p.norm_h1);
      break;
    }
    case Structure::GA_SA: {
      const Tensor hg = detail::apply_norm(add(state.h, run_ga(state.h)), p.norm_h1);
      h1 = detail::apply_norm(add(hg, self_attention(hg, p)), p.norm_sa);
      break;
    }
  }
  DdiState out;
  out.h = detail::apply_norm(add(h1, matmul(gelu(matmul(h1, p.w_h1)), p.w_h2)), p.norm_h2);
  if (graph.edges.empty()) {
    out.e = state.e;
  } else {
    const Tensor e1 = detail::apply_norm(add(state.e, edge_update), p.norm_e1);
    out.e = detail::apply_norm(add(e1, matmul(relu(matmul(e1, p.w_e1)), p.w_e2)), p.norm_e2);
  }
  return out;
}

}  // namespace stmn::ddi
