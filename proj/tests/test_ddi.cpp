#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stmn/ddi/ddi.hpp"
#include "stmn/numerics/gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace stmn;
using namespace stmn::ddi;
using language::DependencyGraph;
using language::Edge;
using stmn::testing::random_tensor;

namespace {

constexpr Structure kAll[] = {Structure::GA, Structure::SA_GA, Structure::GA_SA, Structure::GA_PAR_SA};

DependencyGraph tree_graph(std::mt19937_64& rng, std::size_t n, std::size_t relations = 6) {
  DependencyGraph g;
  g.node_count = n;
  g.relation_count = relations;
  for (std::size_t v = 1; v < n; ++v) {
    g.edges.push_back({rng() % v, v, static_cast<int>(1 + rng() % relations)});
  }
  return g;
}

// Perturbs every parameter away from its init so norms and biases are not trivially
// identity/zero during gradient checks.
void jitter(ParamStore& params, std::mt19937_64& rng, double amount = 0.3) {
  std::uniform_real_distribution<double> dist(-amount, amount);
  for (auto& t : params.tensors())
    for (double& x : t.mutable_data()) x += dist(rng);
}

struct Fixture {
  ParamStore params;
  DdiLayerParams layer;
  DdiInputParams input;
  DependencyGraph graph;
  DdiState state;

  Fixture(std::uint64_t seed, std::size_t n, std::size_t d, Structure s, std::size_t heads = 1) {
    std::mt19937_64 rng(seed);
    graph = tree_graph(rng, n);
    input = register_ddi_input(params, d, 3, language::kMaxWords, rng);
    layer = register_ddi_layer(params, 1, d, 4 * d, s, heads, rng);
    jitter(params, rng);
    state.h = random_tensor(rng, n, d);
    state.e = random_tensor(rng, graph.edges.size(), d);
  }
};

}  // namespace

TEST(InitDdiState, Examples) {
  std::mt19937_64 rng(1);
  ParamStore params;
  auto in = register_ddi_input(params, 4, 3, 10, rng);
  DependencyGraph g;
  g.node_count = 3;
  g.relation_count = 5;
  g.edges = {{0, 2, 4}, {2, 1, 4}};
  auto words = random_tensor(rng, 3, 4, false);
  auto pe = random_tensor(rng, 3, 3, false);

  for (double& x : in.c0.mutable_data()) x = 0;
  auto s = init_ddi_state(words, g, in, pe);
  EXPECT_EQ(stmn::testing::max_abs_diff(s.h.data(), words.data()), 0.0);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(s.e.at(0, j), s.e.at(1, j));
    EXPECT_NEAR(s.e.at(0, j), 4 * in.b0.at(0, j) + in.b0_bias.at(0, j), 1e-15);
  }
  for (double& x : in.b0.mutable_data()) x = 0;
  auto s0 = init_ddi_state(words, g, in, pe);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(s0.e.at(1, j), in.b0_bias.at(0, j));

  g.edges.push_back({0, 1, 6});
  EXPECT_THROW(init_ddi_state(words, g, in, pe), ValidationError);
  g.direction = language::Direction::bidirectional;
  EXPECT_NO_THROW(init_ddi_state(words, g, in, pe));
}

TEST(GraphAttention, EmptyAndSingletonNeighborhoods) {
  std::mt19937_64 rng(2);
  ParamStore params;
  auto p = register_ddi_layer(params, 1, 4, 16, Structure::GA, 1, rng);
  DependencyGraph single;
  auto out = graph_attention({random_tensor(rng, 1, 4), Tensor::zeros({0, 4})}, single, p);
  for (double v : out.node_update.data()) EXPECT_EQ(v, 0.0);

  DependencyGraph pair;
  pair.node_count = 2;
  pair.relation_count = 3;
  pair.edges = {{0, 1, 2}};
  auto out2 = graph_attention({random_tensor(rng, 2, 4), random_tensor(rng, 1, 4)}, pair, p);
  EXPECT_EQ(out2.weights.item(), 1.0);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out2.node_update.at(0, j), 0.0);
}

TEST(GraphAttention, MatchesLoopOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Fixture f(seed, 3 + seed % 6, 6, Structure::GA);
    if (seed == 0) {
      f.graph.edges = {{0, 1, 1}, {1, 2, 2}};  // 3-node path
      f.graph.node_count = 3;
      std::mt19937_64 rng(99);
      f.state.h = random_tensor(rng, 3, 6);
      f.state.e = random_tensor(rng, 2, 6);
    }
    auto got = graph_attention(f.state, f.graph, f.layer);
    auto want = oracle::graph_attention(f.state, f.graph, f.layer);
    for (std::size_t i = 0; i < f.graph.node_count; ++i)
      for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(got.node_update.at(i, j), want.node_update[i][j], 1e-10);
    for (std::size_t k = 0; k < f.graph.edges.size(); ++k) {
      EXPECT_NEAR(got.weights.at(k, 0), want.weight[k], 1e-10);
      for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(got.edge_update.at(k, j), want.edge_update[k][j], 1e-10);
    }
  }
}

TEST(GraphAttention, WeightsSumToOnePerNonEmptyNeighborhood) {
  for (std::size_t heads : {1u, 2u, 4u}) {
    Fixture f(7 + heads, 9, 8, Structure::GA, heads);
    f.graph = language::orient_edges(f.graph, language::Direction::bidirectional);
    std::mt19937_64 rng(3);
    f.state.e = random_tensor(rng, f.graph.edges.size(), 8);
    auto out = graph_attention(f.state, f.graph, f.layer);
    for (std::size_t head = 0; head < heads; ++head) {
      std::vector<double> mass(9, 0.0);
      std::vector<bool> has(9, false);
      for (std::size_t k = 0; k < f.graph.edges.size(); ++k) {
        mass[f.graph.edges[k].dst] += out.weights.at(k, head);
        has[f.graph.edges[k].dst] = true;
      }
      for (std::size_t i = 0; i < 9; ++i)
        if (has[i]) EXPECT_NEAR(mass[i], 1.0, 1e-9);
    }
  }
}

TEST(GraphAttention, EdgeOrderPermutationInvariance) {
  Fixture f(11, 8, 6, Structure::GA);
  std::vector<std::size_t> perm(f.graph.edges.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(4);
  std::shuffle(perm.begin(), perm.end(), rng);
  DependencyGraph g2 = f.graph;
  for (std::size_t k = 0; k < perm.size(); ++k) g2.edges[k] = f.graph.edges[perm[k]];
  DdiState s2{f.state.h, gather_rows(f.state.e, perm)};
  auto a = graph_attention(f.state, f.graph, f.layer);
  auto b = graph_attention(s2, g2, f.layer);
  EXPECT_LE(stmn::testing::max_abs_diff(a.node_update.data(), b.node_update.data()), 1e-12);
  for (std::size_t k = 0; k < perm.size(); ++k)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(b.edge_update.at(k, j), a.edge_update.at(perm[k], j), 1e-12);
}

TEST(DdiLayer, ShapesPreservedForAllStructures) {
  for (auto s : kAll) {
    Fixture f(21, 6, 8, s);
    auto out = ddi_layer(f.state, f.graph, f.layer);
    EXPECT_EQ(out.h.shape(), f.state.h.shape()) << to_string(s);
    EXPECT_EQ(out.e.shape(), f.state.e.shape()) << to_string(s);
  }
  EXPECT_THROW(structure_from_string("GA+SA"), ConfigError);
  EXPECT_EQ(structure_from_string("SA_GA"), Structure::SA_GA);
}

TEST(DdiLayer, SkeletonWithZeroFfnAndIdentityNorm) {
  Fixture f(31, 5, 4, Structure::GA);
  for (Tensor* t : {&f.layer.w_h1, &f.layer.w_h2, &f.layer.w_e1, &f.layer.w_e2})
    for (double& x : t->mutable_data()) x = 0;
  for (auto* n : {&f.layer.norm_h1, &f.layer.norm_h2, &f.layer.norm_e1, &f.layer.norm_e2}) {
    for (double& x : n->gain.mutable_data()) x = 1;
    for (double& x : n->bias.mutable_data()) x = 0;
  }
  auto ga = graph_attention(f.state, f.graph, f.layer);
  auto expect_h = layer_norm(layer_norm(add(f.state.h, ga.node_update), f.layer.norm_h1.gain, f.layer.norm_h1.bias),
                             f.layer.norm_h2.gain, f.layer.norm_h2.bias);
  auto out = ddi_layer(f.state, f.graph, f.layer);
  EXPECT_LE(stmn::testing::max_abs_diff(out.h.data(), expect_h.data()), 1e-12);

  DependencyGraph lone;
  lone.node_count = 5;
  DdiState s{f.state.h, Tensor::zeros({0, 4})};
  auto alone = ddi_layer(s, lone, f.layer);
  auto ffn_only = layer_norm(layer_norm(f.state.h, f.layer.norm_h1.gain, f.layer.norm_h1.bias),
                             f.layer.norm_h2.gain, f.layer.norm_h2.bias);
  EXPECT_LE(stmn::testing::max_abs_diff(alone.h.data(), ffn_only.data()), 1e-12);
}

TEST(DdiLayer, GradientsMatchFiniteDifferencesForEveryStructure) {
  for (auto s : kAll) {
    for (std::size_t heads : {1u, 2u}) {
      Fixture f(41, 6, 8, s, heads);
      std::mt19937_64 rng(5);
      const Tensor rh = random_tensor(rng, 6, 8, false), re = random_tensor(rng, 5, 8, false);
      std::vector<Tensor> wrt = f.params.tensors();
      wrt.push_back(f.state.h);
      wrt.push_back(f.state.e);
      auto loss = [&] {
        auto out = ddi_layer(f.state, f.graph, f.layer);
        return add(sum(mul(out.h, rh)), sum(mul(out.e, re)));
      };
      auto r = finite_difference_check(loss, wrt);
      EXPECT_LE(r.max_rel_error, 1e-5) << to_string(s) << " heads=" << heads << " worst param " << r.worst_param;
    }
  }
}

TEST(DdiLayer, InitStateGradients) {
  std::mt19937_64 rng(6);
  ParamStore params;
  auto in = register_ddi_input(params, 5, 3, 10, rng);
  jitter(params, rng);
  auto g = tree_graph(rng, 5, 10);
  auto words = random_tensor(rng, 5, 5);
  auto pe = random_tensor(rng, 5, 3, false);
  const Tensor rh = random_tensor(rng, 5, 5, false), re = random_tensor(rng, 4, 5, false);
  std::vector<Tensor> wrt = params.tensors();
  wrt.push_back(words);
  auto r = finite_difference_check(
      [&] {
        auto s = init_ddi_state(words, g, in, pe);
        return add(sum(mul(s.h, rh)), sum(mul(s.e, re)));
      },
      wrt);
  EXPECT_LE(r.max_rel_error, 1e-5);
}
