#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "stmn/language/conllu.hpp"
#include "stmn/language/embedding.hpp"
#include "stmn/language/expression_gen.hpp"
#include "stmn/language/graph.hpp"
#include "stmn/language/laplacian.hpp"

using namespace stmn;
using namespace stmn::language;

namespace {

std::string read_fixture(const std::string& name) {
  std::ifstream in(std::string(STMN_FIXTURE_DIR) + "/" + name);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string row(int id, const std::string& form, int head, const std::string& rel) {
  return std::to_string(id) + "\t" + form + "\t_\t_\t_\t_\t" + std::to_string(head) + "\t" + rel + "\t_\t_\n";
}

RelationVocabulary vocab_for(const std::vector<ConlluSentence>& sents) {
  std::vector<std::string> labels;
  for (const auto& s : sents)
    for (const auto& t : s.tokens) labels.push_back(t.deprel);
  return RelationVocabulary::universal_plus(labels);
}

// Random well-formed tree: each token's head is ROOT or an earlier token, then
// ids are shuffled so heads can point forward too.
ConlluSentence random_tree(std::mt19937_64& rng, int n) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 1);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> heads(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const int node = perm[static_cast<std::size_t>(k)];
    heads[static_cast<std::size_t>(node - 1)] =
        k == 0 ? 0 : perm[static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(k))];
  }
  std::vector<std::string> forms, rels;
  for (int i = 0; i < n; ++i) {
    forms.push_back("w" + std::to_string(rng() % 5));
    rels.push_back(heads[static_cast<std::size_t>(i)] == 0 ? "root" : (rng() % 2 ? "amod" : "nmod"));
  }
  return make_sentence(forms, heads, rels);
}

std::size_t uf_find(std::vector<std::size_t>& p, std::size_t x) {
  while (p[x] != x) x = p[x] = p[p[x]];
  return x;
}

}  // namespace

TEST(ParseConllu, TwoTokenFixture) {
  auto sents = parse_conllu(row(1, "red", 2, "amod") + row(2, "chair", 0, "root"));
  ASSERT_EQ(sents.size(), 1u);
  ASSERT_EQ(sents[0].tokens.size(), 2u);
  EXPECT_EQ(sents[0].tokens[1].form, "chair");
  EXPECT_EQ(sents[0].tokens[1].head, 0);
  EXPECT_EQ(sents[0].tokens[0].head, 2);
  EXPECT_EQ(sents[0].tokens[0].deprel, "amod");
}

TEST(ParseConllu, ErrorsCarryLineNumbers) {
  auto expect_line = [](const std::string& text, std::size_t line) {
    try {
      parse_conllu(text);
      ADD_FAILURE() << "expected ParseError";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), line) << e.what();
    }
  };
  expect_line(row(1, "a", 2, "x") + row(2, "b", 3, "x") + row(3, "c", 1, "x"), 1);  // cycle
  expect_line(row(1, "a", 2, "x") + row(2, "b", 1, "x"), 1);                        // no root either
  expect_line("# c\n" + row(1, "a", 2, "x") + row(2, "b", 1, "y") + "\n", 1);
  expect_line(row(1, "a", 0, "root") + row(2, "b", 7, "x"), 2);  // dangling head
  expect_line(row(1, "a", 0, "root") + "\n" + row(1, "b", 0, "root") + row(2, "c", 0, "root"), 4);
  expect_line("1\tonly\tthree\n", 1);
}

TEST(ParseConllu, FixtureRoundTripsByteIdentically) {
  const std::string text = read_fixture("sentences.conllu");
  auto sents = parse_conllu(text);
  ASSERT_EQ(sents.size(), 10u);
  for (const auto& s : sents) EXPECT_LT(s.root_index(), s.tokens.size());
  EXPECT_EQ(serialize_conllu(sents), text);
  EXPECT_EQ(sents[5].tokens.size(), 3u);  // multiword range skipped
  EXPECT_EQ(sents[7].tokens.size(), 6u);  // empty node skipped
}

TEST(MergeTrees, NodeAndEdgeCounts) {
  auto a = make_sentence({"the", "red", "chair"}, {3, 3, 0}, {"det", "amod", "root"});
  auto b = make_sentence({"it", "is", "near", "lamp"}, {4, 4, 4, 0}, {"nsubj", "cop", "case", "root"});
  auto vocab = vocab_for({a, b});
  auto g = merge_trees({a, b}, vocab);
  EXPECT_EQ(g.node_count, 8u);
  EXPECT_EQ(g.edges.size(), 7u);
  EXPECT_EQ(g.edges[2], (Edge{0, 3, vocab.id("root")}));
  EXPECT_EQ(g.edges[6], (Edge{0, 7, vocab.id("root")}));
  EXPECT_EQ(g.edges[3], (Edge{7, 4, vocab.id("nsubj")}));

  auto one = make_sentence({"lamp"}, {0}, {"root"});
  auto g1 = merge_trees({one}, vocab);
  EXPECT_EQ(g1.node_count, 2u);
  EXPECT_EQ(g1.edges.size(), 1u);
  EXPECT_THROW(merge_trees({}, vocab), ValidationError);
  EXPECT_THROW(merge_trees({a}, RelationVocabulary::from_labels(std::vector<std::string>{"root"})), ValidationError);
}

TEST(MergeTrees, ConnectedAndAcyclicOnRandomTrees) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ConlluSentence> sents;
    const int n_sent = 1 + static_cast<int>(rng() % 4);
    for (int s = 0; s < n_sent; ++s) sents.push_back(random_tree(rng, 1 + static_cast<int>(rng() % 8)));
    auto g = merge_trees(sents, vocab_for(sents));
    ASSERT_EQ(g.edges.size() + 1, g.node_count);
    std::vector<std::size_t> parent(g.node_count);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    std::vector<int> heads(g.node_count, 0);
    for (const auto& e : g.edges) {
      const auto ra = uf_find(parent, e.src), rb = uf_find(parent, e.dst);
      ASSERT_NE(ra, rb) << "cycle";
      parent[ra] = rb;
      ++heads[e.dst];
    }
    for (std::size_t v = 1; v < g.node_count; ++v) EXPECT_EQ(heads[v], 1);
    EXPECT_EQ(heads[0], 0);
  }
}

TEST(OrientEdges, ReverseBidirectionalInvolution) {
  auto s = make_sentence({"the", "red", "chair"}, {3, 3, 0}, {"det", "amod", "root"});
  auto vocab = vocab_for({s});
  auto g = merge_trees({s}, vocab);
  auto r = orient_edges(g, Direction::reverse);
  EXPECT_EQ(r.edges[2], (Edge{3, 0, vocab.id("root")}));
  auto rr = orient_edges(r, Direction::reverse);
  auto sorted = [](std::vector<Edge> e) {
    std::sort(e.begin(), e.end());
    return e;
  };
  EXPECT_EQ(sorted(rr.edges), sorted(g.edges));
  EXPECT_EQ(orient_edges(g, Direction::forward).edges, g.edges);

  auto b = make_sentence({"it", "is", "near", "lamp"}, {4, 4, 4, 0}, {"nsubj", "cop", "case", "root"});
  auto g7 = merge_trees({s, b}, vocab_for({s, b}));
  auto bi = orient_edges(g7, Direction::bidirectional);
  EXPECT_EQ(bi.edges.size(), 14u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(bi.edges[7 + i].src, g7.edges[i].dst);
    EXPECT_GT(bi.edges[7 + i].relation, static_cast<int>(g7.relation_count));
  }
  EXPECT_THROW(orient_edges(bi, Direction::reverse), ContractError);
}

TEST(RelationVocabulary, SortedAndStable) {
  std::vector<std::string> a{"nsubj", "amod", "root", "amod"};
  std::vector<std::string> b{"root", "nsubj", "amod"};
  auto va = RelationVocabulary::from_labels(a), vb = RelationVocabulary::from_labels(b);
  EXPECT_EQ(va.labels(), vb.labels());
  EXPECT_EQ(va.id("amod"), 1);
  EXPECT_EQ(va.id("root"), 3);
  EXPECT_EQ(RelationVocabulary::universal_plus(a).labels(), RelationVocabulary::universal_plus(b).labels());
}

TEST(LaplacianPe, PathGraphEigenpairs) {
  DependencyGraph path;
  path.node_count = 3;
  path.edges = {{0, 1, 1}, {1, 2, 1}};
  auto pe = laplacian_pe(path, 2);
  ASSERT_EQ(pe.eigenvalues.size(), 2u);
  EXPECT_NEAR(pe.eigenvalues[0], 1.0, 1e-12);
  EXPECT_NEAR(pe.eigenvalues[1], 3.0, 1e-12);
  auto lap = graph_laplacian(path);
  for (std::size_t c = 0; c < 2; ++c) {
    Eigen::Vector3d v;
    for (int r = 0; r < 3; ++r) v(r) = pe.encoding.at(static_cast<std::size_t>(r), c);
    EXPECT_LE((lap * v - pe.eigenvalues[c] * v).norm(), 1e-8);
    EXPECT_NEAR(v.norm(), 1.0, 1e-9);
  }
}

TEST(LaplacianPe, PaddingResidualsOrthogonalityAndSigns) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ConlluSentence> sents;
    const int n_sent = 1 + static_cast<int>(rng() % 3);
    for (int s = 0; s < n_sent; ++s) sents.push_back(random_tree(rng, 1 + static_cast<int>(rng() % 9)));
    auto g = merge_trees(sents, vocab_for(sents));
    const std::size_t k = 1 + rng() % 12;
    auto pe = laplacian_pe(g, k);
    const std::size_t n = g.node_count;
    ASSERT_EQ(pe.encoding.shape(), (Shape{n, k}));
    EXPECT_EQ(pe.eigenvalues.size(), std::min(k, n - 1));
    auto lap = graph_laplacian(g);
    for (std::size_t c = 0; c < k; ++c) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(n));
      for (std::size_t r = 0; r < n; ++r) v(static_cast<Eigen::Index>(r)) = pe.encoding.at(r, c);
      if (c >= pe.eigenvalues.size()) {
        EXPECT_EQ(v.norm(), 0.0);
        continue;
      }
      EXPECT_LE((lap * v - pe.eigenvalues[c] * v).norm(), 1e-8);
      EXPECT_NEAR(v.norm(), 1.0, 1e-9);
      for (std::size_t r = 0; r < n; ++r) {
        if (std::fabs(v(static_cast<Eigen::Index>(r))) > 1e-9) {
          EXPECT_GT(v(static_cast<Eigen::Index>(r)), 0.0);
          break;
        }
      }
      for (std::size_t c2 = 0; c2 < c; ++c2) {
        double dot = 0;
        for (std::size_t r = 0; r < n; ++r) dot += v(static_cast<Eigen::Index>(r)) * pe.encoding.at(r, c2);
        EXPECT_NEAR(dot, 0.0, 1e-8);
      }
    }
    // Random sign flips only ever negate whole columns.
    std::mt19937_64 flips(trial);
    auto flipped = laplacian_pe(g, k, &flips);
    for (std::size_t c = 0; c < pe.eigenvalues.size(); ++c) {
      std::size_t big = 0;
      for (std::size_t r = 1; r < n; ++r)
        if (std::fabs(pe.encoding.at(r, c)) > std::fabs(pe.encoding.at(big, c))) big = r;
      const double s = flipped.encoding.at(big, c) * pe.encoding.at(big, c) >= 0 ? 1.0 : -1.0;
      for (std::size_t r = 0; r < n; ++r) EXPECT_NEAR(flipped.encoding.at(r, c), s * pe.encoding.at(r, c), 1e-12);
    }
  }
}

TEST(EmbedTokens, RowsShapeAndSparseGradients) {
  std::vector<std::string> words{"the", "red", "chair", "lamp"};
  auto vocab = WordVocabulary::from_words(words);
  std::mt19937_64 rng(2);
  ParamStore params;
  register_embeddings(params, vocab.size(), 5, rng);
  Expression e;
  e.tokens = {"the", "red", "the", "zebra"};
  auto emb = embed_tokens(e, vocab, params);
  ASSERT_EQ(emb.words.shape(), (Shape{4, 5}));
  for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(emb.words.at(0, j), emb.words.at(2, j));
  EXPECT_EQ(vocab.index("zebra"), 0u);
  EXPECT_EQ(vocab.index("RED"), vocab.index("red"));

  sum(mul(emb.words, emb.words)).backward();
  const auto& table = params.get("text.embedding");
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    bool present = r == vocab.index("the") || r == vocab.index("red") || r == 0;
    double mass = 0;
    for (std::size_t j = 0; j < 5; ++j) mass += std::fabs(table.grad()[r * 5 + j]);
    EXPECT_EQ(mass > 0, present) << r;
  }
}

TEST(GenerateExpression, UniqueAndMultipleTags) {
  std::vector<scene::ObjectRecord> objs{
      {1, 1, "chair", "red", {}, {}, {{"near", 2}}},
      {2, 2, "table", "blue", {}, {}, {{"near", 1}}},
  };
  auto templates = default_templates();
  auto e = instantiate(templates[0], objs, objs[0]);
  EXPECT_EQ(e.expression.raw_text, "the red chair");
  EXPECT_EQ(e.target_instance, 1);
  EXPECT_EQ(e.tag, "unique");

  objs.push_back({3, 1, "chair", "green", {}, {}, {{"near", 2}}});
  auto m = instantiate(templates[2], objs, objs[0]);
  EXPECT_EQ(m.expression.raw_text, "the red chair near the table");
  EXPECT_EQ(m.tag, "multiple");
  EXPECT_THROW(instantiate(templates[1], objs, objs[0]), GenerationError);

  objs.push_back({4, 1, "chair", "red", {}, {}, {}});
  EXPECT_THROW(instantiate(templates[0], objs, objs[0]), GenerationError);
  std::vector<scene::ObjectRecord> dup{objs[0], objs[3]};
  std::mt19937_64 rng(1);
  EXPECT_THROW(generate_expression(dup, templates, rng), GenerationError);
}

TEST(GenerateExpression, EveryRecordParsesBack) {
  scene::SceneConfig cfg;
  cfg.n_points = 600;
  std::mt19937_64 rng(10);
  auto templates = default_templates();
  for (int trial = 0; trial < 100; ++trial) {
    auto g = scene::generate_scene(cfg, 500 + trial);
    auto e = generate_expression(g.objects, templates, rng);
    auto back = parse_conllu(e.conllu);
    EXPECT_EQ(serialize_conllu(back), e.conllu);
    auto expr = expression_from_sentences(back);
    EXPECT_EQ(expr.tokens, e.expression.tokens);
    auto cats = mentioned_categories(expr, cfg);
    const auto* target = find_object(g.objects, e.target_instance);
    ASSERT_NE(target, nullptr);
    EXPECT_TRUE(cats.contains(target->category_id));
  }
}
