#include <doctest.h>

#include <fstream>
#include <set>

#include "kdiffe/errors.hpp"
#include "kdiffe/graph.hpp"
#include "test_util.hpp"

using namespace kdiffe;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const fs::path& dir, const std::string& name, const std::string& text) {
  auto p = dir / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("singleton interaction file") {
  auto dir = testing::scratch_dir("graph_singleton");
  auto g = load_interactions(write_file(dir, "a.tsv", "0\t0\n"));
  CHECK(g.num_users() == 1);
  CHECK(g.num_items() == 1);
  CHECK(g.num_edges() == 1);
}

TEST_CASE("duplicate edge is dropped with a warning") {
  auto dir = testing::scratch_dir("graph_dup");
  Warnings w;
  auto g = load_interactions(write_file(dir, "a.tsv", "0\t1\n# comment\n\n2\t1\n0\t1\n"), &w);
  // Oracle: distinct lines by set construction.
  std::set<std::pair<int, int>> distinct{{0, 1}, {2, 1}, {0, 1}};
  CHECK(g.num_edges() == distinct.size());
  CHECK(w.size() == 1);
}

TEST_CASE("malformed line reports its line number") {
  auto dir = testing::scratch_dir("graph_bad");
  auto p = write_file(dir, "a.tsv", "0\t1\n# ok\n3 4 5\n");
  try {
    load_interactions(p);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(load_interactions(write_file(dir, "e.tsv", "# nothing\n")), DataError);
  CHECK_THROWS_AS(load_interactions(dir / "missing.tsv"), DataError);
}

TEST_CASE("string ids are re-indexed densely with a persisted mapping") {
  auto dir = testing::scratch_dir("graph_ids");
  auto g = load_interactions(write_file(dir, "a.tsv", "bob\tx\nalice\ty\nbob\ty\n"));
  CHECK(g.num_users() == 2);
  CHECK(g.num_items() == 2);
  CHECK(g.user_ids() == std::vector<std::string>{"alice", "bob"});
  CHECK(g.has_edge(1, 0));
  // Numeric tokens sort numerically, not lexicographically.
  auto h = load_interactions(write_file(dir, "b.tsv", "10\t0\n9\t0\n"));
  CHECK(h.user_ids() == std::vector<std::string>{"9", "10"});
}

TEST_CASE("kg loading: neighbours, empty file, unknown item, new relation tokens") {
  auto dir = testing::scratch_dir("graph_kg");
  auto g = load_interactions(write_file(dir, "a.tsv", "0\t0\n0\t1\n"));
  auto kg = load_kg(write_file(dir, "kg.tsv", "0\t0\t0\n0\t1\t1\n"), g);
  auto nb = kg.neighbors(0);
  REQUIRE(nb.size() == 2);
  CHECK(nb[0].entity == 0);
  CHECK(nb[0].relation == 0);
  CHECK(nb[1].entity == 1);
  CHECK(nb[1].relation == 1);

  auto empty = load_kg(write_file(dir, "kg0.tsv", ""), g);
  CHECK(empty.num_entities() == 0);
  CHECK(empty.neighbors(0).empty());
  CHECK(empty.neighbors(1).empty());

  CHECK_THROWS_AS(load_kg(write_file(dir, "kg1.tsv", "0\tr\te\n7\tr\te\n"), g), DataError);
  auto fresh = load_kg(write_file(dir, "kg2.tsv", "1\tbrand-new\te\n"), g);
  CHECK(fresh.num_relations() == 1);
}

TEST_CASE("100 random triples with 7 duplicates keep 93") {
  std::mt19937_64 rng(5);
  std::set<Triple> distinct;
  std::vector<Triple> triples;
  std::uniform_int_distribution<Index> item(0, 19), rel(0, 3), ent(0, 29);
  while (distinct.size() < 93) {
    Triple t{item(rng), rel(rng), ent(rng)};
    if (distinct.insert(t).second) triples.push_back(t);
  }
  for (int k = 0; k < 7; ++k) triples.push_back(triples[static_cast<std::size_t>(k) * 11]);
  std::shuffle(triples.begin(), triples.end(), rng);
  std::size_t dups = 0;
  auto kg = KnowledgeGraph::from_triples(20, 30, 4, triples, &dups);
  CHECK(kg.num_triples() == 93);
  CHECK(dups == 7);
}

TEST_CASE("leave-one-out split") {
  // User 0 has 5 edges, user 1 only one (ineligible).
  std::vector<Edge> edges{{0, 0}, {0, 1}, {0, 2}, {0, 3}, {0, 4}, {1, 0}};
  auto g = InteractionGraph::from_edges(2, 5, edges);
  auto s = split_train_test(g, 1, 3);
  CHECK(s.train.user_degree(0) == 4);
  CHECK(s.train.user_degree(1) == 1);
  REQUIRE(s.test.size() == 1);
  CHECK(s.test[0].user == 0);
  CHECK_FALSE(s.train.has_edge(0, s.test[0].item));
  auto again = split_train_test(g, 1, 3);
  CHECK(again.test == s.test);
  CHECK(again.train.edges() == s.train.edges());
}

TEST_CASE("split recount: 1000 edges, 200 eligible users -> 800 train edges") {
  std::vector<Edge> edges;
  for (Index u = 0; u < 200; ++u)
    for (Index k = 0; k < 5; ++k) edges.push_back({u, (u * 7 + k * 13) % 97});
  auto g = InteractionGraph::from_edges(200, 97, edges);
  REQUIRE(g.num_edges() == 1000);
  auto s = split_train_test(g, 1, 11);
  std::size_t eligible = 0;
  for (Index u = 0; u < 200; ++u) eligible += g.user_degree(u) > 1;
  CHECK(s.train.num_edges() == 1000 - eligible);
  CHECK(s.test.size() == eligible);
  for (const auto& p : s.test) {
    CHECK_FALSE(s.train.has_edge(p.user, p.item));
    CHECK(g.has_edge(p.user, p.item));
    CHECK(s.train.user_degree(p.user) >= 1);
  }
}

TEST_CASE("degree sums equal the edge count") {
  auto data = generate_synthetic(SyntheticSpec{});
  std::size_t su = 0, si = 0;
  for (auto d : data.graph.user_degrees()) su += d;
  for (auto d : data.graph.item_degrees()) si += d;
  CHECK(su == data.graph.num_edges());
  CHECK(si == data.graph.num_edges());
}

TEST_CASE("synthetic: degenerate probabilities give a block-diagonal adjacency") {
  SyntheticSpec spec;
  spec.num_users = 4;
  spec.num_items = 4;
  spec.num_entities = 4;
  spec.num_clusters = 2;
  spec.intra_cluster_prob = 1.0;
  spec.noise_edge_prob = 0.0;
  spec.relevant_relations_per_item = 1;
  spec.noise_relations_per_item = 1;
  auto d = generate_synthetic(spec);
  for (Index u = 0; u < 4; ++u)
    for (Index i = 0; i < 4; ++i) CHECK(d.graph.has_edge(u, i) == (u / 2 == i / 2));
}

TEST_CASE("synthetic label counts follow the spec") {
  SyntheticSpec spec;
  spec.num_items = 10;
  spec.num_users = 20;
  spec.relevant_relations_per_item = 2;
  spec.noise_relations_per_item = 1;
  auto d = generate_synthetic(spec);
  std::size_t relevant = 0;
  for (const auto& l : d.planted.labels) {
    const bool same = d.planted.item_cluster[l.triple.item] == d.planted.entity_cluster[l.triple.entity];
    if (l.label == TripleLabel::kRelevant) {
      ++relevant;
      CHECK(same);
    } else {
      CHECK_FALSE(same);
    }
  }
  CHECK(d.planted.labels.size() == 30);
  CHECK(relevant == 20);
  CHECK(d.kg.num_triples() == 30);
}

TEST_CASE("property: label partitions match spec counts for many specs") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    SyntheticSpec spec;
    spec.seed = rng();
    spec.num_clusters = 1 + rng() % 4;
    spec.num_users = spec.num_clusters + rng() % 30;
    spec.num_items = spec.num_clusters + rng() % 30;
    spec.num_entities = spec.num_clusters * (2 + rng() % 5);
    spec.relevant_relations_per_item = 1 + rng() % 2;
    spec.noise_relations_per_item = spec.num_clusters > 1 ? 1 + rng() % 2 : 1;
    if (spec.num_clusters == 1) continue;  // no out-of-cluster entities for noise
    auto d = generate_synthetic(spec);
    std::size_t relevant = 0, noise = 0;
    for (const auto& l : d.planted.labels) (l.label == TripleLabel::kRelevant ? relevant : noise)++;
    CHECK(relevant == spec.num_items * spec.relevant_relations_per_item);
    CHECK(noise == spec.num_items * spec.noise_relations_per_item);
    for (Index u = 0; u < spec.num_users; ++u) CHECK(d.graph.user_degree(u) >= 1);
  }
}

TEST_CASE("synthetic validation") {
  SyntheticSpec bad;
  bad.intra_cluster_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  SyntheticSpec zero;
  zero.num_users = 0;
  CHECK_THROWS_AS(zero.validate(), ParameterError);
}

TEST_CASE("synthetic files are byte-identical for a fixed seed and round-trip") {
  auto a = testing::scratch_dir("graph_synth_a");
  auto b = testing::scratch_dir("graph_synth_b");
  write_synthetic(generate_synthetic(SyntheticSpec{}), a);
  write_synthetic(generate_synthetic(SyntheticSpec{}), b);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  for (const char* f : {"interactions.tsv", "kg.tsv", "labels.tsv"}) CHECK(slurp(a / f) == slurp(b / f));

  auto data = generate_synthetic(SyntheticSpec{});
  auto g = load_interactions(a / "interactions.tsv");
  CHECK(g.edges() == data.graph.edges());
  auto kg = load_kg(a / "kg.tsv", g);
  CHECK(kg.triples().size() == data.kg.triples().size());

  // Save and reload an arbitrary graph: identical edge set.
  save_interactions(g, a / "again.tsv");
  CHECK(load_interactions(a / "again.tsv").edges() == g.edges());
}
