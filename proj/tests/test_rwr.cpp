#include <doctest.h>

#include <set>

#include "kdiffe/errors.hpp"
#include "kdiffe/rwr.hpp"
#include "test_util.hpp"

using namespace kdiffe;

namespace {

InteractionGraph random_bipartite(std::size_t nu, std::size_t ni, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(p);
  std::vector<Edge> edges;
  for (Index u = 0; u < nu; ++u) {
    edges.push_back({u, static_cast<Index>(u % ni)});  // no isolated users
    for (Index i = 0; i < ni; ++i)
      if (keep(rng)) edges.push_back({u, i});
  }
  return InteractionGraph::from_edges(nu, ni, edges);
}

std::vector<std::vector<NodeId>> adjacency_lists(const InteractionGraph& g) {
  std::vector<std::vector<NodeId>> adj(g.num_nodes());
  const auto nu = static_cast<NodeId>(g.num_users());
  for (const auto& e : g.edges()) {
    adj[e.user].push_back(nu + e.item);
    adj[nu + e.item].push_back(e.user);
  }
  return adj;
}

/// Exact probability that node `target` is hit by at least one of R walks,
/// by propagating the walker's distribution with `target` made absorbing.
double exact_inclusion(const std::vector<std::vector<NodeId>>& adj, NodeId start, NodeId target,
                       const WalkConfig& cfg) {
  if (target == start) return 1.0;
  std::vector<double> p(adj.size(), 0.0), next(adj.size());
  p[start] = 1.0;
  double hit = 0.0;
  for (std::uint32_t step = 0; step < cfg.path_length; ++step) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t x = 0; x < adj.size(); ++x) {
      if (p[x] == 0.0) continue;
      next[start] += cfg.restart_prob * p[x];
      const double share = (1.0 - cfg.restart_prob) * p[x] / static_cast<double>(adj[x].size());
      for (NodeId y : adj[x]) next[y] += share;
    }
    hit += next[target];
    next[target] = 0.0;
    std::swap(p, next);
  }
  return 1.0 - std::pow(1.0 - hit, cfg.num_paths);
}

void check_visit_frequencies(const InteractionGraph& g, NodeId start, const WalkConfig& cfg) {
  const auto adj = adjacency_lists(g);
  const int runs = 10000;
  std::vector<int> counts(g.num_nodes(), 0);
  std::mt19937_64 rng(cfg.seed);
  for (int r = 0; r < runs; ++r)
    for (NodeId v : rwr_visited_set(g, start, cfg, rng)) ++counts[v];
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    const double empirical = counts[v] / static_cast<double>(runs);
    CHECK(std::abs(empirical - exact_inclusion(adj, start, v, cfg)) <= 0.02);
  }
}

}  // namespace

TEST_CASE("visited sets: isolated start and full restart give the singleton") {
  auto g = InteractionGraph::from_edges(3, 2, {{0, 0}, {1, 0}});
  std::mt19937_64 rng(1);
  CHECK(rwr_visited_set(g, 2, WalkConfig{}, rng) == std::vector<NodeId>{2});
  WalkConfig always{4, 10, 1.0, 1};
  CHECK(rwr_visited_set(g, 0, always, rng) == std::vector<NodeId>{0});
}

TEST_CASE("path graph u0-v0-u1 visit frequencies match the exact chain") {
  // Nodes: u0 = 0, u1 = 1, v0 = 2.
  auto g = InteractionGraph::from_edges(2, 1, {{0, 0}, {1, 0}});
  WalkConfig cfg{12, 50, 0.15, 3};
  check_visit_frequencies(g, 0, cfg);
  std::mt19937_64 rng(4);
  CHECK(rwr_visited_set(g, 0, cfg, rng) == std::vector<NodeId>{0, 1, 2});
}

TEST_CASE("property: RWR visit frequencies on random graphs <= 30 nodes") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    auto g = random_bipartite(6 + seed, 8 + seed, 0.15, seed);
    REQUIRE(g.num_nodes() <= 30);
    WalkConfig cfg{1 + static_cast<std::uint32_t>(seed % 2), 4 + static_cast<std::uint32_t>(seed), 0.2, seed};
    check_visit_frequencies(g, static_cast<NodeId>(seed % g.num_users()), cfg);
  }
}

TEST_CASE("jaccard") {
  std::vector<NodeId> a{1, 2, 3}, b{2, 3, 4}, c{7, 8}, e;
  CHECK(jaccard(a, b) == 0.5);
  CHECK(jaccard(a, a) == 1.0);
  CHECK(jaccard(a, c) == 0.0);
  CHECK(jaccard(e, e) == 0.0);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    std::set<NodeId> x, y;
    for (int k = 0; k < 6; ++k) {
      x.insert(rng() % 10);
      y.insert(rng() % 10);
    }
    std::vector<NodeId> vx(x.begin(), x.end()), vy(y.begin(), y.end());
    std::set<NodeId> uni = x, inter;
    uni.insert(y.begin(), y.end());
    for (auto v : x)
      if (y.count(v)) inter.insert(v);
    CHECK(jaccard(vx, vy) == jaccard(vy, vx));
    CHECK(jaccard(vx, vy) == doctest::Approx(double(inter.size()) / double(uni.size())));
  }
}

TEST_CASE("attention matrix: single edge, structure, range, determinism") {
  auto one = InteractionGraph::from_edges(1, 1, {{0, 0}});
  auto s1 = build_attention_matrix(one, WalkConfig{});
  CHECK(s1.values.at(0, 0) == 1.0);

  auto g = random_bipartite(10, 10, 0.2, 7);
  WalkConfig cfg{12, 50, 0.15, 9};
  auto s = build_attention_matrix(g, cfg, Exec::kSerial);
  CHECK(s.values.same_structure(g.adjacency()));
  for (double v : s.values.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(build_attention_matrix(g, cfg, Exec::kSerial).values == s.values);
  CHECK(build_attention_matrix(g, cfg, Exec::kParallel).values == s.values);

  // Reference recomputation from the same visited sets.
  auto sets = compute_visited_sets(g, cfg, Exec::kSerial);
  for (const auto& e : g.edges()) {
    const auto& a = sets[e.user];
    const auto& b = sets[g.num_users() + e.item];
    std::set<NodeId> sa(a.begin(), a.end()), uni(a.begin(), a.end());
    uni.insert(b.begin(), b.end());
    std::size_t common = 0;
    for (auto v : b) common += sa.count(v);
    CHECK(s.values.at(e.user, e.item) == static_cast<double>(common) / static_cast<double>(uni.size()));
  }
}

TEST_CASE("star graph: hub-leaf similarities agree by symmetry") {
  // Hub is item 0 joined to users 0..3.
  auto g = InteractionGraph::from_edges(4, 1, {{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  std::vector<double> mean(4, 0.0);
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    auto s = build_attention_matrix(g, WalkConfig{12, 50, 0.0, rep});
    for (Index u = 0; u < 4; ++u) mean[u] += s.values.at(u, 0) / 20.0;
  }
  for (Index u = 1; u < 4; ++u) CHECK(std::abs(mean[u] - mean[0]) <= 0.05);
}

TEST_CASE("propagation operator: hand values and xi = 0 reduction") {
  auto one = InteractionGraph::from_edges(1, 1, {{0, 0}});
  AttentionMatrix s1{one.adjacency()};
  CHECK(build_propagation_operator(one, s1, 0.7).by_user.at(0, 0) == doctest::Approx(1.7).epsilon(1e-15));

  auto k22 = InteractionGraph::from_edges(2, 2, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  auto op22 = build_propagation_operator(k22, AttentionMatrix{k22.adjacency()}, 0.0);
  for (double v : op22.by_user.values) CHECK(v == 0.5);

  auto g = random_bipartite(12, 9, 0.25, 3);
  auto s = build_attention_matrix(g, WalkConfig{});
  auto op = build_propagation_operator(g, s, 0.0);
  CsrMatrix plain = g.adjacency();
  for (std::size_t u = 0; u < plain.rows; ++u)
    for (std::size_t k = plain.row_ptr[u]; k < plain.row_ptr[u + 1]; ++k)
      plain.values[k] = 1.0 / std::sqrt(static_cast<double>(g.user_degree(static_cast<Index>(u))) *
                                        static_cast<double>(g.item_degree(plain.col_idx[k])));
  CHECK(op.by_user == plain);
  CHECK(op.by_item == plain.transpose());
}

TEST_CASE("propagation operator: monotone in xi, non-negative, guarded") {
  auto g = random_bipartite(8, 8, 0.3, 5);
  auto s = build_attention_matrix(g, WalkConfig{});
  auto lo = build_propagation_operator(g, s, 0.2);
  auto hi = build_propagation_operator(g, s, 0.9);
  for (std::size_t k = 0; k < lo.by_user.nnz(); ++k) {
    CHECK(lo.by_user.values[k] >= 0.0);
    CHECK(hi.by_user.values[k] >= lo.by_user.values[k]);
  }
  CHECK_THROWS_AS(build_propagation_operator(g, s, -0.1), ParameterError);
  // A graph with an item nobody touched: zero column, no NaN.
  auto sparse = InteractionGraph::from_edges(2, 3, {{0, 0}, {1, 1}});
  auto op = build_propagation_operator(sparse, AttentionMatrix{sparse.adjacency()}, 0.7);
  CHECK(op.by_item.row_cols(2).empty());
  auto blended = build_propagation_operator(g, s, 0.7, DegreeMode::kBlended);
  for (double v : blended.by_user.values) CHECK(std::isfinite(v));
}

TEST_CASE("attention cache round trip and mismatch") {
  auto dir = testing::scratch_dir("rwr_cache");
  auto g = random_bipartite(6, 6, 0.3, 2);
  WalkConfig cfg{};
  auto s = build_attention_matrix(g, cfg);
  save_attention_cache(dir / "s.bin", g, cfg, s);
  auto loaded = load_attention_cache(dir / "s.bin", g, cfg);
  REQUIRE(loaded.has_value());
  CHECK(loaded->values == s.values);
  WalkConfig other = cfg;
  other.seed = 99;
  CHECK_FALSE(load_attention_cache(dir / "s.bin", g, other).has_value());
  CHECK_FALSE(load_attention_cache(dir / "missing.bin", g, cfg).has_value());
}
