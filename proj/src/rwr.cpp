#include "kdiffe/rwr.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "kdiffe/errors.hpp"

namespace kdiffe {

void WalkConfig::validate() const {
  if (num_paths < 1 || path_length < 1) throw ParameterError("walk needs num_paths >= 1 and path_length >= 1");
  if (!(restart_prob >= 0.0 && restart_prob <= 1.0)) throw ParameterError("restart_prob must lie in [0, 1]");
}

namespace {

std::span<const Index> neighbours(const InteractionGraph& graph, NodeId node) {
  const auto nu = static_cast<NodeId>(graph.num_users());
  return node < nu ? graph.items_of(node) : graph.users_of(node - nu);
}

NodeId to_node(const InteractionGraph& graph, NodeId node, Index neighbour) {
  const auto nu = static_cast<NodeId>(graph.num_users());
  return node < nu ? nu + neighbour : neighbour;
}

}  // namespace

std::vector<NodeId> rwr_visited_set(const InteractionGraph& graph, NodeId start, const WalkConfig& cfg,
                                    std::mt19937_64& rng) {
  cfg.validate();
  if (start >= graph.num_nodes()) throw ParameterError("walk start node out of range");
  std::vector<NodeId> visited{start};
  if (neighbours(graph, start).empty()) return visited;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::uint32_t path = 0; path < cfg.num_paths; ++path) {
    NodeId at = start;
    for (std::uint32_t step = 0; step < cfg.path_length; ++step) {
      if (unit(rng) < cfg.restart_prob) {
        at = start;
        continue;
      }
      auto nb = neighbours(graph, at);
      const auto pick = std::uniform_int_distribution<std::size_t>(0, nb.size() - 1)(rng);
      at = to_node(graph, at, nb[pick]);
      visited.push_back(at);
    }
  }
  std::sort(visited.begin(), visited.end());
  visited.erase(std::unique(visited.begin(), visited.end()), visited.end());
  return visited;
}

std::vector<std::vector<NodeId>> compute_visited_sets(const InteractionGraph& graph, const WalkConfig& cfg,
                                                      Exec exec) {
  cfg.validate();
  const auto n = static_cast<std::int64_t>(graph.num_nodes());
  std::vector<std::vector<NodeId>> sets(graph.num_nodes());
  auto walk = [&](std::int64_t node) {
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(node)));
    sets[node] = rwr_visited_set(graph, static_cast<NodeId>(node), cfg, rng);
  };
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t node = 0; node < n; ++node) walk(node);
  } else {
    for (std::int64_t node = 0; node < n; ++node) walk(node);
  }
  return sets;
}

double jaccard(std::span<const NodeId> a, std::span<const NodeId> b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

AttentionMatrix attention_from_visited_sets(const InteractionGraph& graph,
                                            const std::vector<std::vector<NodeId>>& visited) {
  AttentionMatrix s{graph.adjacency()};
  const auto nu = graph.num_users();
  for (std::size_t u = 0; u < nu; ++u) {
    for (std::size_t k = s.values.row_ptr[u]; k < s.values.row_ptr[u + 1]; ++k) {
      s.values.values[k] = jaccard(visited[u], visited[nu + s.values.col_idx[k]]);
    }
  }
  return s;
}

AttentionMatrix build_attention_matrix(const InteractionGraph& graph, const WalkConfig& cfg, Exec exec) {
  return attention_from_visited_sets(graph, compute_visited_sets(graph, cfg, exec));
}

namespace {

constexpr char kCacheMagic[8] = {'K', 'D', 'F', 'S', 'C', 'A', 'C', 'H'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

}  // namespace

void save_attention_cache(const std::filesystem::path& path, const InteractionGraph& graph, const WalkConfig& cfg,
                          const AttentionMatrix& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write attention cache " + path.string());
  out.write(kCacheMagic, sizeof(kCacheMagic));
  put(out, graph.content_hash());
  put(out, cfg.num_paths);
  put(out, cfg.path_length);
  put(out, cfg.restart_prob);
  put(out, cfg.seed);
  put<std::uint64_t>(out, s.values.values.size());
  out.write(reinterpret_cast<const char*>(s.values.values.data()),
            static_cast<std::streamsize>(s.values.values.size() * sizeof(double)));
}

std::optional<AttentionMatrix> load_attention_cache(const std::filesystem::path& path, const InteractionGraph& graph,
                                                    const WalkConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) return std::nullopt;
  std::uint64_t hash = 0, count = 0;
  WalkConfig stored;
  if (!get(in, hash) || !get(in, stored.num_paths) || !get(in, stored.path_length) || !get(in, stored.restart_prob) ||
      !get(in, stored.seed) || !get(in, count))
    return std::nullopt;
  if (hash != graph.content_hash() || !(stored == cfg) || count != graph.num_edges()) return std::nullopt;
  AttentionMatrix s{graph.adjacency()};
  if (!in.read(reinterpret_cast<char*>(s.values.values.data()), static_cast<std::streamsize>(count * sizeof(double))))
    return std::nullopt;
  return s;
}

PropagationOperator build_propagation_operator(const InteractionGraph& graph, const AttentionMatrix& s, double xi,
                                               DegreeMode mode) {
  if (!(xi >= 0.0) || !std::isfinite(xi)) throw ParameterError("xi must be a finite non-negative scalar");
  const auto& a = graph.adjacency();
  if (!s.values.same_structure(a)) throw ParameterError("attention matrix support differs from the adjacency");

  std::vector<double> du(graph.num_users(), 0.0), dv(graph.num_items(), 0.0);
  for (std::size_t u = 0; u < a.rows; ++u) {
    for (std::size_t k = a.row_ptr[u]; k < a.row_ptr[u + 1]; ++k) {
      const double w = mode == DegreeMode::kAdjacency ? 1.0 : 1.0 + xi * s.values.values[k];
      du[u] += w;
      dv[a.col_idx[k]] += w;
    }
  }

  PropagationOperator op;
  op.xi = xi;
  op.by_user = a;
  for (std::size_t u = 0; u < a.rows; ++u) {
    for (std::size_t k = a.row_ptr[u]; k < a.row_ptr[u + 1]; ++k) {
      const double denom = std::sqrt(du[u] * dv[a.col_idx[k]]);
      op.by_user.values[k] = denom > 0.0 ? (1.0 + xi * s.values.values[k]) / denom : 0.0;
    }
  }
  op.by_item = op.by_user.transpose();
  return op;
}

}  // namespace kdiffe
