#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "kdiffe/graph.hpp"
#include "kdiffe/kernels.hpp"

namespace kdiffe {

/// Node identifier over both sides of the bipartite graph: users occupy
/// [0, num_users), item j is num_users + j.
using NodeId = std::uint32_t;

struct WalkConfig {
  std::uint32_t num_paths = 12;    // R
  std::uint32_t path_length = 50;  // M
  double restart_prob = 0.15;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const WalkConfig&, const WalkConfig&) = default;
};

/// Distinct nodes touched by `num_paths` walks of `path_length` steps from
/// `start`. Each step jumps back to `start` with probability restart_prob,
/// otherwise moves to a uniform random neighbour. Sorted, includes `start`.
std::vector<NodeId> rwr_visited_set(const InteractionGraph& graph, NodeId start, const WalkConfig& cfg,
                                    std::mt19937_64& rng);

/// Visited sets for every node, each walked with an RNG seeded from
/// (cfg.seed, node), so serial and parallel runs agree exactly.
std::vector<std::vector<NodeId>> compute_visited_sets(const InteractionGraph& graph, const WalkConfig& cfg,
                                                      Exec exec = Exec::kParallel);

/// |a ∩ b| / |a ∪ b| over sorted, duplicate-free sets; 0 when both are empty.
double jaccard(std::span<const NodeId> a, std::span<const NodeId> b);

/// S restricted to the support of A: same structure as graph.adjacency().
struct AttentionMatrix {
  CsrMatrix values;
};

AttentionMatrix attention_from_visited_sets(const InteractionGraph& graph,
                                            const std::vector<std::vector<NodeId>>& visited);
AttentionMatrix build_attention_matrix(const InteractionGraph& graph, const WalkConfig& cfg,
                                       Exec exec = Exec::kParallel);

/// Binary cache of S keyed by graph hash and walk config.
void save_attention_cache(const std::filesystem::path& path, const InteractionGraph& graph, const WalkConfig& cfg,
                          const AttentionMatrix& s);
/// Returns nothing when the file is missing or was written for a different
/// graph or config.
std::optional<AttentionMatrix> load_attention_cache(const std::filesystem::path& path, const InteractionGraph& graph,
                                                    const WalkConfig& cfg);

enum class DegreeMode {
  kAdjacency,  // degrees of the binary adjacency A
  kBlended,    // row/column sums of A + xi * S
};

struct PropagationOperator {
  CsrMatrix by_user;  // users x items
  CsrMatrix by_item;  // transpose, items x users
  double xi = 0.0;
};

/// L = D_u^{-1/2} (A + xi S) D_v^{-1/2} on the support of A. Zero-degree rows
/// and columns stay zero.
PropagationOperator build_propagation_operator(const InteractionGraph& graph, const AttentionMatrix& s, double xi,
                                               DegreeMode mode = DegreeMode::kAdjacency);

}  // namespace kdiffe
