#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdiffe/matrix.hpp"

namespace kdiffe {

using Index = std::uint32_t;

/// Sink for non-fatal loader diagnostics (duplicate edges, clamps, ...).
using Warnings = std::vector<std::string>;

struct Edge {
  Index user;
  Index item;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Bipartite user-item graph with binary adjacency. Immutable after construction.
class InteractionGraph {
 public:
  InteractionGraph() = default;

  /// Builds from dense indices. Out-of-range edges throw DataError; duplicates
  /// are dropped and counted.
  static InteractionGraph from_edges(std::size_t num_users, std::size_t num_items,
                                     std::vector<Edge> edges, std::size_t* duplicates = nullptr);

  std::size_t num_users() const noexcept { return num_users_; }
  std::size_t num_items() const noexcept { return num_items_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::size_t num_nodes() const noexcept { return num_users_ + num_items_; }

  /// Sorted by (user, item).
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  /// Binary adjacency, users x items.
  const CsrMatrix& adjacency() const noexcept { return by_user_; }
  /// Transposed adjacency, items x users.
  const CsrMatrix& adjacency_t() const noexcept { return by_item_; }

  std::span<const Index> items_of(Index user) const { return by_user_.row_cols(user); }
  std::span<const Index> users_of(Index item) const { return by_item_.row_cols(item); }
  std::size_t user_degree(Index user) const { return by_user_.row_ptr[user + 1] - by_user_.row_ptr[user]; }
  std::size_t item_degree(Index item) const { return by_item_.row_ptr[item + 1] - by_item_.row_ptr[item]; }
  std::vector<std::size_t> user_degrees() const;
  std::vector<std::size_t> item_degrees() const;
  bool has_edge(Index user, Index item) const;

  /// External id tokens; index i maps to token i. Filled by loaders and the
  /// synthetic generator, otherwise decimal indices.
  const std::vector<std::string>& user_ids() const noexcept { return user_ids_; }
  const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }
  void set_ids(std::vector<std::string> user_ids, std::vector<std::string> item_ids);

  /// FNV-1a over sizes and edges; keys the attention-matrix cache.
  std::uint64_t content_hash() const;

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::vector<Edge> edges_;
  CsrMatrix by_user_;
  CsrMatrix by_item_;
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
};

struct Triple {
  Index item;
  Index relation;
  Index entity;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct KgNeighbor {
  Index entity;
  Index relation;
};

/// Item-entity knowledge graph. Items share the index space of the
/// companion InteractionGraph.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  static KnowledgeGraph from_triples(std::size_t num_items, std::size_t num_entities,
                                     std::size_t num_relations, std::vector<Triple> triples,
                                     std::size_t* duplicates = nullptr);

  std::size_t num_items() const noexcept { return num_items_; }
  std::size_t num_entities() const noexcept { return num_entities_; }
  std::size_t num_relations() const noexcept { return num_relations_; }
  /// Sorted by (item, relation, entity).
  const std::vector<Triple>& triples() const noexcept { return triples_; }
  std::span<const KgNeighbor> neighbors(Index item) const {
    return {neighbors_.data() + offsets_[item], offsets_[item + 1] - offsets_[item]};
  }
  /// Position of the item's first neighbour in the flattened neighbour list.
  std::size_t neighbor_offset(Index item) const { return offsets_[item]; }
  std::size_t num_triples() const noexcept { return triples_.size(); }

  const std::vector<std::string>& entity_ids() const noexcept { return entity_ids_; }
  const std::vector<std::string>& relation_ids() const noexcept { return relation_ids_; }
  void set_ids(std::vector<std::string> entity_ids, std::vector<std::string> relation_ids);

 private:
  std::size_t num_items_ = 0;
  std::size_t num_entities_ = 0;
  std::size_t num_relations_ = 0;
  std::vector<Triple> triples_;
  std::vector<std::size_t> offsets_{0};
  std::vector<KgNeighbor> neighbors_;
  std::vector<std::string> entity_ids_;
  std::vector<std::string> relation_ids_;
};

InteractionGraph load_interactions(const std::filesystem::path& path, Warnings* warnings = nullptr);
KnowledgeGraph load_kg(const std::filesystem::path& path, const InteractionGraph& graph,
                       Warnings* warnings = nullptr);

void save_interactions(const InteractionGraph& graph, const std::filesystem::path& path);
/// Writes `item<TAB>relation<TAB>entity` using the graph's and KG's id tokens.
void save_kg(const KnowledgeGraph& kg, const InteractionGraph& graph, const std::filesystem::path& path);
/// Writes `index<TAB>token` lines.
void save_id_map(const std::vector<std::string>& ids, const std::filesystem::path& path);

struct TestPair {
  Index user;
  Index item;
  friend auto operator<=>(const TestPair&, const TestPair&) = default;
};

struct DatasetSplit {
  InteractionGraph train;
  std::vector<TestPair> test;  // sorted by (user, item)
  std::uint64_t seed = 0;
};

/// Leave-n-out per user. Users with degree <= holdout_per_user keep all their
/// edges in train and contribute no test pairs.
DatasetSplit split_train_test(const InteractionGraph& graph, std::size_t holdout_per_user,
                              std::uint64_t seed);

struct SyntheticSpec {
  std::size_t num_users = 500;
  std::size_t num_items = 300;
  std::size_t num_entities = 60;
  std::size_t num_clusters = 5;
  std::size_t num_relations = 3;
  double intra_cluster_prob = 0.4;
  double noise_edge_prob = 0.004;
  std::size_t relevant_relations_per_item = 2;
  std::size_t noise_relations_per_item = 2;
  std::uint64_t seed = 7;

  /// Throws ParameterError when an invariant fails.
  void validate() const;
};

enum class TripleLabel { kRelevant, kNoise };

struct LabeledTriple {
  Triple triple;
  TripleLabel label;
};

/// Planted ground truth. Users, items and entities are assigned to clusters
/// in contiguous blocks; an (item, entity) pair is relevant iff both share a
/// cluster.
struct PlantedLabels {
  std::vector<Index> user_cluster;
  std::vector<Index> item_cluster;
  std::vector<Index> entity_cluster;
  std::vector<LabeledTriple> labels;

  bool is_relevant(Index item, Index entity) const { return item_cluster[item] == entity_cluster[entity]; }
};

struct SyntheticDataset {
  InteractionGraph graph;
  KnowledgeGraph kg;
  PlantedLabels planted;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Writes interactions.tsv, kg.tsv and labels.tsv into `dir`.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);

/// Cluster index of element i when n elements are split into c contiguous blocks.
inline Index block_cluster(std::size_t i, std::size_t n, std::size_t c) {
  return static_cast<Index>(i * c / n);
}

}  // namespace kdiffe
