#include "kdiffe/graph.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "kdiffe/errors.hpp"

namespace kdiffe {

namespace {

std::vector<std::string> decimal_ids(std::size_t n) {
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = std::to_string(i);
  return ids;
}

bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

/// Dense re-indexing: numeric order when every token is an integer,
/// lexicographic otherwise.
std::vector<std::string> ordered_unique(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  std::vector<long long> numeric(tokens.size());
  bool all_int = true;
  for (std::size_t i = 0; i < tokens.size() && all_int; ++i) all_int = parse_int(tokens[i], numeric[i]);
  if (all_int) {
    std::vector<std::size_t> order(tokens.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return numeric[a] < numeric[b]; });
    std::vector<std::string> sorted;
    sorted.reserve(tokens.size());
    for (auto i : order) sorted.push_back(tokens[i]);
    return sorted;
  }
  return tokens;
}

std::unordered_map<std::string, Index> index_of(const std::vector<std::string>& ids) {
  std::unordered_map<std::string, Index> map;
  map.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) map.emplace(ids[i], static_cast<Index>(i));
  return map;
}

/// Reads whitespace-separated records, skipping blanks and `#` comments.
/// Each record must have exactly `arity` tokens.
std::vector<std::vector<std::string>> read_records(const std::filesystem::path& path, std::size_t arity,
                                                   std::vector<std::size_t>& line_numbers) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<std::string>> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string tok; fields >> tok;) tokens.push_back(std::move(tok));
    if (tokens.size() != arity) {
      throw ParseError(path.string() + ": expected " + std::to_string(arity) + " fields, got " +
                           std::to_string(tokens.size()),
                       lineno);
    }
    records.push_back(std::move(tokens));
    line_numbers.push_back(lineno);
  }
  return records;
}

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xFF;
    h *= 0x100000001B3ULL;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// InteractionGraph

InteractionGraph InteractionGraph::from_edges(std::size_t num_users, std::size_t num_items,
                                              std::vector<Edge> edges, std::size_t* duplicates) {
  for (const auto& e : edges) {
    if (e.user >= num_users || e.item >= num_items) {
      throw DataError("edge (" + std::to_string(e.user) + ", " + std::to_string(e.item) +
                      ") out of range");
    }
  }
  std::sort(edges.begin(), edges.end());
  const auto before = edges.size();
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  if (duplicates) *duplicates = before - edges.size();

  InteractionGraph g;
  g.num_users_ = num_users;
  g.num_items_ = num_items;
  g.by_user_.rows = num_users;
  g.by_user_.cols = num_items;
  g.by_user_.row_ptr.assign(num_users + 1, 0);
  g.by_user_.col_idx.reserve(edges.size());
  for (const auto& e : edges) {
    ++g.by_user_.row_ptr[e.user + 1];
    g.by_user_.col_idx.push_back(e.item);
  }
  for (std::size_t u = 0; u < num_users; ++u) g.by_user_.row_ptr[u + 1] += g.by_user_.row_ptr[u];
  g.by_user_.values.assign(edges.size(), 1.0);
  g.by_item_ = g.by_user_.transpose();
  g.edges_ = std::move(edges);
  g.user_ids_ = decimal_ids(num_users);
  g.item_ids_ = decimal_ids(num_items);
  return g;
}

std::vector<std::size_t> InteractionGraph::user_degrees() const {
  std::vector<std::size_t> d(num_users_);
  for (std::size_t u = 0; u < num_users_; ++u) d[u] = user_degree(static_cast<Index>(u));
  return d;
}

std::vector<std::size_t> InteractionGraph::item_degrees() const {
  std::vector<std::size_t> d(num_items_);
  for (std::size_t i = 0; i < num_items_; ++i) d[i] = item_degree(static_cast<Index>(i));
  return d;
}

bool InteractionGraph::has_edge(Index user, Index item) const {
  auto items = items_of(user);
  return std::binary_search(items.begin(), items.end(), item);
}

void InteractionGraph::set_ids(std::vector<std::string> user_ids, std::vector<std::string> item_ids) {
  if (user_ids.size() != num_users_ || item_ids.size() != num_items_)
    throw DataError("id map size does not match graph");
  user_ids_ = std::move(user_ids);
  item_ids_ = std::move(item_ids);
}

std::uint64_t InteractionGraph::content_hash() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  fnv_mix(h, num_users_);
  fnv_mix(h, num_items_);
  for (const auto& e : edges_) fnv_mix(h, (static_cast<std::uint64_t>(e.user) << 32) | e.item);
  return h;
}

// ---------------------------------------------------------------------------
// KnowledgeGraph

KnowledgeGraph KnowledgeGraph::from_triples(std::size_t num_items, std::size_t num_entities,
                                            std::size_t num_relations, std::vector<Triple> triples,
                                            std::size_t* duplicates) {
  for (const auto& t : triples) {
    if (t.item >= num_items) throw DataError("triple item " + std::to_string(t.item) + " out of range");
    if (t.entity >= num_entities || t.relation >= num_relations)
      throw DataError("triple entity/relation out of range");
  }
  std::sort(triples.begin(), triples.end());
  const auto before = triples.size();
  triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
  if (duplicates) *duplicates = before - triples.size();

  KnowledgeGraph kg;
  kg.num_items_ = num_items;
  kg.num_entities_ = num_entities;
  kg.num_relations_ = num_relations;
  kg.offsets_.assign(num_items + 1, 0);
  kg.neighbors_.reserve(triples.size());
  for (const auto& t : triples) {
    ++kg.offsets_[t.item + 1];
    kg.neighbors_.push_back({t.entity, t.relation});
  }
  for (std::size_t i = 0; i < num_items; ++i) kg.offsets_[i + 1] += kg.offsets_[i];
  kg.triples_ = std::move(triples);
  kg.entity_ids_ = decimal_ids(num_entities);
  kg.relation_ids_ = decimal_ids(num_relations);
  return kg;
}

void KnowledgeGraph::set_ids(std::vector<std::string> entity_ids, std::vector<std::string> relation_ids) {
  if (entity_ids.size() != num_entities_ || relation_ids.size() != num_relations_)
    throw DataError("id map size does not match knowledge graph");
  entity_ids_ = std::move(entity_ids);
  relation_ids_ = std::move(relation_ids);
}

// ---------------------------------------------------------------------------
// I/O

InteractionGraph load_interactions(const std::filesystem::path& path, Warnings* warnings) {
  std::vector<std::size_t> lines;
  auto records = read_records(path, 2, lines);
  if (records.empty()) throw DataError(path.string() + ": empty interaction file");

  std::vector<std::string> users, items;
  users.reserve(records.size());
  items.reserve(records.size());
  for (auto& r : records) {
    users.push_back(r[0]);
    items.push_back(r[1]);
  }
  auto user_ids = ordered_unique(std::move(users));
  auto item_ids = ordered_unique(std::move(items));
  auto umap = index_of(user_ids);
  auto imap = index_of(item_ids);

  std::vector<Edge> edges;
  edges.reserve(records.size());
  for (const auto& r : records) edges.push_back({umap.at(r[0]), imap.at(r[1])});
  std::size_t dups = 0;
  auto g = InteractionGraph::from_edges(user_ids.size(), item_ids.size(), std::move(edges), &dups);
  if (dups > 0 && warnings)
    warnings->push_back(path.string() + ": dropped " + std::to_string(dups) + " duplicate edge(s)");
  g.set_ids(std::move(user_ids), std::move(item_ids));
  return g;
}

KnowledgeGraph load_kg(const std::filesystem::path& path, const InteractionGraph& graph, Warnings* warnings) {
  std::vector<std::size_t> lines;
  auto records = read_records(path, 3, lines);
  auto imap = index_of(graph.item_ids());

  std::vector<std::string> relations, entities;
  for (std::size_t k = 0; k < records.size(); ++k) {
    if (!imap.contains(records[k][0]))
      throw DataError(path.string() + ": unknown item '" + records[k][0] + "' at line " +
                      std::to_string(lines[k]));
    relations.push_back(records[k][1]);
    entities.push_back(records[k][2]);
  }
  auto relation_ids = ordered_unique(std::move(relations));
  auto entity_ids = ordered_unique(std::move(entities));
  auto rmap = index_of(relation_ids);
  auto emap = index_of(entity_ids);

  std::vector<Triple> triples;
  triples.reserve(records.size());
  for (const auto& r : records) triples.push_back({imap.at(r[0]), rmap.at(r[1]), emap.at(r[2])});
  std::size_t dups = 0;
  auto kg = KnowledgeGraph::from_triples(graph.num_items(), entity_ids.size(), relation_ids.size(),
                                         std::move(triples), &dups);
  if (dups > 0 && warnings)
    warnings->push_back(path.string() + ": dropped " + std::to_string(dups) + " duplicate triple(s)");
  kg.set_ids(std::move(entity_ids), std::move(relation_ids));
  return kg;
}

void save_interactions(const InteractionGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& e : graph.edges()) out << graph.user_ids()[e.user] << '\t' << graph.item_ids()[e.item] << '\n';
}

void save_kg(const KnowledgeGraph& kg, const InteractionGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : kg.triples()) {
    out << graph.item_ids()[t.item] << '\t' << kg.relation_ids()[t.relation] << '\t'
        << kg.entity_ids()[t.entity] << '\n';
  }
}

void save_id_map(const std::vector<std::string>& ids, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < ids.size(); ++i) out << i << '\t' << ids[i] << '\n';
}

// ---------------------------------------------------------------------------
// Splitting

DatasetSplit split_train_test(const InteractionGraph& graph, std::size_t holdout_per_user, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Edge> train;
  std::vector<TestPair> test;
  train.reserve(graph.num_edges());
  for (std::size_t u = 0; u < graph.num_users(); ++u) {
    const auto user = static_cast<Index>(u);
    auto items = graph.items_of(user);
    std::vector<Index> order(items.begin(), items.end());
    const bool eligible = holdout_per_user > 0 && order.size() > holdout_per_user;
    if (eligible) std::shuffle(order.begin(), order.end(), rng);
    const std::size_t held = eligible ? holdout_per_user : 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (k < held)
        test.push_back({user, order[k]});
      else
        train.push_back({user, order[k]});
    }
  }
  std::sort(test.begin(), test.end());
  DatasetSplit split;
  split.train = InteractionGraph::from_edges(graph.num_users(), graph.num_items(), std::move(train));
  split.train.set_ids(graph.user_ids(), graph.item_ids());
  split.test = std::move(test);
  split.seed = seed;
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(intra_cluster_prob) || !prob_ok(noise_edge_prob))
    throw ParameterError("synthetic probabilities must lie in [0, 1]");
  if (num_users == 0 || num_items == 0 || num_entities == 0 || num_clusters == 0 || num_relations == 0 ||
      relevant_relations_per_item == 0 || noise_relations_per_item == 0)
    throw ParameterError("synthetic counts must be >= 1");
  if (num_clusters > num_users || num_clusters > num_items || num_clusters > num_entities)
    throw ParameterError("num_clusters exceeds users, items or entities");
  const std::size_t smallest_pool = num_entities / num_clusters;
  const std::size_t largest_pool = (num_entities + num_clusters - 1) / num_clusters;
  if (relevant_relations_per_item > smallest_pool)
    throw ParameterError("relevant_relations_per_item exceeds the per-cluster entity pool");
  if (noise_relations_per_item > num_entities - largest_pool)
    throw ParameterError("noise_relations_per_item exceeds the out-of-cluster entity count");
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t nu = spec.num_users, ni = spec.num_items, ne = spec.num_entities, nc = spec.num_clusters;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  PlantedLabels planted;
  planted.user_cluster.resize(nu);
  planted.item_cluster.resize(ni);
  planted.entity_cluster.resize(ne);
  for (std::size_t u = 0; u < nu; ++u) planted.user_cluster[u] = block_cluster(u, nu, nc);
  for (std::size_t i = 0; i < ni; ++i) planted.item_cluster[i] = block_cluster(i, ni, nc);
  for (std::size_t e = 0; e < ne; ++e) planted.entity_cluster[e] = block_cluster(e, ne, nc);

  std::vector<std::vector<Index>> users_in(nc), items_in(nc), entities_in(nc);
  for (std::size_t u = 0; u < nu; ++u) users_in[planted.user_cluster[u]].push_back(static_cast<Index>(u));
  for (std::size_t i = 0; i < ni; ++i) items_in[planted.item_cluster[i]].push_back(static_cast<Index>(i));
  for (std::size_t e = 0; e < ne; ++e) entities_in[planted.entity_cluster[e]].push_back(static_cast<Index>(e));

  std::vector<Edge> edges;
  std::vector<std::size_t> udeg(nu, 0), ideg(ni, 0);
  for (std::size_t u = 0; u < nu; ++u) {
    for (std::size_t i = 0; i < ni; ++i) {
      const double p = planted.user_cluster[u] == planted.item_cluster[i] ? spec.intra_cluster_prob
                                                                          : spec.noise_edge_prob;
      if (unit(rng) < p) {
        edges.push_back({static_cast<Index>(u), static_cast<Index>(i)});
        ++udeg[u];
        ++ideg[i];
      }
    }
  }
  // Every node gets at least one in-cluster edge so the files reload with
  // the same dense indices.
  for (std::size_t u = 0; u < nu; ++u) {
    if (udeg[u] > 0) continue;
    const auto& pool = items_in[planted.user_cluster[u]];
    const Index item = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    edges.push_back({static_cast<Index>(u), item});
    ++udeg[u];
    ++ideg[item];
  }
  for (std::size_t i = 0; i < ni; ++i) {
    if (ideg[i] > 0) continue;
    const auto& pool = users_in[planted.item_cluster[i]];
    const Index user = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    edges.push_back({user, static_cast<Index>(i)});
    ++ideg[i];
  }

  std::uniform_int_distribution<Index> relation_dist(0, static_cast<Index>(spec.num_relations - 1));
  std::vector<Triple> triples;
  for (std::size_t i = 0; i < ni; ++i) {
    const auto item = static_cast<Index>(i);
    const auto cluster = planted.item_cluster[i];
    std::vector<Index> pool = entities_in[cluster];
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t k = 0; k < spec.relevant_relations_per_item; ++k) {
      Triple t{item, relation_dist(rng), pool[k]};
      triples.push_back(t);
      planted.labels.push_back({t, TripleLabel::kRelevant});
    }
    std::vector<Index> outside;
    for (std::size_t e = 0; e < ne; ++e)
      if (planted.entity_cluster[e] != cluster) outside.push_back(static_cast<Index>(e));
    std::shuffle(outside.begin(), outside.end(), rng);
    for (std::size_t k = 0; k < spec.noise_relations_per_item; ++k) {
      Triple t{item, relation_dist(rng), outside[k]};
      triples.push_back(t);
      planted.labels.push_back({t, TripleLabel::kNoise});
    }
  }

  SyntheticDataset out;
  out.graph = InteractionGraph::from_edges(nu, ni, std::move(edges));
  out.kg = KnowledgeGraph::from_triples(ni, ne, spec.num_relations, std::move(triples));
  out.planted = std::move(planted);
  return out;
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_interactions(data.graph, dir / "interactions.tsv");
  save_kg(data.kg, data.graph, dir / "kg.tsv");
  std::ofstream out(dir / "labels.tsv");
  if (!out) throw DataError("cannot write labels file in " + dir.string());
  for (const auto& l : data.planted.labels) {
    out << data.graph.item_ids()[l.triple.item] << '\t' << data.kg.entity_ids()[l.triple.entity] << '\t'
        << (l.label == TripleLabel::kRelevant ? "relevant" : "noise") << '\n';
  }
}

}  // namespace kdiffe
