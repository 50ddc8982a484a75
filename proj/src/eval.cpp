#include "kdiffe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "kdiffe/errors.hpp"

namespace kdiffe {

double recall_at_n(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t n) {
  if (n < 1) throw ParameterError("N must be >= 1");
  if (relevant.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < std::min(n, ranked.size()); ++k)
    hits += std::binary_search(relevant.begin(), relevant.end(), ranked[k]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_n(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t n) {
  if (n < 1) throw ParameterError("N must be >= 1");
  if (relevant.empty()) return 0.0;
  double dcg = 0.0;
  for (std::size_t k = 0; k < std::min(n, ranked.size()); ++k)
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[k])) dcg += 1.0 / std::log2(static_cast<double>(k) + 2.0);
  double ideal = 0.0;
  for (std::size_t k = 0; k < std::min(n, relevant.size()); ++k) ideal += 1.0 / std::log2(static_cast<double>(k) + 2.0);
  return dcg / ideal;
}

std::vector<Index> rank_top_n(std::span<const double> scores, std::span<const Index> excluded, std::size_t n) {
  std::vector<Index> candidates;
  candidates.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto item = static_cast<Index>(i);
    if (!std::binary_search(excluded.begin(), excluded.end(), item)) candidates.push_back(item);
  }
  const std::size_t keep = std::min(n, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                    [&](Index a, Index b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  candidates.resize(keep);
  return candidates;
}

RankingResult evaluate(const Scorer& scorer, const InteractionGraph& train, std::span<const TestPair> test,
                       const EvalOptions& options) {
  if (options.n < 1) throw ParameterError("N must be >= 1");
  RankingResult result;
  result.n = options.n;

  // Group test pairs by user; `test` is sorted by (user, item) but tolerate
  // unsorted input.
  std::vector<TestPair> pairs(test.begin(), test.end());
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t k = 0; k < pairs.size();) {
    std::size_t end = k;
    while (end < pairs.size() && pairs[end].user == pairs[k].user) ++end;
    groups.emplace_back(k, end);
    k = end;
  }
  result.users.resize(groups.size());

  auto one_user = [&](std::size_t g) {
    const auto [begin, end] = groups[g];
    const Index user = pairs[begin].user;
    std::vector<Index> relevant;
    for (std::size_t k = begin; k < end; ++k) relevant.push_back(pairs[k].item);
    relevant.erase(std::unique(relevant.begin(), relevant.end()), relevant.end());
    std::vector<double> scores(train.num_items(), 0.0);
    scorer(user, scores);
    std::span<const Index> excluded;
    if (options.mask_train && user < train.num_users()) excluded = train.items_of(user);
    auto& out = result.users[g];
    out.user = user;
    out.ranked = rank_top_n(scores, excluded, options.n);
    out.recall = recall_at_n(out.ranked, relevant, options.n);
    out.ndcg = ndcg_at_n(out.ranked, relevant, options.n);
  };

  const auto n = static_cast<std::int64_t>(groups.size());
  if (options.exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t g = 0; g < n; ++g) one_user(static_cast<std::size_t>(g));
  } else {
    for (std::int64_t g = 0; g < n; ++g) one_user(static_cast<std::size_t>(g));
  }

  for (const auto& u : result.users) {
    result.recall += u.recall;
    result.ndcg += u.ndcg;
  }
  if (!result.users.empty()) {
    result.recall /= static_cast<double>(result.users.size());
    result.ndcg /= static_cast<double>(result.users.size());
  }
  return result;
}

Scorer embedding_scorer(const Matrix& users, const Matrix& items) {
  return [&users, &items](Index user, std::span<double> scores) {
    auto u = users.row(user);
    for (std::size_t i = 0; i < items.rows(); ++i) scores[i] = dot(u, items.row(i));
  };
}

Scorer baseline_popularity(const InteractionGraph& train) {
  if (train.num_edges() == 0) throw DataError("popularity baseline needs a non-empty training graph");
  auto degrees = std::make_shared<std::vector<double>>(train.num_items());
  for (std::size_t i = 0; i < train.num_items(); ++i)
    (*degrees)[i] = static_cast<double>(train.item_degree(static_cast<Index>(i)));
  return [degrees](Index, std::span<double> scores) { std::copy(degrees->begin(), degrees->end(), scores.begin()); };
}

Scorer random_scorer(std::size_t num_items, std::uint64_t seed) {
  return [num_items, seed](Index user, std::span<double> scores) {
    std::mt19937_64 rng(derive_seed(seed, user));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < num_items; ++i) scores[i] = unit(rng);
  };
}

double random_recall_expectation(const InteractionGraph& train, std::span<const TestPair> test, std::size_t n) {
  std::vector<TestPair> pairs(test.begin(), test.end());
  std::sort(pairs.begin(), pairs.end());
  double total = 0.0;
  std::size_t users = 0;
  for (std::size_t k = 0; k < pairs.size();) {
    std::size_t end = k;
    while (end < pairs.size() && pairs[end].user == pairs[k].user) ++end;
    const auto candidates = static_cast<double>(train.num_items() - train.user_degree(pairs[k].user));
    total += std::min(1.0, static_cast<double>(n) / candidates);
    ++users;
    k = end;
  }
  return users == 0 ? 0.0 : total / static_cast<double>(users);
}

std::string ranking_to_json(const RankingResult& result, const std::string& label) {
  nlohmann::json j;
  j["model"] = label;
  j["n"] = result.n;
  j["users"] = result.users.size();
  j["recall@" + std::to_string(result.n)] = result.recall;
  j["ndcg@" + std::to_string(result.n)] = result.ndcg;
  return j.dump();
}

std::string format_table(const std::vector<TableRow>& rows, std::size_t n) {
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  const std::string rc = "Recall@" + std::to_string(n);
  const std::string nc = "NDCG@" + std::to_string(n);
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %10s  %10s\n", static_cast<int>(width), "Model", rc.c_str(), nc.c_str());
  out << buf;
  out << std::string(width + 24, '-') << '\n';
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %10.4f  %10.4f\n", static_cast<int>(width), r.name.c_str(), r.recall,
                  r.ndcg);
    out << buf;
  }
  return out.str();
}

}  // namespace kdiffe
