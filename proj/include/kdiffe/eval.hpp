#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kdiffe/graph.hpp"
#include "kdiffe/kernels.hpp"
#include "kdiffe/matrix.hpp"

namespace kdiffe {

/// Fills `scores` (one slot per item) for `user`. Must be safe to call
/// concurrently for different users.
using Scorer = std::function<void(Index user, std::span<double> scores)>;

/// |top-N ∩ relevant| / |relevant|. `relevant` sorted; empty gives 0.
double recall_at_n(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t n);
/// Binary-gain NDCG@N normalised by the ideal DCG of min(|relevant|, N) hits.
double ndcg_at_n(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t n);

/// Top-n items by descending score, ties to the lower index, skipping
/// `excluded` (sorted).
std::vector<Index> rank_top_n(std::span<const double> scores, std::span<const Index> excluded, std::size_t n);

struct UserRanking {
  Index user = 0;
  std::vector<Index> ranked;  // top-N, training positives removed
  double recall = 0.0;
  double ndcg = 0.0;
};

struct RankingResult {
  std::size_t n = 20;
  std::vector<UserRanking> users;
  double recall = 0.0;
  double ndcg = 0.0;
};

struct EvalOptions {
  std::size_t n = 20;
  bool mask_train = true;
  Exec exec = Exec::kParallel;
};

/// Full-ranking evaluation of every user with at least one test pair.
RankingResult evaluate(const Scorer& scorer, const InteractionGraph& train, std::span<const TestPair> test,
                       const EvalOptions& options);

Scorer embedding_scorer(const Matrix& users, const Matrix& items);
/// Same ranking for every user: items by training degree.
Scorer baseline_popularity(const InteractionGraph& train);
/// Uniform random scores; each user draws from its own stream of `seed`.
Scorer random_scorer(std::size_t num_items, std::uint64_t seed);

/// Expected Recall@N of a uniformly random ranking under train masking,
/// averaged over evaluated users.
double random_recall_expectation(const InteractionGraph& train, std::span<const TestPair> test, std::size_t n);

std::string ranking_to_json(const RankingResult& result, const std::string& label);

struct TableRow {
  std::string name;
  double recall = 0.0;
  double ndcg = 0.0;
};
/// Plain-text comparison table with Recall@N / NDCG@N columns.
std::string format_table(const std::vector<TableRow>& rows, std::size_t n);

}  // namespace kdiffe
