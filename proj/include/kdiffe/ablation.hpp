#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kdiffe/model.hpp"

namespace kdiffe {

enum class Variant {
  kFull,
  kNoAttention,     // KDiffE_1: xi = 0
  kNoGuidance,      // KDiffE_2: zero guidance vector
  kNoContrastive,   // KDiffE_3: theta1 = 0
};

std::string variant_name(Variant v);
TrainConfig apply_variant(TrainConfig cfg, Variant v);

struct SeedResult {
  std::uint64_t seed = 0;
  double recall = 0.0;
  double ndcg = 0.0;
};

struct AblationRow {
  std::string name;
  std::vector<SeedResult> runs;
  double recall = 0.0;  // mean over seeds
  double ndcg = 0.0;
};

struct AblationReport {
  std::size_t n = 20;
  std::vector<AblationRow> variants;   // full, KDiffE_1, KDiffE_2, KDiffE_3
  std::vector<AblationRow> baselines;  // popularity, random expectation (ndcg unset)

  std::string table() const;
  std::string to_json() const;
};

/// Trains every variant on seeds base.seed, base.seed + 1, ... Each seed also
/// re-draws the train/test split. `progress` receives one line per run.
AblationReport run_ablation(const InteractionGraph& graph, const KnowledgeGraph& kg, const TrainConfig& base,
                            std::size_t num_seeds, Exec exec = Exec::kParallel,
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace kdiffe
