#include "kdiffe/ablation.hpp"

#include <cstdio>

#include <json.hpp>

#include "kdiffe/errors.hpp"

namespace kdiffe {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "KDiffE";
    case Variant::kNoAttention: return "KDiffE_1";
    case Variant::kNoGuidance: return "KDiffE_2";
    case Variant::kNoContrastive: return "KDiffE_3";
  }
  return "?";
}

TrainConfig apply_variant(TrainConfig cfg, Variant v) {
  switch (v) {
    case Variant::kFull: break;
    case Variant::kNoAttention: cfg.xi = 0.0; break;
    case Variant::kNoGuidance: cfg.disable_guidance = true; break;
    case Variant::kNoContrastive: cfg.theta1 = 0.0; break;
  }
  return cfg;
}

namespace {

void finish(AblationRow& row) {
  row.recall = row.ndcg = 0.0;
  for (const auto& r : row.runs) {
    row.recall += r.recall;
    row.ndcg += r.ndcg;
  }
  if (!row.runs.empty()) {
    row.recall /= static_cast<double>(row.runs.size());
    row.ndcg /= static_cast<double>(row.runs.size());
  }
}

}  // namespace

AblationReport run_ablation(const InteractionGraph& graph, const KnowledgeGraph& kg, const TrainConfig& base,
                            std::size_t num_seeds, Exec exec,
                            const std::function<void(const std::string&)>& progress) {
  if (num_seeds == 0) throw ParameterError("need at least one seed");
  base.validate();
  AblationReport report;
  report.n = base.top_n;
  const Variant order[] = {Variant::kFull, Variant::kNoAttention, Variant::kNoGuidance, Variant::kNoContrastive};
  for (Variant v : order) report.variants.push_back({variant_name(v), {}, 0.0, 0.0});
  report.baselines = {{"Popularity", {}, 0.0, 0.0}, {"Random", {}, 0.0, 0.0}};

  for (std::size_t s = 0; s < num_seeds; ++s) {
    const std::uint64_t seed = base.seed + s;
    const DatasetSplit split = split_train_test(graph, base.holdout, seed);
    const EvalOptions opts{base.top_n, true, exec};
    const auto pop = evaluate(baseline_popularity(split.train), split.train, split.test, opts);
    report.baselines[0].runs.push_back({seed, pop.recall, pop.ndcg});
    report.baselines[1].runs.push_back({seed, random_recall_expectation(split.train, split.test, base.top_n), 0.0});

    // The walk only depends on the split and walk settings, so it is shared.
    TrainConfig cfg = base;
    cfg.seed = seed;
    const AttentionMatrix attention = build_attention_matrix(split.train, cfg.walk(), exec);
    for (std::size_t k = 0; k < 4; ++k) {
      const TrainConfig vcfg = apply_variant(cfg, order[k]);
      Trainer trainer(split, kg, vcfg, exec, &attention);
      trainer.train();
      const auto r = trainer.evaluate_now();
      report.variants[k].runs.push_back({seed, r.recall, r.ndcg});
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "seed %llu %-9s recall %.4f ndcg %.4f",
                      static_cast<unsigned long long>(seed), report.variants[k].name.c_str(), r.recall, r.ndcg);
        progress(buf);
      }
    }
  }
  for (auto& row : report.variants) finish(row);
  for (auto& row : report.baselines) finish(row);
  return report;
}

std::string AblationReport::table() const {
  std::vector<TableRow> rows;
  for (const auto& r : variants) rows.push_back({r.name, r.recall, r.ndcg});
  return format_table(rows, n);
}

std::string AblationReport::to_json() const {
  auto rows = [](const std::vector<AblationRow>& in) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : in) {
      nlohmann::json j;
      j["model"] = r.name;
      j["recall"] = r.recall;
      j["ndcg"] = r.ndcg;
      for (const auto& s : r.runs) j["runs"].push_back({{"seed", s.seed}, {"recall", s.recall}, {"ndcg", s.ndcg}});
      out.push_back(j);
    }
    return out;
  };
  nlohmann::json j;
  j["n"] = n;
  j["variants"] = rows(variants);
  j["baselines"] = rows(baselines);
  return j.dump(2);
}

}  // namespace kdiffe
