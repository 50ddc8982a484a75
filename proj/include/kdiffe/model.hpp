#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kdiffe/config.hpp"
#include "kdiffe/diffusion.hpp"
#include "kdiffe/eval.hpp"
#include "kdiffe/graph.hpp"
#include "kdiffe/kg_embed.hpp"
#include "kdiffe/optim.hpp"
#include "kdiffe/rwr.hpp"

namespace kdiffe {

/// Trainable recommender tables.
struct EmbeddingTables {
  Matrix user;  // num_users x d
  Matrix item;  // num_items x d
  KgEmbeddingParams kg;

  static EmbeddingTables random(std::size_t num_users, std::size_t num_items, std::size_t num_entities,
                                std::size_t num_relations, std::size_t dim, double stddev, std::mt19937_64& rng);
  /// ||Theta||^2 over every table.
  double squared_norm() const;
  bool all_finite() const;

  friend bool operator==(const EmbeddingTables& a, const EmbeddingTables& b) {
    return a.user == b.user && a.item == b.item && a.kg.entity == b.kg.entity && a.kg.relation == b.kg.relation &&
           a.kg.w == b.kg.w;
  }
};

struct ViewEmbeddings {
  Matrix user;
  Matrix item;
};

/// Layer-mean LightGCN-style propagation: layer l+1 users = L * items_l,
/// items = L^T * users_l; output is the mean of layers 0..layers.
ViewEmbeddings propagate(const PropagationOperator& op, const Matrix& user0, const Matrix& item0, std::size_t layers,
                         Exec exec = Exec::kParallel);

double predict(std::span<const double> user, std::span<const double> item);

/// Mean over pairs of -log sigmoid(pos - neg).
double bpr_loss(std::span<const double> pos_scores, std::span<const double> neg_scores);

/// Mean InfoNCE over rows: row b of `main` is the anchor, row b of `aug` the
/// positive and every row of `aug` the denominator. Cosine with zero-norm
/// rows is 0. Gradients are written when the pointers are set.
double infonce_loss(const Matrix& main, const Matrix& aug, double tau, Matrix* grad_main = nullptr,
                    Matrix* grad_aug = nullptr, Exec exec = Exec::kParallel);

struct LossBreakdown {
  double bpr = 0.0;
  double cl_user = 0.0;
  double cl_item = 0.0;
  double reg = 0.0;  // theta2 * ||Theta||^2
  double total = 0.0;
  double theta1 = 0.0;
  double theta2 = 0.0;
  double tau = 0.0;
};

LossBreakdown joint_loss(double bpr, double cl_user, double cl_item, double theta1, double theta2,
                         double param_squared_norm, double tau = 0.0);

struct BprTriple {
  Index user;
  Index pos;
  Index neg;
};

struct TrainingBatch {
  std::vector<BprTriple> triples;
  std::vector<Index> cl_users;
  std::vector<Index> cl_items;
};

struct LossHyper {
  std::size_t layers = 2;
  double tau = 0.5;
  double theta1 = 1e-2;
  double theta2 = 1e-5;
};

struct ModelGradients {
  Matrix user;
  KgGradients kg;  // kg.item holds the item-table gradient

  static ModelGradients zeros_like(const EmbeddingTables& tables);
  /// Name of the first table holding a non-finite entry, if any.
  std::optional<std::string> first_non_finite() const;
};

/// Forward pass of the joint objective on one batch: main view from `main_kg`,
/// contrastive view from `aug_kg` (skipped when null or theta1 == 0), both
/// through the same operator. Writes gradients of the total when `grads` is set.
LossBreakdown loss_and_gradients(const EmbeddingTables& tables, const PropagationOperator& op,
                                 const KnowledgeGraph& main_kg, const KnowledgeGraph* aug_kg,
                                 const TrainingBatch& batch, const LossHyper& hyper, ModelGradients* grads,
                                 Exec exec = Exec::kParallel);

/// Final main-view embeddings for scoring.
ViewEmbeddings model_embeddings(const EmbeddingTables& tables, const PropagationOperator& op,
                                const KnowledgeGraph& kg, std::size_t layers, Exec exec = Exec::kParallel);

/// Everything persisted in a checkpoint.
struct Model {
  TrainConfig config;
  EmbeddingTables tables;
  DenoiserParams denoiser;
  NoiseSchedule schedule;
  std::vector<std::string> rng_state;
  std::uint64_t epochs_done = 0;

  friend bool operator==(const Model&, const Model&) = default;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  LossBreakdown loss;  // mean over batches
  double denoiser_loss = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;
  bool evaluated = false;

  std::string to_json() const;
};

/// Runs the full pipeline on a split: attention operator, interleaved denoiser
/// training and contrastive-view refresh, joint BPR + InfoNCE optimisation.
class Trainer {
 public:
  /// `attention` may be supplied (e.g. from a cache); otherwise it is sampled.
  Trainer(const DatasetSplit& split, const KnowledgeGraph& kg, TrainConfig config, Exec exec = Exec::kParallel,
          const AttentionMatrix* attention = nullptr);

  EpochMetrics run_epoch();
  std::vector<EpochMetrics> train();

  const Model& model() const noexcept { return model_; }
  /// Snapshot with current RNG state for checkpointing.
  Model snapshot() const;
  const PropagationOperator& propagation() const noexcept { return op_; }
  const AttentionMatrix& attention() const noexcept { return attention_; }
  const KnowledgeGraph& contrastive_kg() const noexcept { return aug_kg_; }
  const std::vector<EpochMetrics>& trace() const noexcept { return trace_; }
  ViewEmbeddings embeddings() const;
  RankingResult evaluate_now() const;
  /// Guidance rows the denoiser sees (zero when guidance is disabled).
  Matrix current_guidance() const;

 private:
  double train_denoiser_epochs(std::size_t epochs);
  void refresh_contrastive_view();
  std::vector<BprTriple> sample_triples();

  const DatasetSplit& split_;
  const KnowledgeGraph& kg_;
  Exec exec_;
  Model model_;
  AttentionMatrix attention_;
  PropagationOperator op_;
  Matrix kg_rows_;
  KnowledgeGraph aug_kg_;
  Adam opt_;
  Adam denoiser_opt_;
  std::mt19937_64 init_rng_;
  std::mt19937_64 sample_rng_;
  std::mt19937_64 cl_rng_;
  std::mt19937_64 diffusion_rng_;
  std::vector<EpochMetrics> trace_;
  double last_denoiser_loss_ = 0.0;
};

/// Convenience wrapper: train to completion and return the final model and trace.
struct TrainResult {
  Model model;
  std::vector<EpochMetrics> trace;
  RankingResult final_eval;
};
TrainResult train_model(const DatasetSplit& split, const KnowledgeGraph& kg, const TrainConfig& config,
                        Exec exec = Exec::kParallel);

/// Rebuilds the propagation operator for a trained model's config.
PropagationOperator operator_for(const InteractionGraph& train, const TrainConfig& config, Exec exec,
                                 const std::filesystem::path& cache = {});

}  // namespace kdiffe
