#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "kdiffe/graph.hpp"
#include "kdiffe/kernels.hpp"
#include "kdiffe/matrix.hpp"
#include "kdiffe/optim.hpp"

namespace kdiffe {

/// Variance schedule. Steps are 1-based: beta_at(1) .. beta_at(T).
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;  // alpha_bar[t-1] = prod_{s<=t} (1 - beta_s)

  std::size_t steps() const noexcept { return beta.size(); }
  double beta_at(std::size_t t) const { return beta[t - 1]; }
  /// alpha_bar_at(0) == 1.
  double alpha_bar_at(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }
  /// beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t); 0 when alpha_bar_t == 1.
  double posterior_variance(std::size_t t) const;

  /// Accepts betas in [0, 1) so that degenerate zero-noise schedules can be
  /// built for testing.
  static NoiseSchedule from_betas(std::vector<double> betas);

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

/// Linear betas from beta_start to beta_end. Requires 0 < start <= end < 1.
NoiseSchedule build_schedule(std::size_t steps, double beta_start, double beta_end);

/// Dense 0/1 item x entity matrix; row j is the relation row of item j.
Matrix relation_rows(const KnowledgeGraph& kg);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
std::vector<double> forward_diffuse(std::span<const double> x0, std::size_t t, const NoiseSchedule& schedule,
                                    std::mt19937_64& rng);

/// Mean embedding of the users that interacted with `item`; zero if none.
std::vector<double> guidance_embedding(Index item, const InteractionGraph& graph, const Matrix& user_table);
Matrix guidance_matrix(const InteractionGraph& graph, const Matrix& user_table);

/// One-hidden-layer tanh MLP predicting x0 from [x_t || step_embedding(t) || guidance].
struct DenoiserParams {
  Matrix w1;              // (entities + step_dim + guidance_dim) x hidden
  Matrix b1;              // 1 x hidden
  Matrix w2;              // hidden x entities
  Matrix b2;              // 1 x entities
  Matrix step_embedding;  // T x step_dim

  std::size_t num_entities() const noexcept { return w2.cols(); }
  std::size_t hidden() const noexcept { return w1.cols(); }
  std::size_t step_dim() const noexcept { return step_embedding.cols(); }
  std::size_t guidance_dim() const noexcept { return w1.rows() - num_entities() - step_dim(); }
  std::size_t steps() const noexcept { return step_embedding.rows(); }

  static DenoiserParams random(std::size_t num_entities, std::size_t guidance_dim, std::size_t hidden,
                               std::size_t step_dim, std::size_t steps, double stddev, std::mt19937_64& rng);
  static DenoiserParams zeros_like(const DenoiserParams& other);
  void validate() const;
  double squared_norm() const;

  friend bool operator==(const DenoiserParams&, const DenoiserParams&) = default;
};

std::vector<double> predict_x0(std::span<const double> x_t, std::size_t t, std::span<const double> guidance,
                               const DenoiserParams& params);

/// Mean of q(x_{t-1} | x_t, x0 = x0_hat). Returns x0_hat when alpha_bar_t == 1.
std::vector<double> posterior_mean(std::span<const double> x_t, std::span<const double> x0_hat, std::size_t t,
                                   const NoiseSchedule& schedule);

/// Samples x_{t-1} ~ N(posterior_mean, posterior_variance(t) I); at t = 1, or
/// with add_noise false, returns the mean.
std::vector<double> reverse_step_from_prediction(std::span<const double> x_t, std::span<const double> x0_hat,
                                                 std::size_t t, const NoiseSchedule& schedule, std::mt19937_64& rng,
                                                 bool add_noise = true);

std::vector<double> reverse_step(std::span<const double> x_t, std::size_t t, std::span<const double> guidance,
                                 const DenoiserParams& params, const NoiseSchedule& schedule, std::mt19937_64& rng);

/// Mean over the batch of (1/entities) * ||x0_hat - x0||^2 for pre-noised
/// inputs. When `grad` is set, gradients are accumulated into it.
double denoiser_loss(const DenoiserParams& params, std::span<const Index> items, std::span<const std::size_t> steps,
                     const Matrix& noisy, const Matrix& rows, const Matrix& guidance, DenoiserParams* grad);

struct DenoiserTrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  double weight_decay = 0.0;
};

/// Minimises the x0-prediction MSE over shuffled item minibatches with t
/// uniform in 1..T. Returns the mean loss per epoch. Throws NumericalError if
/// the loss turns non-finite.
std::vector<double> train_denoiser(const Matrix& rows, const Matrix& guidance, const NoiseSchedule& schedule,
                                   DenoiserParams& params, Adam& opt, const DenoiserTrainConfig& cfg,
                                   std::mt19937_64& rng);

/// Predicts x0 for one item given x_t and t. Lets tests inject oracle predictors.
using X0Predictor = std::function<std::vector<double>(Index item, std::span<const double> x_t, std::size_t t)>;

X0Predictor make_predictor(const DenoiserParams& params, const Matrix& guidance);

enum class ChainStart {
  kPureNoise,       // x_T ~ N(0, I)
  kNoisedOriginal,  // x_T ~ q(x_T | x0)
};

struct ReverseChainOptions {
  ChainStart start = ChainStart::kPureNoise;
  bool add_noise = false;  // sample each step instead of following the mean
  std::uint64_t seed = 0;
  Exec exec = Exec::kParallel;
};

/// Runs the reverse chain from T down to 1 for every item and returns the
/// final rows as scores (items x entities). Per-item RNG streams come from
/// (options.seed, item).
Matrix denoise_rows(const Matrix& rows, const X0Predictor& predictor, const NoiseSchedule& schedule,
                    const ReverseChainOptions& options);

/// Keeps the q highest-scoring entities per item (ties to the lower index).
/// Kept pairs copy their relation from `original` when present, otherwise
/// take the most frequent relation type. q is clamped to the entity count.
KnowledgeGraph select_top_q(const KnowledgeGraph& original, const Matrix& scores, std::size_t q,
                            Warnings* warnings = nullptr);

KnowledgeGraph generate_denoised_kg(const KnowledgeGraph& kg, const X0Predictor& predictor,
                                    const NoiseSchedule& schedule, std::size_t q, const ReverseChainOptions& options,
                                    Warnings* warnings = nullptr);

}  // namespace kdiffe
