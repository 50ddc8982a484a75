#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kdiffe/diffusion.hpp"
#include "kdiffe/rwr.hpp"

namespace kdiffe {

enum class DenoiserMode {
  kInterleaved,  // denoiser_epochs per recommender epoch
  kStaged,       // denoiser_epochs once, before recommender training
};

/// Every knob of a training run. Defaults follow the reference settings
/// (theta1 = 1e-2, theta2 = 1e-5, R = 12, M = 50, xi = 0.7, T = 10,
/// tau = 0.5, q = 1, N = 20).
struct TrainConfig {
  // recommender
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 1024;
  std::size_t negatives = 1;
  std::uint64_t seed = 42;
  std::size_t dim = 32;
  std::size_t layers = 2;
  double init_std = 0.1;
  double tau = 0.5;
  double theta1 = 1e-2;
  double theta2 = 1e-5;
  std::size_t cl_batch = 1024;

  // attention-aware operator
  double xi = 0.7;
  std::uint32_t walk_paths = 12;
  std::uint32_t walk_length = 50;
  double restart_prob = 0.15;
  DegreeMode degree_mode = DegreeMode::kAdjacency;

  // guided diffusion
  std::size_t q = 1;
  std::size_t diffusion_steps = 10;
  double beta_start = 1e-4;
  double beta_end = 0.5;
  std::size_t refresh_period = 1;
  std::size_t denoiser_hidden = 64;
  std::size_t step_dim = 8;
  double denoiser_lr = 1e-3;
  std::size_t denoiser_batch = 32;
  double denoiser_weight_decay = 1e-4;
  std::size_t denoiser_epochs = 1;
  DenoiserMode denoiser_mode = DenoiserMode::kInterleaved;
  ChainStart chain_start = ChainStart::kPureNoise;
  bool chain_noise = false;
  bool disable_guidance = false;

  // protocol
  std::size_t holdout = 1;
  std::size_t top_n = 20;
  std::size_t eval_every = 1;

  void validate() const;
  WalkConfig walk() const;
  bool contrastive_enabled() const { return theta1 > 0.0; }

  /// Sets a field from its key-value spelling. Throws ParameterError for an
  /// unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// `key = value` lines, doubles at round-trip precision.
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text, const TrainConfig& base);
  static TrainConfig from_text(const std::string& text);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base = {});
void save_config(const TrainConfig& cfg, const std::filesystem::path& path);

}  // namespace kdiffe
