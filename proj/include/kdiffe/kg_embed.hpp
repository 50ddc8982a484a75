#pragma once

#include <random>
#include <span>
#include <vector>

#include "kdiffe/graph.hpp"
#include "kdiffe/kernels.hpp"
#include "kdiffe/matrix.hpp"

namespace kdiffe {

/// Slope of the LeakyReLU applied to attention logits.
inline constexpr double kAttentionSlope = 0.2;

/// Entity and relation tables plus the d x 2d attention projection W. A
/// relation's row doubles as the attention vector for every edge of that type.
struct KgEmbeddingParams {
  Matrix entity;    // num_entities x d
  Matrix relation;  // num_relations x d
  Matrix w;         // d x 2d

  std::size_t dim() const noexcept { return w.rows(); }
  static KgEmbeddingParams random(std::size_t num_entities, std::size_t num_relations, std::size_t dim,
                                  double stddev, std::mt19937_64& rng);
  /// Throws ParameterError on shape mismatch with `kg` or non-finite values.
  void validate(const KnowledgeGraph& kg) const;
};

/// Softmax attention weights over the item's KG neighbours, in neighbour
/// order. Empty when the item has no neighbours.
std::vector<double> relation_attention(const KnowledgeGraph& kg, Index item, const KgEmbeddingParams& params,
                                       std::span<const double> item_row);

/// Intermediates kept by the forward pass for the backward pass. Per-neighbour
/// arrays follow KnowledgeGraph::neighbor_offset order.
struct KgForwardCache {
  Matrix projected;  // num_relations x 2d, row r = W^T relation_r
  std::vector<double> pre_activation;
  std::vector<double> weights;
  std::vector<double> norms;  // L2 norm of each item's pre-normalisation vector
  Matrix output;
};

/// Knowledge-enhanced item table: row j = Norm(z_j + sum_k a_k z_{e_k}).
/// Rows whose pre-normalisation vector is zero stay zero.
Matrix aggregate_kg(const KnowledgeGraph& kg, const KgEmbeddingParams& params, const Matrix& item_table,
                    Exec exec = Exec::kParallel, KgForwardCache* cache = nullptr);

struct KgGradients {
  Matrix item;
  Matrix entity;
  Matrix relation;
  Matrix w;

  static KgGradients zeros_like(const KgEmbeddingParams& params, const Matrix& item_table);
};

/// Accumulates d(loss)/d(inputs) into `grads` given d(loss)/d(output).
void aggregate_kg_backward(const KnowledgeGraph& kg, const KgEmbeddingParams& params, const Matrix& item_table,
                           const KgForwardCache& cache, const Matrix& grad_output, KgGradients& grads);

}  // namespace kdiffe
