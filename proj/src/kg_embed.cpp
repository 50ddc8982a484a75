#include "kdiffe/kg_embed.hpp"

#include <algorithm>
#include <cmath>

#include "kdiffe/errors.hpp"

namespace kdiffe {

namespace {

double leaky(double x) { return x > 0.0 ? x : kAttentionSlope * x; }
double leaky_grad(double x) { return x > 0.0 ? 1.0 : kAttentionSlope; }

/// Row r = W^T relation_r, so a neighbour's logit is row . [z_e || z_j].
Matrix project_relations(const KgEmbeddingParams& params) {
  const std::size_t d = params.dim();
  Matrix out(params.relation.rows(), 2 * d);
  for (std::size_t r = 0; r < params.relation.rows(); ++r) {
    auto dst = out.row(r);
    auto rel = params.relation.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      auto wrow = params.w.row(i);
      for (std::size_t c = 0; c < 2 * d; ++c) dst[c] += rel[i] * wrow[c];
    }
  }
  return out;
}

double logit(std::span<const double> projected, std::span<const double> entity, std::span<const double> item) {
  const std::size_t d = entity.size();
  return dot(projected.first(d), entity) + dot(projected.subspan(d, d), item);
}

/// Softmax over pre-activations in place of `weights`.
void softmax_of_leaky(std::span<const double> pre, std::span<double> weights) {
  double mx = -INFINITY;
  for (std::size_t k = 0; k < pre.size(); ++k) mx = std::max(mx, leaky(pre[k]));
  double z = 0.0;
  for (std::size_t k = 0; k < pre.size(); ++k) {
    weights[k] = std::exp(leaky(pre[k]) - mx);
    z += weights[k];
  }
  for (auto& w : weights) w /= z;
}

}  // namespace

KgEmbeddingParams KgEmbeddingParams::random(std::size_t num_entities, std::size_t num_relations, std::size_t dim,
                                            double stddev, std::mt19937_64& rng) {
  KgEmbeddingParams p;
  p.entity = Matrix::normal(num_entities, dim, stddev, rng);
  p.relation = Matrix::normal(num_relations, dim, stddev, rng);
  p.w = Matrix::normal(dim, 2 * dim, stddev, rng);
  return p;
}

void KgEmbeddingParams::validate(const KnowledgeGraph& kg) const {
  const std::size_t d = dim();
  if (w.cols() != 2 * d || entity.cols() != d || relation.cols() != d)
    throw ParameterError("kg embedding dimensions are inconsistent");
  if (entity.rows() < kg.num_entities() || relation.rows() < kg.num_relations())
    throw ParameterError("kg embedding tables smaller than the knowledge graph");
  if (!entity.all_finite() || !relation.all_finite() || !w.all_finite())
    throw ParameterError("kg embedding parameters are not finite");
}

std::vector<double> relation_attention(const KnowledgeGraph& kg, Index item, const KgEmbeddingParams& params,
                                       std::span<const double> item_row) {
  auto nb = kg.neighbors(item);
  if (nb.empty()) return {};
  const Matrix projected = project_relations(params);
  std::vector<double> pre(nb.size()), weights(nb.size());
  for (std::size_t k = 0; k < nb.size(); ++k)
    pre[k] = logit(projected.row(nb[k].relation), params.entity.row(nb[k].entity), item_row);
  softmax_of_leaky(pre, weights);
  return weights;
}

Matrix aggregate_kg(const KnowledgeGraph& kg, const KgEmbeddingParams& params, const Matrix& item_table, Exec exec,
                    KgForwardCache* cache) {
  const std::size_t d = item_table.cols();
  if (d != params.dim()) throw ParameterError("item table dimension differs from kg parameters");
  if (item_table.rows() != kg.num_items()) throw ParameterError("item table rows differ from kg item count");

  KgForwardCache local;
  KgForwardCache& c = cache ? *cache : local;
  c.projected = project_relations(params);
  c.pre_activation.assign(kg.num_triples(), 0.0);
  c.weights.assign(kg.num_triples(), 0.0);
  c.norms.assign(kg.num_items(), 0.0);
  c.output = Matrix(kg.num_items(), d);

  auto one_item = [&](std::size_t j) {
    const auto item = static_cast<Index>(j);
    auto nb = kg.neighbors(item);
    const std::size_t off = kg.neighbor_offset(item);
    auto zj = item_table.row(j);
    auto out = c.output.row(j);
    std::copy(zj.begin(), zj.end(), out.begin());
    if (!nb.empty()) {
      std::span<double> pre(c.pre_activation.data() + off, nb.size());
      std::span<double> weights(c.weights.data() + off, nb.size());
      for (std::size_t k = 0; k < nb.size(); ++k)
        pre[k] = logit(c.projected.row(nb[k].relation), params.entity.row(nb[k].entity), zj);
      softmax_of_leaky(pre, weights);
      for (std::size_t k = 0; k < nb.size(); ++k) {
        auto ze = params.entity.row(nb[k].entity);
        for (std::size_t x = 0; x < d; ++x) out[x] += weights[k] * ze[x];
      }
    }
    const double norm = l2_norm(out);
    c.norms[j] = norm;
    if (norm > 0.0)
      for (auto& v : out) v /= norm;
    else
      std::fill(out.begin(), out.end(), 0.0);
  };

  const auto n = static_cast<std::int64_t>(kg.num_items());
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic, 32)
    for (std::int64_t j = 0; j < n; ++j) one_item(static_cast<std::size_t>(j));
  } else {
    for (std::int64_t j = 0; j < n; ++j) one_item(static_cast<std::size_t>(j));
  }
  return c.output;
}

KgGradients KgGradients::zeros_like(const KgEmbeddingParams& params, const Matrix& item_table) {
  return {Matrix(item_table.rows(), item_table.cols()), Matrix(params.entity.rows(), params.entity.cols()),
          Matrix(params.relation.rows(), params.relation.cols()), Matrix(params.w.rows(), params.w.cols())};
}

void aggregate_kg_backward(const KnowledgeGraph& kg, const KgEmbeddingParams& params, const Matrix& item_table,
                           const KgForwardCache& cache, const Matrix& grad_output, KgGradients& grads) {
  const std::size_t d = item_table.cols();
  Matrix grad_projected(cache.projected.rows(), cache.projected.cols());
  std::vector<double> dh(d), da;

  for (std::size_t j = 0; j < kg.num_items(); ++j) {
    const auto item = static_cast<Index>(j);
    const double norm = cache.norms[j];
    if (norm == 0.0) continue;
    auto g = grad_output.row(j);
    auto out = cache.output.row(j);
    const double proj = dot(out, g);
    for (std::size_t x = 0; x < d; ++x) dh[x] = (g[x] - out[x] * proj) / norm;

    auto gzj = grads.item.row(j);
    for (std::size_t x = 0; x < d; ++x) gzj[x] += dh[x];

    auto nb = kg.neighbors(item);
    if (nb.empty()) continue;
    const std::size_t off = kg.neighbor_offset(item);
    auto zj = item_table.row(j);
    da.assign(nb.size(), 0.0);
    double weighted = 0.0;
    for (std::size_t k = 0; k < nb.size(); ++k) {
      const double a = cache.weights[off + k];
      auto ze = params.entity.row(nb[k].entity);
      auto gze = grads.entity.row(nb[k].entity);
      for (std::size_t x = 0; x < d; ++x) gze[x] += a * dh[x];
      da[k] = dot(dh, ze);
      weighted += a * da[k];
    }
    for (std::size_t k = 0; k < nb.size(); ++k) {
      const double a = cache.weights[off + k];
      const double ds = a * (da[k] - weighted) * leaky_grad(cache.pre_activation[off + k]);
      if (ds == 0.0) continue;
      auto ze = params.entity.row(nb[k].entity);
      auto p = cache.projected.row(nb[k].relation);
      auto gp = grad_projected.row(nb[k].relation);
      auto gze = grads.entity.row(nb[k].entity);
      for (std::size_t x = 0; x < d; ++x) {
        gp[x] += ds * ze[x];
        gp[d + x] += ds * zj[x];
        gze[x] += ds * p[x];
        gzj[x] += ds * p[d + x];
      }
    }
  }

  // projected_r = W^T relation_r
  for (std::size_t r = 0; r < grad_projected.rows(); ++r) {
    auto gp = grad_projected.row(r);
    auto rel = params.relation.row(r);
    auto grel = grads.relation.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      auto wrow = params.w.row(i);
      auto gw = grads.w.row(i);
      double acc = 0.0;
      for (std::size_t c = 0; c < 2 * d; ++c) {
        gw[c] += rel[i] * gp[c];
        acc += wrow[c] * gp[c];
      }
      grel[i] += acc;
    }
  }
}

}  // namespace kdiffe
