#include "kdiffe/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdiffe/errors.hpp"

namespace kdiffe {

// ---------------------------------------------------------------------------
// Schedule

double NoiseSchedule::posterior_variance(std::size_t t) const {
  const double denom = 1.0 - alpha_bar_at(t);
  if (denom <= 0.0) return 0.0;
  return beta_at(t) * (1.0 - alpha_bar_at(t - 1)) / denom;
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ParameterError("schedule needs at least one step");
  NoiseSchedule s;
  s.alpha_bar.resize(betas.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] >= 0.0 && betas[i] < 1.0)) throw ParameterError("beta must lie in [0, 1)");
    prod *= 1.0 - betas[i];
    s.alpha_bar[i] = prod;
  }
  s.beta = std::move(betas);
  return s;
}

NoiseSchedule build_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ParameterError("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ParameterError("schedule requires 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + frac * (beta_end - beta_start);
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

Matrix relation_rows(const KnowledgeGraph& kg) {
  Matrix rows(kg.num_items(), kg.num_entities());
  for (const auto& t : kg.triples()) rows(t.item, t.entity) = 1.0;
  return rows;
}

std::vector<double> forward_diffuse(std::span<const double> x0, std::size_t t, const NoiseSchedule& schedule,
                                    std::mt19937_64& rng) {
  if (t < 1 || t > schedule.steps()) throw ParameterError("diffusion step out of range");
  const double abar = schedule.alpha_bar_at(t);
  const double signal = std::sqrt(abar);
  const double noise = std::sqrt(1.0 - abar);
  std::normal_distribution<double> eps(0.0, 1.0);
  std::vector<double> xt(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) xt[i] = signal * x0[i] + noise * eps(rng);
  return xt;
}

// ---------------------------------------------------------------------------
// Guidance

std::vector<double> guidance_embedding(Index item, const InteractionGraph& graph, const Matrix& user_table) {
  std::vector<double> g(user_table.cols(), 0.0);
  auto users = graph.users_of(item);
  if (users.empty()) return g;
  for (auto u : users) {
    auto row = user_table.row(u);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] += row[c];
  }
  for (auto& v : g) v /= static_cast<double>(users.size());
  return g;
}

Matrix guidance_matrix(const InteractionGraph& graph, const Matrix& user_table) {
  Matrix out(graph.num_items(), user_table.cols());
  for (std::size_t j = 0; j < graph.num_items(); ++j) {
    auto g = guidance_embedding(static_cast<Index>(j), graph, user_table);
    std::copy(g.begin(), g.end(), out.row(j).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Denoiser

DenoiserParams DenoiserParams::random(std::size_t num_entities, std::size_t guidance_dim, std::size_t hidden,
                                      std::size_t step_dim, std::size_t steps, double stddev, std::mt19937_64& rng) {
  DenoiserParams p;
  const std::size_t in = num_entities + step_dim + guidance_dim;
  // Xavier-style scale keeps tanh out of saturation at init.
  p.w1 = Matrix::normal(in, hidden, std::sqrt(2.0 / static_cast<double>(in + hidden)), rng);
  p.b1 = Matrix(1, hidden);
  p.w2 = Matrix::normal(hidden, num_entities, std::sqrt(2.0 / static_cast<double>(hidden + num_entities)), rng);
  p.b2 = Matrix(1, num_entities);
  p.step_embedding = Matrix::normal(steps, step_dim, stddev, rng);
  return p;
}

DenoiserParams DenoiserParams::zeros_like(const DenoiserParams& o) {
  return {Matrix(o.w1.rows(), o.w1.cols()), Matrix(o.b1.rows(), o.b1.cols()), Matrix(o.w2.rows(), o.w2.cols()),
          Matrix(o.b2.rows(), o.b2.cols()), Matrix(o.step_embedding.rows(), o.step_embedding.cols())};
}

void DenoiserParams::validate() const {
  if (b1.rows() != 1 || b1.cols() != w1.cols() || w2.rows() != w1.cols() || b2.rows() != 1 ||
      b2.cols() != w2.cols() || w1.rows() < w2.cols() + step_embedding.cols())
    throw ParameterError("denoiser parameter shapes are inconsistent");
  if (!w1.all_finite() || !b1.all_finite() || !w2.all_finite() || !b2.all_finite() || !step_embedding.all_finite())
    throw ParameterError("denoiser parameters are not finite");
}

double DenoiserParams::squared_norm() const {
  return w1.squared_norm() + b1.squared_norm() + w2.squared_norm() + b2.squared_norm() +
         step_embedding.squared_norm();
}

namespace {

void assemble_input(std::span<const double> x_t, std::size_t t, std::span<const double> guidance,
                    const DenoiserParams& p, std::span<double> in) {
  if (x_t.size() != p.num_entities() || guidance.size() != p.guidance_dim())
    throw ParameterError("denoiser input width mismatch");
  if (t < 1 || t > p.steps()) throw ParameterError("denoiser step out of range");
  auto step = p.step_embedding.row(t - 1);
  std::copy(x_t.begin(), x_t.end(), in.begin());
  std::copy(step.begin(), step.end(), in.begin() + static_cast<std::ptrdiff_t>(x_t.size()));
  std::copy(guidance.begin(), guidance.end(), in.begin() + static_cast<std::ptrdiff_t>(x_t.size() + step.size()));
}

/// hidden = tanh(in W1 + b1); out = hidden W2 + b2.
void mlp_forward(const DenoiserParams& p, std::span<const double> in, std::span<double> hidden,
                 std::span<double> out) {
  const std::size_t h = p.hidden();
  std::copy(p.b1.values().begin(), p.b1.values().end(), hidden.begin());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = in[i];
    if (x == 0.0) continue;
    auto wrow = p.w1.row(i);
    for (std::size_t k = 0; k < h; ++k) hidden[k] += x * wrow[k];
  }
  for (auto& v : hidden) v = std::tanh(v);
  std::copy(p.b2.values().begin(), p.b2.values().end(), out.begin());
  for (std::size_t k = 0; k < h; ++k) {
    const double a = hidden[k];
    auto wrow = p.w2.row(k);
    for (std::size_t e = 0; e < out.size(); ++e) out[e] += a * wrow[e];
  }
}

}  // namespace

std::vector<double> predict_x0(std::span<const double> x_t, std::size_t t, std::span<const double> guidance,
                               const DenoiserParams& params) {
  std::vector<double> in(params.w1.rows()), hidden(params.hidden()), out(params.num_entities());
  assemble_input(x_t, t, guidance, params, in);
  mlp_forward(params, in, hidden, out);
  return out;
}

std::vector<double> posterior_mean(std::span<const double> x_t, std::span<const double> x0_hat, std::size_t t,
                                   const NoiseSchedule& schedule) {
  const double abar = schedule.alpha_bar_at(t);
  const double abar_prev = schedule.alpha_bar_at(t - 1);
  const double beta = schedule.beta_at(t);
  const double denom = 1.0 - abar;
  std::vector<double> mean(x0_hat.begin(), x0_hat.end());
  if (denom <= 0.0) return mean;
  const double c0 = std::sqrt(abar_prev) * beta / denom;
  const double ct = std::sqrt(1.0 - beta) * (1.0 - abar_prev) / denom;
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = c0 * x0_hat[i] + ct * x_t[i];
  return mean;
}

std::vector<double> reverse_step_from_prediction(std::span<const double> x_t, std::span<const double> x0_hat,
                                                 std::size_t t, const NoiseSchedule& schedule, std::mt19937_64& rng,
                                                 bool add_noise) {
  if (t < 1 || t > schedule.steps()) throw ParameterError("reverse step out of range");
  auto mean = posterior_mean(x_t, x0_hat, t, schedule);
  if (t == 1 || !add_noise) return mean;
  const double sd = std::sqrt(schedule.posterior_variance(t));
  std::normal_distribution<double> eps(0.0, 1.0);
  for (auto& v : mean) v += sd * eps(rng);
  return mean;
}

std::vector<double> reverse_step(std::span<const double> x_t, std::size_t t, std::span<const double> guidance,
                                 const DenoiserParams& params, const NoiseSchedule& schedule, std::mt19937_64& rng) {
  auto x0_hat = predict_x0(x_t, t, guidance, params);
  return reverse_step_from_prediction(x_t, x0_hat, t, schedule, rng, true);
}

double denoiser_loss(const DenoiserParams& p, std::span<const Index> items, std::span<const std::size_t> steps,
                     const Matrix& noisy, const Matrix& rows, const Matrix& guidance, DenoiserParams* grad) {
  const std::size_t ne = p.num_entities(), h = p.hidden(), sd = p.step_dim();
  const double scale = 1.0 / (static_cast<double>(items.size()) * static_cast<double>(ne));
  std::vector<double> in(p.w1.rows()), hidden(h), out(ne), dout(ne), dhid(h);
  double loss = 0.0;
  for (std::size_t b = 0; b < items.size(); ++b) {
    const Index j = items[b];
    assemble_input(noisy.row(b), steps[b], guidance.row(j), p, in);
    mlp_forward(p, in, hidden, out);
    auto x0 = rows.row(j);
    for (std::size_t e = 0; e < ne; ++e) {
      const double diff = out[e] - x0[e];
      loss += diff * diff * scale;
      dout[e] = 2.0 * diff * scale;
    }
    if (!grad) continue;
    for (std::size_t e = 0; e < ne; ++e) grad->b2(0, e) += dout[e];
    for (std::size_t k = 0; k < h; ++k) {
      auto gw = grad->w2.row(k);
      auto wrow = p.w2.row(k);
      double acc = 0.0;
      for (std::size_t e = 0; e < ne; ++e) {
        gw[e] += hidden[k] * dout[e];
        acc += wrow[e] * dout[e];
      }
      dhid[k] = acc * (1.0 - hidden[k] * hidden[k]);
      grad->b1(0, k) += dhid[k];
    }
    auto gstep = grad->step_embedding.row(steps[b] - 1);
    for (std::size_t i = 0; i < in.size(); ++i) {
      auto gw = grad->w1.row(i);
      auto wrow = p.w1.row(i);
      double acc = 0.0;
      for (std::size_t k = 0; k < h; ++k) {
        gw[k] += in[i] * dhid[k];
        acc += wrow[k] * dhid[k];
      }
      if (i >= ne && i < ne + sd) gstep[i - ne] += acc;
    }
  }
  return loss;
}

std::vector<double> train_denoiser(const Matrix& rows, const Matrix& guidance, const NoiseSchedule& schedule,
                                   DenoiserParams& params, Adam& opt, const DenoiserTrainConfig& cfg,
                                   std::mt19937_64& rng) {
  if (rows.rows() == 0 || rows.cols() == 0) throw DataError("denoiser training needs a non-empty knowledge graph");
  if (params.steps() != schedule.steps()) throw ParameterError("denoiser step table differs from the schedule");
  if (cfg.batch_size == 0) throw ParameterError("denoiser batch size must be >= 1");
  params.validate();

  std::vector<Index> order(rows.rows());
  std::iota(order.begin(), order.end(), Index{0});
  std::uniform_int_distribution<std::size_t> step_dist(1, schedule.steps());
  std::vector<double> trace;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::span<const Index> batch(order.data() + start, n);
      std::vector<std::size_t> steps(n);
      Matrix noisy(n, rows.cols());
      for (std::size_t b = 0; b < n; ++b) {
        steps[b] = step_dist(rng);
        auto xt = forward_diffuse(rows.row(batch[b]), steps[b], schedule, rng);
        std::copy(xt.begin(), xt.end(), noisy.row(b).begin());
      }
      auto grad = DenoiserParams::zeros_like(params);
      const double loss = denoiser_loss(params, batch, steps, noisy, rows, guidance, &grad);
      if (!std::isfinite(loss))
        throw NumericalError("denoiser loss diverged at epoch " + std::to_string(epoch));
      total += loss * static_cast<double>(n);
      if (cfg.weight_decay > 0.0) {
        grad.w1.add_scaled(params.w1, 2.0 * cfg.weight_decay);
        grad.w2.add_scaled(params.w2, 2.0 * cfg.weight_decay);
      }
      opt.begin_step();
      opt.update(0, params.w1, grad.w1);
      opt.update(1, params.b1, grad.b1);
      opt.update(2, params.w2, grad.w2);
      opt.update(3, params.b2, grad.b2);
      opt.update(4, params.step_embedding, grad.step_embedding);
    }
    trace.push_back(total / static_cast<double>(order.size()));
  }
  return trace;
}

X0Predictor make_predictor(const DenoiserParams& params, const Matrix& guidance) {
  return [&params, &guidance](Index item, std::span<const double> x_t, std::size_t t) {
    return predict_x0(x_t, t, guidance.row(item), params);
  };
}

// ---------------------------------------------------------------------------
// Contrastive-view reconstruction

Matrix denoise_rows(const Matrix& rows, const X0Predictor& predictor, const NoiseSchedule& schedule,
                    const ReverseChainOptions& options) {
  const std::size_t T = schedule.steps();
  Matrix scores(rows.rows(), rows.cols());
  auto one_item = [&](std::size_t j) {
    std::mt19937_64 rng(derive_seed(options.seed, j));
    std::vector<double> x(rows.cols());
    if (options.start == ChainStart::kNoisedOriginal) {
      x = forward_diffuse(rows.row(j), T, schedule, rng);
    } else {
      std::normal_distribution<double> eps(0.0, 1.0);
      for (auto& v : x) v = eps(rng);
    }
    for (std::size_t t = T; t >= 1; --t) {
      auto x0_hat = predictor(static_cast<Index>(j), x, t);
      x = reverse_step_from_prediction(x, x0_hat, t, schedule, rng, options.add_noise);
    }
    std::copy(x.begin(), x.end(), scores.row(j).begin());
  };
  const auto n = static_cast<std::int64_t>(rows.rows());
  if (options.exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t j = 0; j < n; ++j) one_item(static_cast<std::size_t>(j));
  } else {
    for (std::int64_t j = 0; j < n; ++j) one_item(static_cast<std::size_t>(j));
  }
  return scores;
}

KnowledgeGraph select_top_q(const KnowledgeGraph& original, const Matrix& scores, std::size_t q, Warnings* warnings) {
  if (q < 1) throw ParameterError("q must be >= 1");
  if (original.num_relations() == 0) throw ParameterError("cannot assign relation types without any relation");
  const std::size_t ne = original.num_entities();
  if (q > ne) {
    if (warnings) warnings->push_back("q=" + std::to_string(q) + " exceeds entity count, clamped to " + std::to_string(ne));
    q = ne;
  }
  std::vector<std::size_t> freq(original.num_relations(), 0);
  for (const auto& t : original.triples()) ++freq[t.relation];
  const auto fallback = static_cast<Index>(std::max_element(freq.begin(), freq.end()) - freq.begin());

  std::vector<Triple> kept;
  kept.reserve(scores.rows() * q);
  std::vector<Index> order(ne);
  for (std::size_t j = 0; j < scores.rows(); ++j) {
    auto row = scores.row(j);
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(q), order.end(),
                      [&](Index a, Index b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    auto nb = original.neighbors(static_cast<Index>(j));
    for (std::size_t k = 0; k < q; ++k) {
      const Index e = order[k];
      Index rel = fallback;
      bool found = false;
      for (const auto& n : nb) {
        if (n.entity == e && (!found || n.relation < rel)) {
          rel = n.relation;
          found = true;
        }
      }
      kept.push_back({static_cast<Index>(j), rel, e});
    }
  }
  auto out = KnowledgeGraph::from_triples(original.num_items(), ne, original.num_relations(), std::move(kept));
  out.set_ids(original.entity_ids(), original.relation_ids());
  return out;
}

KnowledgeGraph generate_denoised_kg(const KnowledgeGraph& kg, const X0Predictor& predictor,
                                    const NoiseSchedule& schedule, std::size_t q, const ReverseChainOptions& options,
                                    Warnings* warnings) {
  const Matrix rows = relation_rows(kg);
  const Matrix scores = denoise_rows(rows, predictor, schedule, options);
  return select_top_q(kg, scores, q, warnings);
}

}  // namespace kdiffe
