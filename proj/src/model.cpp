#include "kdiffe/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "kdiffe/errors.hpp"

namespace kdiffe {

// ---------------------------------------------------------------------------
// Tables

EmbeddingTables EmbeddingTables::random(std::size_t num_users, std::size_t num_items, std::size_t num_entities,
                                        std::size_t num_relations, std::size_t dim, double stddev,
                                        std::mt19937_64& rng) {
  EmbeddingTables t;
  t.user = Matrix::normal(num_users, dim, stddev, rng);
  t.item = Matrix::normal(num_items, dim, stddev, rng);
  t.kg = KgEmbeddingParams::random(num_entities, num_relations, dim, stddev, rng);
  return t;
}

double EmbeddingTables::squared_norm() const {
  return user.squared_norm() + item.squared_norm() + kg.entity.squared_norm() + kg.relation.squared_norm() +
         kg.w.squared_norm();
}

bool EmbeddingTables::all_finite() const {
  return user.all_finite() && item.all_finite() && kg.entity.all_finite() && kg.relation.all_finite() &&
         kg.w.all_finite();
}

ModelGradients ModelGradients::zeros_like(const EmbeddingTables& tables) {
  return {Matrix(tables.user.rows(), tables.user.cols()), KgGradients::zeros_like(tables.kg, tables.item)};
}

std::optional<std::string> ModelGradients::first_non_finite() const {
  if (!user.all_finite()) return "user_table";
  if (!kg.item.all_finite()) return "item_table";
  if (!kg.entity.all_finite()) return "entity_table";
  if (!kg.relation.all_finite()) return "relation_table";
  if (!kg.w.all_finite()) return "attention_w";
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Propagation and scoring

ViewEmbeddings propagate(const PropagationOperator& op, const Matrix& user0, const Matrix& item0, std::size_t layers,
                         Exec exec) {
  if (user0.rows() != op.by_user.rows || item0.rows() != op.by_user.cols || user0.cols() != item0.cols())
    throw ParameterError("propagation input shapes do not match the operator");
  ViewEmbeddings out{user0, item0};
  Matrix cur_u = user0, cur_i = item0, next_u, next_i;
  for (std::size_t l = 0; l < layers; ++l) {
    kernels::spmm(op.by_user, cur_i, next_u, exec);
    kernels::spmm(op.by_item, cur_u, next_i, exec);
    out.user.add_scaled(next_u, 1.0);
    out.item.add_scaled(next_i, 1.0);
    std::swap(cur_u, next_u);
    std::swap(cur_i, next_i);
  }
  const double inv = 1.0 / static_cast<double>(layers + 1);
  for (auto& v : out.user.values()) v *= inv;
  for (auto& v : out.item.values()) v *= inv;
  return out;
}

double predict(std::span<const double> user, std::span<const double> item) {
  if (user.size() != item.size()) throw ParameterError("embedding dimensions differ");
  return dot(user, item);
}

namespace {

/// log(1 + exp(-m)) without overflow.
double softplus_neg(double m) { return m > 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m)); }
double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

double bpr_loss(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  if (pos_scores.empty() || pos_scores.size() != neg_scores.size())
    throw ParameterError("bpr_loss needs matching non-empty score lists");
  double total = 0.0;
  for (std::size_t k = 0; k < pos_scores.size(); ++k) total += softplus_neg(pos_scores[k] - neg_scores[k]);
  return total / static_cast<double>(pos_scores.size());
}

double infonce_loss(const Matrix& main, const Matrix& aug, double tau, Matrix* grad_main, Matrix* grad_aug,
                    Exec exec) {
  if (!(tau > 0.0)) throw ParameterError("tau must be > 0");
  if (main.rows() != aug.rows() || main.cols() != aug.cols()) throw ParameterError("view shapes differ");
  const std::size_t n = main.rows(), d = main.cols();
  if (n == 0) return 0.0;

  Matrix cos;
  kernels::cosine(main, aug, cos, exec);
  std::vector<double> mn(n), an(n);
  for (std::size_t i = 0; i < n; ++i) {
    mn[i] = l2_norm(main.row(i));
    an[i] = l2_norm(aug.row(i));
  }

  // dcos(b, k) = d loss / d cos(b, k), filled row by row.
  Matrix dcos(n, n);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    auto row = cos.row(b);
    double mx = -INFINITY;
    for (double c : row) mx = std::max(mx, c / tau);
    double z = 0.0;
    for (double c : row) z += std::exp(c / tau - mx);
    loss += -row[b] / tau + mx + std::log(z);
    auto g = dcos.row(b);
    for (std::size_t k = 0; k < n; ++k) g[k] = inv_n * (std::exp(row[k] / tau - mx) / z - (k == b ? 1.0 : 0.0)) / tau;
  }
  loss *= inv_n;

  if (grad_main) *grad_main = Matrix(n, d);
  if (grad_aug) *grad_aug = Matrix(n, d);
  if (!grad_main && !grad_aug) return loss;

  // d cos(x, y) / dx = y / (|x||y|) - cos x / |x|^2
  for (std::size_t b = 0; b < n; ++b) {
    if (mn[b] == 0.0) continue;
    auto x = main.row(b);
    for (std::size_t k = 0; k < n; ++k) {
      if (an[k] == 0.0) continue;
      const double w = dcos(b, k);
      if (w == 0.0) continue;
      auto y = aug.row(k);
      const double c = cos(b, k);
      const double inv = 1.0 / (mn[b] * an[k]);
      if (grad_main) {
        auto gx = grad_main->row(b);
        const double cx = c / (mn[b] * mn[b]);
        for (std::size_t t = 0; t < d; ++t) gx[t] += w * (y[t] * inv - cx * x[t]);
      }
      if (grad_aug) {
        auto gy = grad_aug->row(k);
        const double cy = c / (an[k] * an[k]);
        for (std::size_t t = 0; t < d; ++t) gy[t] += w * (x[t] * inv - cy * y[t]);
      }
    }
  }
  return loss;
}

LossBreakdown joint_loss(double bpr, double cl_user, double cl_item, double theta1, double theta2,
                         double param_squared_norm, double tau) {
  LossBreakdown l;
  l.bpr = bpr;
  l.cl_user = cl_user;
  l.cl_item = cl_item;
  l.reg = theta2 * param_squared_norm;
  l.theta1 = theta1;
  l.theta2 = theta2;
  l.tau = tau;
  l.total = bpr + theta1 * (cl_user + cl_item) + l.reg;
  return l;
}

namespace {

Matrix gather(const Matrix& m, std::span<const Index> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) std::copy(m.row(rows[k]).begin(), m.row(rows[k]).end(), out.row(k).begin());
  return out;
}

void scatter_add(Matrix& dst, std::span<const Index> rows, const Matrix& src, double alpha) {
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto d = dst.row(rows[k]);
    auto s = src.row(k);
    for (std::size_t c = 0; c < d.size(); ++c) d[c] += alpha * s[c];
  }
}

}  // namespace

LossBreakdown loss_and_gradients(const EmbeddingTables& tables, const PropagationOperator& op,
                                 const KnowledgeGraph& main_kg, const KnowledgeGraph* aug_kg,
                                 const TrainingBatch& batch, const LossHyper& hyper, ModelGradients* grads,
                                 Exec exec) {
  if (batch.triples.empty()) throw ParameterError("training batch has no triples");
  KgForwardCache main_cache;
  const Matrix main_items0 = aggregate_kg(main_kg, tables.kg, tables.item, exec, &main_cache);
  const ViewEmbeddings main = propagate(op, tables.user, main_items0, hyper.layers, exec);

  const std::size_t d = tables.user.cols();
  Matrix g_user(main.user.rows(), d), g_item(main.item.rows(), d);
  const double inv = 1.0 / static_cast<double>(batch.triples.size());
  double bpr = 0.0;
  for (const auto& t : batch.triples) {
    auto fu = main.user.row(t.user);
    auto fp = main.item.row(t.pos);
    auto fn = main.item.row(t.neg);
    const double margin = dot(fu, fp) - dot(fu, fn);
    bpr += softplus_neg(margin) * inv;
    if (!grads) continue;
    const double dm = -sigmoid(-margin) * inv;
    auto gu = g_user.row(t.user);
    auto gp = g_item.row(t.pos);
    auto gn = g_item.row(t.neg);
    for (std::size_t c = 0; c < d; ++c) {
      gu[c] += dm * (fp[c] - fn[c]);
      gp[c] += dm * fu[c];
      gn[c] -= dm * fu[c];
    }
  }

  double cl_user = 0.0, cl_item = 0.0;
  const bool contrast = hyper.theta1 > 0.0 && aug_kg != nullptr;
  KgForwardCache aug_cache;
  Matrix ga_user, ga_item;
  if (contrast) {
    const Matrix aug_items0 = aggregate_kg(*aug_kg, tables.kg, tables.item, exec, &aug_cache);
    const ViewEmbeddings aug = propagate(op, tables.user, aug_items0, hyper.layers, exec);
    Matrix gm, ga;
    Matrix* gm_ptr = grads ? &gm : nullptr;
    Matrix* ga_ptr = grads ? &ga : nullptr;
    ga_user = Matrix(aug.user.rows(), d);
    ga_item = Matrix(aug.item.rows(), d);
    if (!batch.cl_users.empty()) {
      cl_user = infonce_loss(gather(main.user, batch.cl_users), gather(aug.user, batch.cl_users), hyper.tau, gm_ptr,
                             ga_ptr, exec);
      if (grads) {
        scatter_add(g_user, batch.cl_users, gm, hyper.theta1);
        scatter_add(ga_user, batch.cl_users, ga, hyper.theta1);
      }
    }
    if (!batch.cl_items.empty()) {
      cl_item = infonce_loss(gather(main.item, batch.cl_items), gather(aug.item, batch.cl_items), hyper.tau, gm_ptr,
                             ga_ptr, exec);
      if (grads) {
        scatter_add(g_item, batch.cl_items, gm, hyper.theta1);
        scatter_add(ga_item, batch.cl_items, ga, hyper.theta1);
      }
    }
  }

  const auto loss = joint_loss(bpr, cl_user, cl_item, hyper.theta1, hyper.theta2, tables.squared_norm(), hyper.tau);
  if (!grads) return loss;

  // Propagation is symmetric in the stacked (user, item) space, so its adjoint
  // is the same layer-mean operator applied to the output gradients.
  const ViewEmbeddings back = propagate(op, g_user, g_item, hyper.layers, exec);
  grads->user.add_scaled(back.user, 1.0);
  aggregate_kg_backward(main_kg, tables.kg, tables.item, main_cache, back.item, grads->kg);
  if (contrast) {
    const ViewEmbeddings back_aug = propagate(op, ga_user, ga_item, hyper.layers, exec);
    grads->user.add_scaled(back_aug.user, 1.0);
    aggregate_kg_backward(*aug_kg, tables.kg, tables.item, aug_cache, back_aug.item, grads->kg);
  }
  if (hyper.theta2 > 0.0) {
    const double s = 2.0 * hyper.theta2;
    grads->user.add_scaled(tables.user, s);
    grads->kg.item.add_scaled(tables.item, s);
    grads->kg.entity.add_scaled(tables.kg.entity, s);
    grads->kg.relation.add_scaled(tables.kg.relation, s);
    grads->kg.w.add_scaled(tables.kg.w, s);
  }
  return loss;
}

ViewEmbeddings model_embeddings(const EmbeddingTables& tables, const PropagationOperator& op,
                                const KnowledgeGraph& kg, std::size_t layers, Exec exec) {
  const Matrix items0 = aggregate_kg(kg, tables.kg, tables.item, exec);
  return propagate(op, tables.user, items0, layers, exec);
}

std::string EpochMetrics::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["loss_total"] = loss.total;
  j["loss_bpr"] = loss.bpr;
  j["loss_cl_user"] = loss.cl_user;
  j["loss_cl_item"] = loss.cl_item;
  j["loss_reg"] = loss.reg;
  j["theta1"] = loss.theta1;
  j["theta2"] = loss.theta2;
  j["tau"] = loss.tau;
  j["denoiser_loss"] = denoiser_loss;
  if (evaluated) {
    j["recall"] = recall;
    j["ndcg"] = ndcg;
  }
  return j.dump();
}

// ---------------------------------------------------------------------------
// Training

PropagationOperator operator_for(const InteractionGraph& train, const TrainConfig& config, Exec exec,
                                 const std::filesystem::path& cache) {
  const WalkConfig walk = config.walk();
  AttentionMatrix s{train.adjacency()};
  if (config.xi > 0.0 || config.degree_mode == DegreeMode::kBlended) {
    std::optional<AttentionMatrix> cached;
    if (!cache.empty()) cached = load_attention_cache(cache, train, walk);
    if (cached) {
      s = std::move(*cached);
    } else {
      s = build_attention_matrix(train, walk, exec);
      if (!cache.empty()) save_attention_cache(cache, train, walk, s);
    }
  }
  return build_propagation_operator(train, s, config.xi, config.degree_mode);
}

Trainer::Trainer(const DatasetSplit& split, const KnowledgeGraph& kg, TrainConfig config, Exec exec,
                 const AttentionMatrix* attention)
    : split_(split), kg_(kg), exec_(exec) {
  config.validate();
  if (split.train.num_edges() == 0) throw DataError("training graph has no edges");
  if (kg.num_items() != split.train.num_items()) throw DataError("knowledge graph item count differs from the graph");
  model_.config = config;
  init_rng_.seed(derive_seed(config.seed, 1));
  sample_rng_.seed(derive_seed(config.seed, 2));
  cl_rng_.seed(derive_seed(config.seed, 3));
  diffusion_rng_.seed(derive_seed(config.seed, 4));

  if (attention) {
    attention_ = *attention;
  } else if (config.xi > 0.0 || config.degree_mode == DegreeMode::kBlended) {
    attention_ = build_attention_matrix(split.train, config.walk(), exec);
  } else {
    attention_ = AttentionMatrix{split.train.adjacency()};
  }
  op_ = build_propagation_operator(split.train, attention_, config.xi, config.degree_mode);

  model_.tables = EmbeddingTables::random(split.train.num_users(), split.train.num_items(), kg.num_entities(),
                                          kg.num_relations(), config.dim, config.init_std, init_rng_);
  model_.schedule = build_schedule(config.diffusion_steps, config.beta_start, config.beta_end);
  model_.denoiser = DenoiserParams::random(kg.num_entities(), config.dim, config.denoiser_hidden, config.step_dim,
                                           config.diffusion_steps, config.init_std, init_rng_);
  kg_rows_ = relation_rows(kg);
  aug_kg_ = kg;
  opt_ = Adam(AdamConfig{config.lr}, 5);
  denoiser_opt_ = Adam(AdamConfig{config.denoiser_lr}, 5);

  if (config.contrastive_enabled() && kg.num_triples() > 0 && config.denoiser_mode == DenoiserMode::kStaged)
    last_denoiser_loss_ = train_denoiser_epochs(config.denoiser_epochs);
}

Matrix Trainer::current_guidance() const {
  if (model_.config.disable_guidance) return Matrix(split_.train.num_items(), model_.config.dim);
  return guidance_matrix(split_.train, model_.tables.user);
}

double Trainer::train_denoiser_epochs(std::size_t epochs) {
  if (epochs == 0) return last_denoiser_loss_;
  const auto& c = model_.config;
  const Matrix guidance = current_guidance();
  DenoiserTrainConfig dcfg{c.denoiser_lr, epochs, c.denoiser_batch, c.denoiser_weight_decay};
  auto losses = train_denoiser(kg_rows_, guidance, model_.schedule, model_.denoiser, denoiser_opt_, dcfg,
                               diffusion_rng_);
  return losses.back();
}

void Trainer::refresh_contrastive_view() {
  const auto& c = model_.config;
  const Matrix guidance = current_guidance();
  ReverseChainOptions opts;
  opts.start = c.chain_start;
  opts.add_noise = c.chain_noise;
  opts.seed = diffusion_rng_();
  opts.exec = exec_;
  aug_kg_ = generate_denoised_kg(kg_, make_predictor(model_.denoiser, guidance), model_.schedule, c.q, opts);
}

std::vector<BprTriple> Trainer::sample_triples() {
  const auto& train = split_.train;
  const auto& edges = train.edges();
  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), sample_rng_);
  std::uniform_int_distribution<Index> item_dist(0, static_cast<Index>(train.num_items() - 1));
  std::vector<BprTriple> triples;
  triples.reserve(edges.size() * model_.config.negatives);
  for (auto k : order) {
    const auto& e = edges[k];
    if (train.user_degree(e.user) >= train.num_items()) continue;
    for (std::size_t n = 0; n < model_.config.negatives; ++n) {
      Index neg = item_dist(sample_rng_);
      while (train.has_edge(e.user, neg)) neg = item_dist(sample_rng_);
      triples.push_back({e.user, e.item, neg});
    }
  }
  return triples;
}

namespace {

std::vector<Index> choose_nodes(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<Index> all(n);
  std::iota(all.begin(), all.end(), Index{0});
  if (k >= n) return all;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

EpochMetrics Trainer::run_epoch() {
  const auto& c = model_.config;
  const std::size_t epoch = model_.epochs_done;
  const bool contrast = c.contrastive_enabled() && kg_.num_triples() > 0;
  if (contrast && c.denoiser_mode == DenoiserMode::kInterleaved)
    last_denoiser_loss_ = train_denoiser_epochs(c.denoiser_epochs);
  if (contrast && epoch % c.refresh_period == 0) refresh_contrastive_view();

  const auto triples = sample_triples();
  if (triples.empty()) throw DataError("no BPR triples could be sampled");
  const LossHyper hyper{c.layers, c.tau, contrast ? c.theta1 : 0.0, c.theta2};

  EpochMetrics m;
  m.epoch = epoch;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < triples.size(); start += c.batch_size) {
    TrainingBatch batch;
    const auto end = std::min(triples.size(), start + c.batch_size);
    batch.triples.assign(triples.begin() + static_cast<std::ptrdiff_t>(start),
                         triples.begin() + static_cast<std::ptrdiff_t>(end));
    if (contrast) {
      batch.cl_users = choose_nodes(split_.train.num_users(), c.cl_batch, cl_rng_);
      batch.cl_items = choose_nodes(split_.train.num_items(), c.cl_batch, cl_rng_);
    }
    auto grads = ModelGradients::zeros_like(model_.tables);
    const auto loss =
        loss_and_gradients(model_.tables, op_, kg_, contrast ? &aug_kg_ : nullptr, batch, hyper, &grads, exec_);
    if (!std::isfinite(loss.total))
      throw NumericalError("training loss diverged at epoch " + std::to_string(epoch));
    if (auto bad = grads.first_non_finite()) throw NumericalError("non-finite gradient in " + *bad);

    opt_.begin_step();
    opt_.update(0, model_.tables.user, grads.user);
    opt_.update(1, model_.tables.item, grads.kg.item);
    opt_.update(2, model_.tables.kg.entity, grads.kg.entity);
    opt_.update(3, model_.tables.kg.relation, grads.kg.relation);
    opt_.update(4, model_.tables.kg.w, grads.kg.w);

    m.loss.bpr += loss.bpr;
    m.loss.cl_user += loss.cl_user;
    m.loss.cl_item += loss.cl_item;
    m.loss.reg += loss.reg;
    m.loss.total += loss.total;
    ++batches;
  }
  const double inv = 1.0 / static_cast<double>(batches);
  m.loss.bpr *= inv;
  m.loss.cl_user *= inv;
  m.loss.cl_item *= inv;
  m.loss.reg *= inv;
  m.loss.total *= inv;
  m.loss.theta1 = hyper.theta1;
  m.loss.theta2 = hyper.theta2;
  m.loss.tau = hyper.tau;
  m.denoiser_loss = contrast ? last_denoiser_loss_ : 0.0;

  ++model_.epochs_done;
  if (model_.epochs_done % c.eval_every == 0 || model_.epochs_done == c.epochs) {
    const auto r = evaluate_now();
    m.recall = r.recall;
    m.ndcg = r.ndcg;
    m.evaluated = true;
  }
  trace_.push_back(m);
  return m;
}

std::vector<EpochMetrics> Trainer::train() {
  while (model_.epochs_done < model_.config.epochs) run_epoch();
  return trace_;
}

ViewEmbeddings Trainer::embeddings() const {
  return model_embeddings(model_.tables, op_, kg_, model_.config.layers, exec_);
}

RankingResult Trainer::evaluate_now() const {
  const auto emb = embeddings();
  EvalOptions opts{model_.config.top_n, true, exec_};
  return evaluate(embedding_scorer(emb.user, emb.item), split_.train, split_.test, opts);
}

Model Trainer::snapshot() const {
  Model m = model_;
  m.rng_state.clear();
  for (const auto* rng : {&init_rng_, &sample_rng_, &cl_rng_, &diffusion_rng_}) {
    std::ostringstream s;
    s << *rng;
    m.rng_state.push_back(s.str());
  }
  return m;
}

TrainResult train_model(const DatasetSplit& split, const KnowledgeGraph& kg, const TrainConfig& config, Exec exec) {
  Trainer trainer(split, kg, config, exec);
  auto trace = trainer.train();
  TrainResult r{trainer.snapshot(), std::move(trace), trainer.evaluate_now()};
  return r;
}

}  // namespace kdiffe
