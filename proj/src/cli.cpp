#include "kdiffe/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kdiffe/ablation.hpp"
#include "kdiffe/checkpoint.hpp"
#include "kdiffe/errors.hpp"
#include "kdiffe/model.hpp"

namespace kdiffe {

namespace {

namespace fs = std::filesystem;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::filesystem::path default_output_dir() {
  if (const char* env = std::getenv("KDIFFE_OUTPUT_DIR"); env && *env) return env;
  return "kdiffe_out";
}

struct DataArgs {
  std::string dir;
  std::string interactions;
  std::string kg;

  void add(CLI::App* app) {
    app->add_option("--data", dir, "Directory holding interactions.tsv and kg.tsv");
    app->add_option("--interactions", interactions, "Interaction file (overrides --data)");
    app->add_option("--kg", kg, "Knowledge-graph file (overrides --data)");
  }
};

struct Dataset {
  InteractionGraph graph;
  KnowledgeGraph kg;
};

Dataset load_data(const DataArgs& a, std::ostream& err) {
  fs::path inter = a.interactions, kgp = a.kg;
  if (inter.empty()) {
    if (a.dir.empty()) throw UsageError("give --data or --interactions");
    inter = fs::path(a.dir) / "interactions.tsv";
  }
  if (kgp.empty() && !a.dir.empty()) kgp = fs::path(a.dir) / "kg.tsv";
  Warnings warnings;
  Dataset d;
  d.graph = load_interactions(inter, &warnings);
  if (kgp.empty())
    d.kg = KnowledgeGraph::from_triples(d.graph.num_items(), 0, 0, {});
  else
    d.kg = load_kg(kgp, d.graph, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  return d;
}

/// Config file plus flag overrides; flags win.
struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  bool disable_attention = false;
  bool disable_guidance = false;
  bool disable_contrastive = false;

  void add(CLI::App* app, bool ablation_flags) {
    app->add_option("--config", config_file, "key = value config file");
    app->add_option("--set", sets, "Override any config key (key=value), repeatable");
    static const char* keys[][2] = {{"epochs", "Training epochs"},      {"seed", "Random seed"},
                                    {"lr", "Learning rate"},            {"dim", "Embedding size"},
                                    {"layers", "Propagation layers"},   {"xi", "Attention blend weight"},
                                    {"theta1", "Contrastive weight"},   {"theta2", "L2 weight"},
                                    {"tau", "InfoNCE temperature"},     {"q", "Entities kept per item"},
                                    {"batch-size", "BPR batch size"},   {"diffusion-steps", "Diffusion steps T"},
                                    {"beta-end", "Final noise level"},  {"top-n", "Metric cutoff N"}};
    for (const auto& [flag, help] : keys) {
      std::string key = flag;
      std::replace(key.begin(), key.end(), '-', '_');
      app->add_option_function<std::string>(std::string("--") + flag,
                                            [this, key](const std::string& v) { flags[key] = v; }, help);
    }
    if (ablation_flags) {
      app->add_flag("--disable-attention", disable_attention, "KDiffE_1: plain normalized adjacency (xi = 0)");
      app->add_flag("--disable-guidance", disable_guidance, "KDiffE_2: zero guidance vector in the denoiser");
      app->add_flag("--disable-contrastive", disable_contrastive, "KDiffE_3: drop the contrastive loss (theta1 = 0)");
    }
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_file.empty()) cfg = load_config(config_file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [k, v] : flags) cfg.set(k, v);

    auto overridden = [&](const std::string& key) {
      if (flags.count(key)) return true;
      for (const auto& s : sets)
        if (s.rfind(key + "=", 0) == 0) return true;
      return false;
    };
    if (disable_attention && overridden("xi")) throw UsageError("--disable-attention conflicts with an explicit xi");
    if (disable_contrastive && overridden("theta1"))
      throw UsageError("--disable-contrastive conflicts with an explicit theta1");
    if (disable_contrastive && disable_guidance)
      throw UsageError("--disable-guidance has no effect with --disable-contrastive");
    if (disable_attention) cfg.xi = 0.0;
    if (disable_guidance) cfg.disable_guidance = true;
    if (disable_contrastive) cfg.theta1 = 0.0;
    cfg.validate();
    return cfg;
  }
};

struct ThreadArgs {
  int threads = 0;
  bool deterministic = false;

  void add(CLI::App* app) {
    app->add_option("--threads", threads, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
    app->add_flag("--deterministic", deterministic, "Force a single thread");
  }
  void apply() const {
    if (deterministic && threads > 1) throw UsageError("--deterministic conflicts with --threads > 1");
    if (deterministic)
      set_num_threads(1);
    else if (threads > 0)
      set_num_threads(threads);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------

int cmd_gen_synth(const SyntheticSpec& spec, const fs::path& out_dir, std::ostream& out) {
  spec.validate();
  const auto data = generate_synthetic(spec);
  fs::create_directories(out_dir);
  write_synthetic(data, out_dir);
  out << "wrote " << data.graph.num_edges() << " interactions and " << data.kg.num_triples() << " triples to "
      << out_dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const DataArgs& data_args, const ConfigArgs& cargs, const fs::path& out_dir,
              const std::string& attention_cache, std::ostream& out, std::ostream& err) {
  const TrainConfig cfg = cargs.resolve();
  const Dataset data = load_data(data_args, err);
  const DatasetSplit split = split_train_test(data.graph, cfg.holdout, cfg.seed);
  fs::create_directories(out_dir);
  save_config(cfg, out_dir / "config.resolved");

  std::optional<AttentionMatrix> attention;
  if (!attention_cache.empty() && cfg.xi > 0.0) {
    attention = load_attention_cache(attention_cache, split.train, cfg.walk());
    if (!attention) {
      attention = build_attention_matrix(split.train, cfg.walk());
      save_attention_cache(attention_cache, split.train, cfg.walk(), *attention);
    }
  }
  Trainer trainer(split, data.kg, cfg, Exec::kParallel, attention ? &*attention : nullptr);
  std::ofstream metrics(out_dir / "metrics.jsonl");
  if (!metrics) throw DataError("cannot write metrics.jsonl");
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto m = trainer.run_epoch();
    metrics << m.to_json() << '\n';
    metrics.flush();
    if (m.evaluated)
      err << "epoch " << m.epoch << " loss " << m.loss.total << " recall@" << cfg.top_n << ' ' << m.recall << '\n';
  }
  save_checkpoint(trainer.snapshot(), out_dir / "model.ckpt");
  save_id_map(data.graph.user_ids(), out_dir / "user_ids.tsv");
  save_id_map(data.graph.item_ids(), out_dir / "item_ids.tsv");
  save_id_map(data.kg.entity_ids(), out_dir / "entity_ids.tsv");
  save_id_map(data.kg.relation_ids(), out_dir / "relation_ids.tsv");
  out << ranking_to_json(trainer.evaluate_now(), "KDiffE") << '\n';
  return kExitOk;
}

void check_model_fits(const Model& model, const Dataset& data) {
  if (model.tables.user.rows() != data.graph.num_users() || model.tables.item.rows() != data.graph.num_items() ||
      model.tables.kg.entity.rows() != data.kg.num_entities() ||
      model.tables.kg.relation.rows() != data.kg.num_relations())
    throw DataError("checkpoint does not match the dataset sizes");
}

int cmd_eval(const DataArgs& data_args, const std::string& ckpt, std::size_t n, bool train_as_test,
             std::ostream& out, std::ostream& err) {
  const Model model = load_checkpoint(ckpt);
  const Dataset data = load_data(data_args, err);
  check_model_fits(model, data);
  const DatasetSplit split = split_train_test(data.graph, model.config.holdout, model.config.seed);
  const auto op = operator_for(split.train, model.config, Exec::kParallel);
  const auto emb = model_embeddings(model.tables, op, data.kg, model.config.layers);
  EvalOptions opts{n == 0 ? model.config.top_n : n, true, Exec::kParallel};
  RankingResult r;
  if (train_as_test) {
    std::vector<TestPair> pairs;
    for (const auto& e : split.train.edges()) pairs.push_back({e.user, e.item});
    opts.mask_train = false;
    r = evaluate(embedding_scorer(emb.user, emb.item), split.train, pairs, opts);
  } else {
    r = evaluate(embedding_scorer(emb.user, emb.item), split.train, split.test, opts);
  }
  out << ranking_to_json(r, "KDiffE") << '\n';
  out << format_table({{"KDiffE", r.recall, r.ndcg}}, r.n);
  return kExitOk;
}

int cmd_diffuse(const DataArgs& data_args, const std::string& ckpt, std::size_t q, const fs::path& out_path,
                std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
  const Model model = load_checkpoint(ckpt);
  const Dataset data = load_data(data_args, err);
  check_model_fits(model, data);
  const DatasetSplit split = split_train_test(data.graph, model.config.holdout, model.config.seed);
  const Matrix guidance = model.config.disable_guidance ? Matrix(data.graph.num_items(), model.config.dim)
                                                        : guidance_matrix(split.train, model.tables.user);
  ReverseChainOptions opts;
  opts.start = model.config.chain_start;
  opts.add_noise = model.config.chain_noise;
  opts.seed = seed.value_or(derive_seed(model.config.seed, model.epochs_done));
  Warnings warnings;
  const auto kg = generate_denoised_kg(data.kg, make_predictor(model.denoiser, guidance), model.schedule,
                                       q == 0 ? model.config.q : q, opts, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_kg(kg, data.graph, out_path);
  out << "wrote " << kg.num_triples() << " triples to " << out_path.string() << '\n';
  return kExitOk;
}

int cmd_ablate(const DataArgs& data_args, const ConfigArgs& cargs, std::size_t seeds, const fs::path& out_dir,
               std::ostream& out, std::ostream& err) {
  const TrainConfig cfg = cargs.resolve();
  const Dataset data = load_data(data_args, err);
  const auto report =
      run_ablation(data.graph, data.kg, cfg, seeds, Exec::kParallel, [&](const std::string& s) { err << s << '\n'; });
  fs::create_directories(out_dir);
  save_config(cfg, out_dir / "config.resolved");
  write_text(out_dir / "ablation.json", report.to_json() + "\n");
  out << report.table();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge-graph diffusion recommender: training, evaluation and ablations", "kdiffe"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string out_dir = default_output_dir().string();
  ThreadArgs threads;

  auto* gen = app.add_subcommand("gen-synth", "Write a planted synthetic dataset");
  SyntheticSpec spec;
  gen->add_option("--out", out_dir, "Output directory");
  gen->add_option("--users", spec.num_users);
  gen->add_option("--items", spec.num_items);
  gen->add_option("--entities", spec.num_entities);
  gen->add_option("--clusters", spec.num_clusters);
  gen->add_option("--relations", spec.num_relations);
  gen->add_option("--intra-prob", spec.intra_cluster_prob);
  gen->add_option("--noise-prob", spec.noise_edge_prob);
  gen->add_option("--relevant-per-item", spec.relevant_relations_per_item);
  gen->add_option("--noise-per-item", spec.noise_relations_per_item);
  gen->add_option("--seed", spec.seed);

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  DataArgs train_data;
  ConfigArgs train_cfg;
  std::string attention_cache;
  train_data.add(train);
  train_cfg.add(train, true);
  threads.add(train);
  train->add_option("--out", out_dir, "Output directory (default $KDIFFE_OUTPUT_DIR or ./kdiffe_out)");
  train->add_option("--attention-cache", attention_cache, "Reuse or store the sampled attention matrix");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  DataArgs eval_data;
  std::string eval_ckpt;
  std::size_t eval_n = 0;
  bool train_as_test = false;
  eval_data.add(eval);
  threads.add(eval);
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--n", eval_n, "Metric cutoff (default: the checkpoint's top_n)");
  eval->add_flag("--train-as-test", train_as_test, "Score the training pairs without masking");

  auto* diffuse = app.add_subcommand("diffuse", "Dump the denoised knowledge graph");
  DataArgs diff_data;
  std::string diff_ckpt, diff_out;
  std::size_t diff_q = 0;
  std::optional<std::uint64_t> diff_seed;
  diff_data.add(diffuse);
  threads.add(diffuse);
  diffuse->add_option("--checkpoint", diff_ckpt)->required();
  diffuse->add_option("--q", diff_q, "Entities kept per item (default: the checkpoint's q)");
  diffuse->add_option("--out", diff_out, "Output KG file")->required();
  diffuse->add_option("--seed", diff_seed, "Reverse-chain seed");

  auto* ablate = app.add_subcommand("ablate", "Train the full model and KDiffE_1/2/3 over several seeds");
  DataArgs abl_data;
  ConfigArgs abl_cfg;
  std::size_t seeds = 5;
  abl_data.add(ablate);
  abl_cfg.add(ablate, false);
  threads.add(ablate);
  ablate->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  ablate->add_option("--out", out_dir, "Output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    threads.apply();
    if (gen->parsed()) return cmd_gen_synth(spec, out_dir, out);
    if (train->parsed()) return cmd_train(train_data, train_cfg, out_dir, attention_cache, out, err);
    if (eval->parsed()) return cmd_eval(eval_data, eval_ckpt, eval_n, train_as_test, out, err);
    if (diffuse->parsed()) return cmd_diffuse(diff_data, diff_ckpt, diff_q, diff_out, diff_seed, out, err);
    if (ablate->parsed()) return cmd_ablate(abl_data, abl_cfg, seeds, out_dir, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "error: numerical divergence: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace kdiffe
