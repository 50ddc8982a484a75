#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kdiffe/checkpoint.hpp"
#include "kdiffe/cli.hpp"
#include "kdiffe/errors.hpp"
#include "test_util.hpp"

using namespace kdiffe;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

/// Small synthetic dataset shared by the training tests.
fs::path dataset() {
  static const fs::path dir = [] {
    auto d = testing::scratch_dir("cli_data");
    REQUIRE(cli({"gen-synth", "--out", d.string(), "--users", "60", "--items", "40", "--entities", "15",
                 "--clusters", "3", "--intra-prob", "0.4", "--noise-prob", "0.02"})
                .code == 0);
    return d;
  }();
  return dir;
}

std::vector<std::string> fast_flags() {
  return {"--epochs", "2", "--dim", "8", "--set", "denoiser_hidden=8", "--set", "walk_paths=4",
          "--set", "walk_length=10", "--set", "batch_size=128"};
}

Run train(const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{"train", "--data", dataset().string(), "--out", out.string()};
  for (auto& f : fast_flags()) args.push_back(f);
  for (auto& f : extra) args.push_back(f);
  return cli(args);
}

}  // namespace

TEST_CASE("config defaults follow the reference settings and round-trip") {
  TrainConfig c;
  CHECK(c.theta1 == 1e-2);
  CHECK(c.theta2 == 1e-5);
  CHECK(c.walk_paths == 12);
  CHECK(c.walk_length == 50);
  CHECK(c.xi == 0.7);
  CHECK(c.diffusion_steps == 10);
  CHECK(c.tau == 0.5);
  CHECK(c.q == 1);
  CHECK(c.top_n == 20);
  c.lr = 0.1 + 0.2;  // not exactly representable in short decimal
  c.degree_mode = DegreeMode::kBlended;
  CHECK(TrainConfig::from_text(c.to_text()) == c);
  CHECK_THROWS_AS(TrainConfig::from_text("nope = 1\n"), ParameterError);
  CHECK_THROWS_AS(TrainConfig::from_text("lr = fast\n"), ParameterError);
  try {
    TrainConfig::from_text("# header\nlr = 0.1\nmissing equals\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("gen-synth: deterministic bytes and label count") {
  auto a = testing::scratch_dir("cli_gen_a"), b = testing::scratch_dir("cli_gen_b");
  REQUIRE(cli({"gen-synth", "--out", a.string(), "--seed", "3"}).code == 0);
  REQUIRE(cli({"gen-synth", "--out", b.string(), "--seed", "3"}).code == 0);
  for (const char* f : {"interactions.tsv", "kg.tsv", "labels.tsv"}) CHECK(slurp(a / f) == slurp(b / f));

  auto c = testing::scratch_dir("cli_gen_c");
  REQUIRE(cli({"gen-synth", "--out", c.string(), "--clusters", "2", "--users", "40", "--items", "30",
               "--relevant-per-item", "2", "--noise-per-item", "3"})
              .code == 0);
  CHECK(count_lines(c / "labels.tsv") == 30 * (2 + 3));
  auto g = load_interactions(c / "interactions.tsv");
  CHECK(g.num_users() == 40);
}

TEST_CASE("train writes every artifact; eval matches the module; checkpoint is bit-exact") {
  auto out = testing::scratch_dir("cli_train");
  auto r = train(out);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"metrics.jsonl", "config.resolved", "model.ckpt", "user_ids.tsv", "item_ids.tsv"})
    CHECK(fs::exists(out / f));
  CHECK(count_lines(out / "metrics.jsonl") == 2);

  const Model model = load_checkpoint(out / "model.ckpt");
  CHECK(model.epochs_done == 2);
  CHECK(model.rng_state.size() == 4);
  save_checkpoint(model, out / "again.ckpt");
  CHECK(load_checkpoint(out / "again.ckpt") == model);
  CHECK(slurp(out / "again.ckpt") == slurp(out / "model.ckpt"));

  auto e = cli({"eval", "--data", dataset().string(), "--checkpoint", (out / "model.ckpt").string()});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  // Module-level evaluation of the same checkpoint.
  auto graph = load_interactions(dataset() / "interactions.tsv");
  auto kg = load_kg(dataset() / "kg.tsv", graph);
  auto split = split_train_test(graph, model.config.holdout, model.config.seed);
  auto op = operator_for(split.train, model.config, Exec::kSerial);
  auto emb = model_embeddings(model.tables, op, kg, model.config.layers, Exec::kSerial);
  auto ref = evaluate(embedding_scorer(emb.user, emb.item), split.train, split.test, EvalOptions{});
  CHECK(e.out.substr(0, e.out.find('\n')) == ranking_to_json(ref, "KDiffE"));
  CHECK(e.out.find("Recall@20") != std::string::npos);
  // Training prints the same final metrics.
  CHECK(r.out.substr(0, r.out.find('\n')) == ranking_to_json(ref, "KDiffE"));
}

TEST_CASE("re-running from the resolved config reproduces the trace bit for bit") {
  auto a = testing::scratch_dir("cli_repro_a"), b = testing::scratch_dir("cli_repro_b");
  REQUIRE(train(a, {"--seed", "5"}).code == 0);
  auto r = cli({"train", "--data", dataset().string(), "--out", b.string(), "--config",
                (a / "config.resolved").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / "model.ckpt") == slurp(b / "model.ckpt"));
}

TEST_CASE("ablation flags") {
  auto a = testing::scratch_dir("cli_noattn");
  REQUIRE(train(a, {"--disable-attention"}).code == 0);
  auto cfg = load_config(a / "config.resolved");
  CHECK(cfg.xi == 0.0);
  auto graph = load_interactions(dataset() / "interactions.tsv");
  auto split = split_train_test(graph, cfg.holdout, cfg.seed);
  auto op = operator_for(split.train, cfg, Exec::kSerial);
  CsrMatrix plain = split.train.adjacency();
  for (std::size_t u = 0; u < plain.rows; ++u)
    for (std::size_t k = plain.row_ptr[u]; k < plain.row_ptr[u + 1]; ++k)
      plain.values[k] = 1.0 / std::sqrt(double(split.train.user_degree(static_cast<Index>(u))) *
                                        double(split.train.item_degree(plain.col_idx[k])));
  CHECK(op.by_user == plain);

  auto c = testing::scratch_dir("cli_nocl");
  REQUIRE(train(c, {"--disable-contrastive"}).code == 0);
  std::ifstream in(c / "metrics.jsonl");
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::json::parse(line);
    CHECK(j["loss_cl_user"].get<double>() == 0.0);
    CHECK(j["loss_cl_item"].get<double>() == 0.0);
  }

  auto g = testing::scratch_dir("cli_noguide");
  REQUIRE(train(g, {"--disable-guidance"}).code == 0);
  CHECK(load_config(g / "config.resolved").disable_guidance);
}

TEST_CASE("diffuse: q triples per item and the dump reloads") {
  auto out = testing::scratch_dir("cli_diffuse");
  REQUIRE(train(out).code == 0);
  auto graph = load_interactions(dataset() / "interactions.tsv");
  for (int q = 1; q <= 6; ++q) {
    auto path = out / ("kg_q" + std::to_string(q) + ".tsv");
    auto r = cli({"diffuse", "--data", dataset().string(), "--checkpoint", (out / "model.ckpt").string(), "--q",
                  std::to_string(q), "--out", path.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    auto kg = load_kg(path, graph);
    CHECK(kg.num_triples() == graph.num_items() * static_cast<std::size_t>(q));
    for (Index j = 0; j < graph.num_items(); ++j) CHECK(kg.neighbors(j).size() == static_cast<std::size_t>(q));
  }
}

TEST_CASE("eval --train-as-test on a memorizing checkpoint gives recall 1") {
  auto dir = testing::scratch_dir("cli_memo");
  {
    std::ofstream f(dir / "interactions.tsv");
    for (int u = 0; u < 4; ++u) f << u << '\t' << u << '\n';
  }
  std::ofstream(dir / "kg.tsv") << "";
  Model m;
  m.config.dim = 4;
  m.tables.user = Matrix(4, 4);
  m.tables.item = Matrix(4, 4);
  for (std::size_t k = 0; k < 4; ++k) m.tables.user(k, k) = m.tables.item(k, k) = 1.0;
  m.tables.kg.entity = Matrix(0, 4);
  m.tables.kg.relation = Matrix(0, 4);
  m.tables.kg.w = Matrix(4, 8);
  m.schedule = build_schedule(10, 1e-4, 0.5);
  save_checkpoint(m, dir / "memo.ckpt");
  auto r = cli({"eval", "--data", dir.string(), "--checkpoint", (dir / "memo.ckpt").string(), "--train-as-test",
                "--n", "1"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto j = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
  CHECK(j["recall@1"].get<double>() == 1.0);
  CHECK(j["ndcg@1"].get<double>() == 1.0);
}

TEST_CASE("exit codes and usage errors") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"train", "--bogus"}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
  auto out = testing::scratch_dir("cli_codes");
  CHECK(cli({"train", "--data", (out / "absent").string(), "--out", out.string()}).code == kExitData);
  CHECK(train(out, {"--disable-contrastive", "--theta1", "0.1"}).code == kExitUsage);
  CHECK(train(out, {"--disable-attention", "--xi", "0.3"}).code == kExitUsage);
  CHECK(train(out, {"--deterministic", "--threads", "4"}).code == kExitUsage);
  CHECK(train(out, {"--set", "tau=0"}).code == kExitUsage);
  CHECK(train(out, {"--set", "init_std=1e200"}).code == kExitDiverged);
  {
    std::ofstream(out / "bad.tsv") << "1\t2\n3\n";
  }
  CHECK(cli({"train", "--interactions", (out / "bad.tsv").string(), "--out", out.string()}).code == kExitData);
  std::ofstream(out / "junk.ckpt") << "not a checkpoint";
  CHECK(cli({"eval", "--data", dataset().string(), "--checkpoint", (out / "junk.ckpt").string()}).code == kExitData);
}

TEST_CASE("output directory defaults to the environment variable") {
  auto dir = testing::scratch_dir("cli_env");
  ::setenv("KDIFFE_OUTPUT_DIR", dir.string().c_str(), 1);
  std::vector<std::string> args{"train", "--data", dataset().string(), "--deterministic"};
  for (auto& f : fast_flags()) args.push_back(f);
  auto r = cli(args);
  ::unsetenv("KDIFFE_OUTPUT_DIR");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(dir / "model.ckpt"));
}

TEST_CASE("checkpoint rejects truncated files") {
  auto dir = testing::scratch_dir("cli_trunc");
  Model m;
  m.tables.user = Matrix(3, 32, 0.5);
  m.tables.item = Matrix(2, 32, 0.25);
  save_checkpoint(m, dir / "m.ckpt");
  CHECK(load_checkpoint(dir / "m.ckpt") == m);
  auto bytes = slurp(dir / "m.ckpt");
  std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), DataError);
}
