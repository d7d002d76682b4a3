#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "sgn/checkpoint.hpp"
#include "sgn/errors.hpp"
#include "sgn/pipeline.hpp"

using namespace sgn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sgn_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.synthetic.train_size = 48;
  c.synthetic.val_size = 8;
  c.synthetic.test_size = 8;
  c.parser.embedding = 8;
  c.parser.hidden = 8;
  c.parser.chunk = 2;
  c.parser.word_layers = 1;
  c.parser.epochs = 1;
  c.sgn.width = 16;
  c.sgn.layers = 1;
  c.sgn.heads = 2;
  c.sgn.gat_hidden = 8;
  c.sgn.gat_heads = 2;
  c.sgn.tree_layers = 1;
  c.train.epochs = 3;
  c.train.batch = 16;
  return c;
}

std::vector<SgnExample> tiny_examples(std::size_t n, const Vocabulary** vocab_out = nullptr) {
  static const auto corpus = [] {
    SyntheticConfig sc;
    sc.train_size = 40;
    sc.val_size = 8;
    sc.test_size = 8;
    return make_synthetic_corpus(sc, 3);
  }();
  static const Vocabulary vocab = Vocabulary::build(corpus, 1);
  if (vocab_out) *vocab_out = &vocab;
  std::vector<SgnExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_example(corpus[i], vocab, true));
  return out;
}

SgnConfig tiny_model() {
  SgnConfig c;
  c.width = 16;
  c.layers = 1;
  c.heads = 2;
  c.gat_hidden = 8;
  c.gat_heads = 2;
  c.tree_layers = 1;
  return c;
}

}  // namespace

TEST_CASE("config files") {
  const auto cfg = parse_config(
      "# a comment\n"
      "run_name = trial   # trailing comment\n"
      "sgn.width = 32\n"
      "train.learning_rate = 0.002\n"
      "sgn.tree_memory = nodes\n"
      "bleu_mean = arithmetic\n"
      "\n"
      "use_planted_trees = true\n");
  CHECK(cfg.run_name == "trial");
  CHECK(cfg.sgn.width == 32);
  CHECK(cfg.train.learning_rate == 0.002);
  CHECK(cfg.sgn.tree_memory == TreeMemory::nodes);
  CHECK(cfg.bleu_mean == BleuMean::arithmetic);
  CHECK(cfg.use_planted_trees);

  const auto back = parse_config(serialize_config(cfg));
  CHECK(config_to_map(back) == config_to_map(cfg));
  CHECK(config_fingerprint(back) == config_fingerprint(cfg));

  // The preset is applied first even when it appears last.
  const auto paper = parse_config("sgn.layers = 3\npreset = paper\n");
  CHECK(paper.sgn.layers == 3);
  CHECK(paper.sgn.width == 512);
  CHECK(paper.sgn.heads == 8);
  CHECK(paper.parser.embedding == 400);
  CHECK(paper.parser.batch == 60);
  CHECK(paper.parser.learning_rate == 1.0);
  CHECK(paper.preset == "paper");
  CHECK(paper.img2tree_epochs == 0);
  CHECK(ExperimentConfig{}.img2tree_epochs == 5);

  CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("sgn.width = wide\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("sgn.width = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train_joint = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("preset = huge\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("sgn.width = 30\nsgn.heads = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("sgn.lambda_tree = -0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train.batch = 0\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/sgn.cfg"), ConfigError);
}

TEST_CASE("fingerprints ignore run-control keys only") {
  ExperimentConfig a;
  const auto fp = config_fingerprint(a);
  CHECK(fp.size() == 16);
  ExperimentConfig b = a;
  b.run_name = "other";
  b.resume = true;
  b.train.max_steps = 5;
  CHECK(config_fingerprint(b) == fp);
  b.model_seed = 2;
  CHECK(config_fingerprint(b) != fp);
  ExperimentConfig c = a;
  c.sgn.lambda_tree = 0.0;
  CHECK(config_fingerprint(c) != fp);
}

TEST_CASE("checkpoints round trip exactly") {
  const fs::path dir = scratch("ckpt");
  Checkpoint c;
  c.fingerprint = "0123456789abcdef";
  c.meta["kind"] = "test";
  c.meta["multi"] = "line one\nline two";
  Matrix m(3, 2);
  m(0, 0) = 1.0 / 3.0;
  m(2, 1) = -1e-300;
  c.arrays["a"] = m;
  c.arrays["empty"] = Matrix(0, 4);
  write_checkpoint(dir / "x.ckpt", c);
  const Checkpoint back = read_checkpoint(dir / "x.ckpt");
  CHECK(back.fingerprint == c.fingerprint);
  CHECK(back.meta == c.meta);
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.arrays.at("a")(0, 0) == 1.0 / 3.0);
  CHECK(back.arrays.at("a")(2, 1) == -1e-300);
  CHECK(back.arrays.at("empty").cols() == 4);
  for (const auto& entry : fs::directory_iterator(dir)) CHECK(entry.path().filename() == "x.ckpt");

  const auto size = fs::file_size(dir / "x.ckpt");
  fs::copy_file(dir / "x.ckpt", dir / "cut.ckpt");
  fs::resize_file(dir / "cut.ckpt", size - 3);
  CHECK_THROWS_AS(read_checkpoint(dir / "cut.ckpt"), CheckpointError);
  std::ofstream(dir / "junk.ckpt") << "hello, world";
  CHECK_THROWS_AS(read_checkpoint(dir / "junk.ckpt"), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.ckpt"), CheckpointError);
  fs::remove_all(dir);
}

TEST_CASE("trainer resumes bit-for-bit from a mid-epoch checkpoint") {
  const auto train = tiny_examples(24);
  const auto val = tiny_examples(4);
  const Vocabulary* vocab = nullptr;
  tiny_examples(0, &vocab);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 5;  // 5 steps per epoch, the last one short

  SgnModel straight_model(vocab->size(), tiny_model(), 11);
  JointTrainer straight(straight_model, train, val, tc, 11);
  straight.run();
  REQUIRE(straight.steps() == 15);

  const fs::path dir = scratch("resume");
  {
    SgnModel model(vocab->size(), tiny_model(), 11);
    JointTrainer first(model, train, val, tc, 11);
    first.set_max_steps(7);
    first.run();
    REQUIRE(first.steps() == 7);
    Checkpoint c;
    first.save(c);
    write_checkpoint(dir / "mid.ckpt", c);
  }
  const Checkpoint mid = read_checkpoint(dir / "mid.ckpt");
  {
    // The seed also fixes the synthetic image features, so it must match.
    SgnModel other(vocab->size(), tiny_model(), 99);
    JointTrainer wrong(other, train, val, tc, 11);
    CHECK_THROWS_AS(wrong.restore(mid), CheckpointError);
  }
  SgnModel model(vocab->size(), tiny_model(), 11);
  for (auto* p : model.store().all()) p->value.fill(0.5);  // overwritten on restore
  JointTrainer second(model, train, val, tc, 12);
  second.restore(mid);
  CHECK(second.steps() == 7);
  second.run();
  REQUIRE(second.step_losses().size() == 15);
  for (std::size_t i = 0; i < 15; ++i) CHECK(std::abs(second.step_losses()[i] - straight.step_losses()[i]) < 1e-6);
  REQUIRE(second.curve().size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(second.curve()[e].loss == doctest::Approx(straight.curve()[e].loss).epsilon(1e-9));
    CHECK(second.curve()[e].val_perplexity == doctest::Approx(straight.curve()[e].val_perplexity).epsilon(1e-9));
  }
  // Learning rate decays once per epoch.
  CHECK(straight.curve()[2].learning_rate == doctest::Approx(1e-3 * 0.99 * 0.99));
  fs::remove_all(dir);
}

TEST_CASE("saved models reproduce their outputs") {
  const Vocabulary* vocab = nullptr;
  const auto ex = tiny_examples(3, &vocab);
  ExperimentConfig cfg = tiny_experiment();
  SgnModel model(vocab->size(), cfg.sgn, 5);  // not cfg.model_seed: the checkpoint keeps its own
  TrainConfig tc;
  tc.epochs = 1;
  JointTrainer(model, ex, {}, tc, 5).run();
  const fs::path dir = scratch("model");
  save_model(dir / "m.ckpt", model, *vocab, cfg);
  const LoadedModel loaded = load_model(dir / "m.ckpt");
  CHECK(loaded.vocab.size() == vocab->size());
  CHECK(config_fingerprint(loaded.config) == config_fingerprint(cfg));
  for (const auto& e : ex) {
    const auto a = predict(model, e.image_key, e.ingredients, 20);
    const auto b = predict(*loaded.model, e.image_key, e.ingredients, 20);
    CHECK(a.recipe.tokens == b.recipe.tokens);
    CHECK(a.recipe.logprobs == b.recipe.logprobs);
    CHECK(a.tree.bracketed() == b.tree.bracketed());
  }
  CHECK(teacher_forced_perplexity(model, ex) == teacher_forced_perplexity(*loaded.model, ex));
  // A parser checkpoint is not a model checkpoint.
  ParserModel parser(*vocab, cfg.parser, 1);
  save_parser(dir / "p.ckpt", parser, cfg);
  CHECK_THROWS_AS(load_model(dir / "p.ckpt"), CheckpointError);
  CHECK(load_parser(dir / "p.ckpt").parser->vocab.size() == vocab->size());
  fs::remove_all(dir);
}

TEST_CASE("evaluation strips separators and scores generated trees") {
  const auto ex = tiny_examples(4);
  SgnModel model(200, tiny_model(), 6);
  std::vector<SampleOutput> outputs;
  const EvalReport r = evaluate_model(model, ex, BleuMean::geometric, &outputs);
  CHECK(r.samples == 4);
  CHECK(outputs.size() == 4);
  CHECK(r.perplexity > 1.0);
  CHECK(r.bleu >= 0.0);
  CHECK(r.rouge_l >= 0.0);
  double ref = 0;
  for (const auto& e : ex) ref += static_cast<double>(strip_separators(e.target).size());
  CHECK(r.reference_length == doctest::Approx(ref / 4));
  CHECK(strip_separators(TokenIds{5, Vocabulary::kSep, 6, Vocabulary::kSep}) == TokenIds{5, 6});
}

TEST_CASE("pipeline smoke run with no training steps") {
  const fs::path root = scratch("smoke");
  ExperimentConfig cfg = tiny_experiment();
  cfg.run_name = "smoke";
  cfg.train_parser = false;
  cfg.train.epochs = 0;
  std::vector<std::string> messages;
  const auto res = run_pipeline(cfg, root, [&](const std::string& m) { messages.push_back(m); });
  CHECK(res.report.samples == 8);
  CHECK(std::isfinite(res.report.perplexity));
  CHECK(res.curve.empty());
  CHECK(!messages.empty());
  const std::string fp = config_fingerprint(cfg);
  CHECK(res.paths.fingerprint == fp);
  CHECK(res.paths.dir == root / ("smoke-" + fp));
  for (const char* stem : {"config", "state", "parser", "corpus", "sgn", "loss_curve", "step_loss", "report",
                           "predictions"}) {
    bool found = false;
    for (const auto& entry : fs::directory_iterator(res.paths.dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind(std::string(stem) + "-", 0) == 0) {
        found = true;
        CHECK(name.find(fp) != std::string::npos);
      }
    }
    CHECK_MESSAGE(found, stem);
  }
  CHECK(slurp(res.paths.file("loss_curve", "csv")).rfind("# fingerprint=" + fp, 0) == 0);
  CHECK(slurp(res.paths.file("state", "json")).find("complete") != std::string::npos);
  CHECK(report_from_json(slurp(res.paths.file("report", "json"))).fingerprint == fp);
  fs::remove_all(root);
}

TEST_CASE("pipeline runs are deterministic and resumable") {
  const fs::path root = scratch("resume_pipeline");
  ExperimentConfig cfg = tiny_experiment();
  cfg.run_name = "whole";
  const auto whole = run_pipeline(cfg, root);
  REQUIRE(whole.step_losses.size() == 9);
  CHECK(whole.recovery.has_value());

  ExperimentConfig again = cfg;
  again.run_name = "again";
  const auto repeat = run_pipeline(again, root);
  CHECK(repeat.report.perplexity == whole.report.perplexity);
  CHECK(repeat.report.bleu == whole.report.bleu);
  CHECK(repeat.report.rouge_l == whole.report.rouge_l);
  CHECK(repeat.report.avg_length == whole.report.avg_length);

  ExperimentConfig part = cfg;
  part.run_name = "part";
  part.train.max_steps = 4;
  const auto first = run_pipeline(part, root);
  CHECK(first.step_losses.size() == 4);
  part.train.max_steps = 0;
  part.resume = true;
  const auto rest = run_pipeline(part, root);
  REQUIRE(rest.step_losses.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(rest.step_losses[i] - whole.step_losses[i]) < 1e-6);
  CHECK(rest.report.perplexity == doctest::Approx(whole.report.perplexity).epsilon(1e-9));
  fs::remove_all(root);
}

TEST_CASE("a failing stage leaves a failed state file") {
  const fs::path root = scratch("failing");
  ExperimentConfig cfg = tiny_experiment();
  cfg.run_name = "broken";
  cfg.corpus_path = (root / "missing.json").string();
  CHECK_THROWS(run_pipeline(cfg, root));
  const auto paths = run_paths(cfg, root);
  const std::string state = slurp(paths.file("state", "json"));
  CHECK(state.find("failed") != std::string::npos);
  CHECK(state.find("stage1") != std::string::npos);
  fs::remove_all(root);
}
