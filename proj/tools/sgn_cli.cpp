#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "sgn/config.hpp"
#include "sgn/encoders.hpp"
#include "sgn/errors.hpp"
#include "sgn/pipeline.hpp"

using namespace sgn;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "key = value configuration file");
    app->add_option("-s,--set", overrides, "override, as key=value (repeatable)");
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg = file.empty() ? ExperimentConfig{} : load_config(file);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
      set_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    validate(cfg);
    return cfg;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_row(const std::string& label, const EvalReport& r) {
  std::printf("%-12s %12s %8s %9s %10s\n", "Method", "Perplexity", "BLEU", "ROUGE-L", "AvgLength");
  std::printf("%-12s %12.2f %8.2f %9.2f %10.1f\n", label.c_str(), r.perplexity, 100.0 * r.bleu, 100.0 * r.rouge_l,
              r.avg_length);
  std::printf("(%zu %s samples, ground-truth length %.1f, sentence-level BLEU %.2f)\n", r.samples, r.split.c_str(),
              r.reference_length, 100.0 * r.sentence_bleu);
}

std::vector<std::vector<TokenIds>> parse_ingredients(const std::string& text, const Vocabulary& vocab) {
  std::vector<std::vector<TokenIds>> out(1);
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto ids = tokenize(item, vocab);
    if (!ids.empty()) out[0].push_back(std::move(ids));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structure-aware recipe generation"};
  app.require_subcommand(1);
  auto log = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };

  ConfigArgs corpus_args;
  std::string corpus_out;
  auto* make_corpus = app.add_subcommand("make-corpus", "write the configured corpus as JSON");
  corpus_args.attach(make_corpus);
  make_corpus->add_option("-o,--out", corpus_out, "output path")->required();

  ConfigArgs parser_args;
  auto* train_parser = app.add_subcommand("train-parser", "train the sentence-level parser and annotate the corpus");
  parser_args.attach(train_parser);

  std::string parse_ckpt, parse_corpus;
  std::size_t parse_limit = 10;
  auto* parse = app.add_subcommand("parse", "print bracketed sentence-level trees");
  parse->add_option("-p,--parser", parse_ckpt, "parser checkpoint")->required();
  parse->add_option("--corpus", parse_corpus, "corpus JSON (default: the checkpoint's configured corpus)");
  parse->add_option("-n,--limit", parse_limit, "recipes to print (0 for all)");

  ConfigArgs sgn_args;
  auto* train_sgn = app.add_subcommand("train-sgn", "run all stages and print the evaluation row");
  sgn_args.attach(train_sgn);

  std::string model_ckpt, image_key, ingredients_text;
  bool sample = false;
  std::uint64_t sample_seed = 0;
  auto* gen_tree = app.add_subcommand("gen-tree", "generate a sentence-level tree from an image key");
  gen_tree->add_option("-m,--model", model_ckpt, "generator checkpoint")->required();
  gen_tree->add_option("-k,--key", image_key, "image key")->required();
  gen_tree->add_flag("--sample", sample, "sample instead of greedy decoding");
  gen_tree->add_option("--seed", sample_seed, "sampling seed");

  auto* generate = app.add_subcommand("generate", "generate a recipe for an image key");
  generate->add_option("-m,--model", model_ckpt, "generator checkpoint")->required();
  generate->add_option("-k,--key", image_key, "image key")->required();
  generate->add_option("-i,--ingredients", ingredients_text, "comma-separated ingredient list");

  std::string eval_split = "test";
  std::size_t eval_limit = 0;
  std::string eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on its corpus");
  evaluate->add_option("-m,--model", model_ckpt, "generator checkpoint")->required();
  evaluate->add_option("--split", eval_split, "test or val");
  evaluate->add_option("-n,--limit", eval_limit, "samples (0 for all)");
  evaluate->add_option("-o,--out", eval_out, "write the report JSON here");

  std::string report_a, report_b;
  auto* compare = app.add_subcommand("compare", "signed deltas between two reports (b - a)");
  compare->add_option("baseline", report_a, "report JSON")->required();
  compare->add_option("candidate", report_b, "report JSON")->required();

  ConfigArgs feature_args;
  std::string feature_out;
  auto* export_features = app.add_subcommand("export-features", "write the configured image features to a file");
  feature_args.attach(export_features);
  export_features->add_option("-o,--out", feature_out, "output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make_corpus) {
      const auto cfg = corpus_args.load();
      const auto corpus = load_experiment_corpus(cfg);
      write_corpus(corpus_out, corpus);
      std::printf("wrote %zu recipes to %s\n", corpus.size(), corpus_out.c_str());
    } else if (*train_parser) {
      const auto cfg = parser_args.load();
      auto corpus = load_experiment_corpus(cfg);
      const auto paths = run_paths(cfg, artifact_root_from_env());
      std::filesystem::create_directories(paths.dir);
      ParserModel parser(Vocabulary::build(corpus, cfg.vocab_min_count), cfg.parser, cfg.model_seed);
      const auto res = train_recipe2tree(parser, corpus, cfg.model_seed, [&](const ParserEpoch& e) {
        std::fprintf(stderr, "epoch %zu: qt loss %.4f, val accuracy %.3f\n", e.epoch, e.train_loss, e.val_accuracy);
      });
      save_parser(paths.file("parser", "ckpt"), parser, cfg);
      annotate_corpus(parser, corpus);
      write_corpus(paths.file("corpus", "json"), corpus);
      std::printf("untrained QT accuracy %.3f\n", res.untrained_val_accuracy);
      if (!res.epochs.empty()) std::printf("trained QT accuracy %.3f\n", res.epochs.back().val_accuracy);
      const auto test = select_partition(corpus, Partition::test);
      bool planted = false;
      for (const auto& s : test) planted = planted || s.planted_tree.has_value();
      if (planted) {
        const auto rec = evaluate_tree_recovery(parser, test, 1000, cfg.data_seed);
        std::printf("tree F1 %.3f (random binary trees %.3f, %zu recipes)\n", rec.parser_f1, rec.random_f1,
                    rec.samples);
      }
      std::printf("parser checkpoint %s\n", paths.file("parser", "ckpt").c_str());
    } else if (*parse) {
      auto loaded = load_parser(parse_ckpt);
      auto corpus = parse_corpus.empty() ? load_experiment_corpus(loaded.config)
                                         : parse_recipe1m(read_file(parse_corpus), loaded.config.min_sentences);
      if (parse_limit && corpus.size() > parse_limit) corpus.resize(parse_limit);
      annotate_corpus(*loaded.parser, corpus);
      for (const auto& s : corpus) std::printf("%s\t%s\n", s.id.c_str(), s.parsed_tree->bracketed().c_str());
    } else if (*train_sgn) {
      const auto cfg = sgn_args.load();
      const auto res = run_pipeline(cfg, artifact_root_from_env(), log);
      print_row(cfg.sgn.use_tree ? "+SGN" : "baseline", res.report);
      std::printf("artifacts in %s\n", res.paths.dir.c_str());
    } else if (*gen_tree) {
      auto loaded = load_model(model_ckpt);
      const auto& model = *loaded.model;
      const auto tree = model.tree_generator().generate(model.provider().lookup(image_key),
                                                        sample ? DecodeMode::sample : DecodeMode::greedy, sample_seed);
      std::printf("%s\n%s\n", encode_tree(tree).to_string().c_str(), tree.bracketed().c_str());
    } else if (*generate) {
      auto loaded = load_model(model_ckpt);
      std::vector<TokenIds> ings;
      if (!ingredients_text.empty()) {
        ings = parse_ingredients(ingredients_text, loaded.vocab)[0];
      } else {
        for (const auto& s : load_experiment_corpus(loaded.config)) {
          if (s.image_key != image_key) continue;
          for (const auto& ing : s.ingredients) ings.push_back(loaded.vocab.encode(ing));
        }
      }
      if (ings.empty()) throw InputError("no ingredients given and none found for key " + image_key);
      const auto pred = predict(*loaded.model, image_key, ings);
      std::printf("tree: %s\n", pred.tree.bracketed().c_str());
      for (std::size_t i = 0; i < pred.recipe.sentences.size(); ++i) {
        std::printf("%zu. %s\n", i + 1, loaded.vocab.decode(pred.recipe.sentences[i]).c_str());
      }
    } else if (*evaluate) {
      auto loaded = load_model(model_ckpt);
      const auto corpus = load_experiment_corpus(loaded.config);
      const Partition split = parse_partition(eval_split);
      std::vector<SgnExample> examples;
      for (const auto& s : corpus) {
        if (s.partition != split) continue;
        if (eval_limit && examples.size() >= eval_limit) break;
        examples.push_back(make_example(s, loaded.vocab, true));
      }
      auto report = evaluate_model(*loaded.model, examples, loaded.config.bleu_mean);
      report.split = eval_split;
      report.fingerprint = config_fingerprint(loaded.config);
      print_row(loaded.config.sgn.use_tree ? "+SGN" : "baseline", report);
      if (!eval_out.empty()) std::ofstream(eval_out) << report_to_json(report) << "\n";
    } else if (*compare) {
      const auto a = report_from_json(read_file(report_a));
      const auto b = report_from_json(read_file(report_b));
      std::printf("%s\n", delta_to_json(compare_reports(a, b)).c_str());
    } else if (*export_features) {
      const auto cfg = feature_args.load();
      const auto corpus = load_experiment_corpus(cfg);
      std::vector<std::string> keys;
      for (const auto& s : corpus) keys.push_back(s.image_key);
      ParameterStore store;
      Rng rng(cfg.model_seed);
      auto provider = make_provider(cfg.sgn, cfg.model_seed, &store, &rng);
      write_feature_file(feature_out, keys, *provider);
      std::printf("wrote %zu feature rows of width %zu to %s\n", keys.size(), provider->width(), feature_out.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
