#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sgn/corpus.hpp"
#include "sgn/errors.hpp"

using namespace sgn;

namespace {

std::string fixture_text() {
  std::ifstream in(std::string(SGN_TEST_DATA) + "/recipes_fixture.json");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Counts records by scanning for "instructions" arrays without a JSON library.
std::size_t records_with_at_least(const std::string& text, std::size_t n) {
  std::size_t count = 0, pos = 0;
  while ((pos = text.find("\"instructions\"", pos)) != std::string::npos) {
    const std::size_t open = text.find('[', pos), close = text.find(']', open);
    std::size_t items = 0;
    for (std::size_t p = text.find("\"text\"", open); p != std::string::npos && p < close; p = text.find("\"text\"", p + 1))
      ++items;
    count += items >= n;
    pos = close;
  }
  return count;
}

}  // namespace

TEST_CASE("fixture loads with the sentence filter") {
  const std::string text = fixture_text();
  const auto all = parse_recipe1m(text, 1);
  CHECK(all.size() == 10);
  const auto kept = load_recipe1m(std::string(SGN_TEST_DATA) + "/recipes_fixture.json", 4);
  CHECK(kept.size() == records_with_at_least(text, 4));
  CHECK(kept.size() == 6);
  for (const auto& s : kept) CHECK(s.instructions.size() >= 4);
  CHECK(kept.front().id == "r00");
  CHECK(kept.front().partition == Partition::train);
  CHECK(kept.front().image_key == "r00");
  CHECK(kept.front().instructions.front() == Tokens{"chop", "the", "beans", "then", "wait", "0", "minutes"});
}

TEST_CASE("a three-step record is dropped at min_sentences 4") {
  const std::string one =
      R"([{"id":"a","title":"t","ingredients":[{"text":"x"}],"instructions":[{"text":"a"},{"text":"b"},{"text":"c"}],"partition":"train"}])";
  CHECK(parse_recipe1m(one, 4).empty());
  CHECK(parse_recipe1m(one, 3).size() == 1);
  CHECK(parse_recipe1m("[]", 4).empty());
}

TEST_CASE("loader errors") {
  try {
    parse_recipe1m("[{\"id\": \"a\",]", 1);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 13);
  }
  try {
    parse_recipe1m(R"([{"id":"rec-9","title":"t","ingredients":[],"partition":"train"}])", 1);
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("rec-9") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_recipe1m("{}", 1), SchemaError);
  CHECK_THROWS_AS(load_recipe1m("/nonexistent/file.json", 1), InputError);
}

TEST_CASE("vocabulary reserves fixed ids and round trips") {
  Vocabulary v({"mix", "the", "beans"});
  CHECK(v.id("<pad>") == 0);
  CHECK(v.id("<bos>") == 1);
  CHECK(v.id("<eos>") == 2);
  CHECK(v.id("<unk>") == 3);
  CHECK(v.id("<sep>") == 4);
  CHECK(tokenize("", v).empty());
  const auto ids = tokenize("Mix the beans", v);
  CHECK(ids.size() == 3);
  CHECK(detokenize(ids, v) == "mix the beans");
  const auto unk = tokenize("mix the purple beans with spoons", v);
  CHECK(std::count(unk.begin(), unk.end(), Vocabulary::kUnk) == 3);
  const auto two = tokenize("mix saffron the beans quickly", v);
  CHECK(std::count(two.begin(), two.end(), Vocabulary::kUnk) == 2);
  CHECK_THROWS_AS(Vocabulary({"a", "a"}), ConfigError);
}

TEST_CASE("vocabulary is built from train text with a count cutoff") {
  const auto corpus = parse_recipe1m(fixture_text(), 1);
  const Vocabulary v = Vocabulary::build(corpus, 5);
  CHECK(v.id("the") != Vocabulary::kUnk);
  CHECK(v.id("beans") != Vocabulary::kUnk);
  CHECK(v.id("cups") != Vocabulary::kUnk);  // six train records
  CHECK(v.id("fixture") == Vocabulary::kUnk);  // titles are not counted
  CHECK(Vocabulary::build(corpus, 7).id("cups") == Vocabulary::kUnk);
  for (const auto& t : v.regular_tokens()) CHECK(v.token(v.id(t)) == t);
}

TEST_CASE("tokenize round trips in-vocabulary text") {
  const auto corpus = make_synthetic_corpus(SyntheticConfig{200, 0, 0}, 3);
  const Vocabulary v = Vocabulary::build(corpus, 1);
  for (const auto& s : corpus) {
    for (const auto& sent : s.instructions) {
      std::string text;
      for (const auto& w : sent) text += (text.empty() ? "" : " ") + w;
      REQUIRE(detokenize(tokenize(text, v), v) == text);
    }
  }
}

TEST_CASE("synthetic corpus invariants") {
  SyntheticConfig cfg;
  const auto corpus = make_synthetic_corpus(cfg, 7);
  CHECK(corpus.size() == cfg.train_size + cfg.val_size + cfg.test_size);
  std::set<std::string> keys;
  for (const auto& s : corpus) {
    REQUIRE(s.planted_tree);
    CHECK(s.planted_tree->leaf_count() == s.instructions.size());
    CHECK(s.instructions.size() >= cfg.min_sentences);
    CHECK(s.instructions.size() <= cfg.max_sentences);
    CHECK(s.planted_tree->children()[0].size() <= cfg.phases);
    for (const auto& sent : s.instructions) CHECK(!sent.empty());
    const auto info = parse_image_key(s.image_key);
    REQUIRE(info);
    std::size_t total = 0;
    for (auto c : info->phase_counts) total += c;
    CHECK(total == s.instructions.size());
    keys.insert(s.image_key);
  }
  CHECK(keys.size() == corpus.size());
  CHECK(Vocabulary::build(corpus, 5).size() > 250);
}

TEST_CASE("synthetic corpus is deterministic and serialises losslessly") {
  SyntheticConfig cfg{50, 10, 10};
  const auto a = make_synthetic_corpus(cfg, 42), b = make_synthetic_corpus(cfg, 42);
  CHECK(corpus_to_json(a) == corpus_to_json(b));
  CHECK(corpus_to_json(a) != corpus_to_json(make_synthetic_corpus(cfg, 43)));
  const auto back = parse_recipe1m(corpus_to_json(a), 1);
  REQUIRE(back.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(back[i].instructions == a[i].instructions);
    CHECK(back[i].planted_tree == a[i].planted_tree);
    CHECK(back[i].image_key == a[i].image_key);
    CHECK(back[i].partition == a[i].partition);
  }
  CHECK(make_synthetic_corpus(SyntheticConfig{0, 0, 0}, 1).empty());
}

TEST_CASE("synthetic config validation") {
  SyntheticConfig cfg;
  cfg.max_sentences = 20;
  CHECK_THROWS_AS(make_synthetic_corpus(cfg, 1), ConfigError);
  cfg.max_sentences = 10;
  cfg.min_sentences = 0;
  CHECK_THROWS_AS(make_synthetic_corpus(cfg, 1), ConfigError);
}

TEST_CASE("image key parsing") {
  const auto info = parse_image_key("dish3-l2.1.0.4-000017");
  REQUIRE(info);
  CHECK(info->dish == 3);
  CHECK(info->phase_counts == std::vector<std::size_t>{2, 1, 0, 4});
  CHECK_FALSE(parse_image_key("r00"));
  CHECK_FALSE(parse_image_key("dish3-l2.1-"));
}
