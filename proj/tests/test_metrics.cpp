#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "sgn/errors.hpp"
#include "sgn/metrics.hpp"
#include "oracles.hpp"

using namespace sgn;

namespace {

TokenIds random_tokens(std::mt19937_64& rng, std::size_t max_len, std::size_t vocab) {
  const std::size_t n = rng() % (max_len + 1);
  TokenIds t(n);
  for (auto& x : t) x = 5 + rng() % vocab;
  return t;
}

// A mutated copy so pairs share plenty of n-grams.
TokenIds perturb(const TokenIds& t, std::mt19937_64& rng, std::size_t vocab) {
  TokenIds out;
  for (std::size_t x : t) {
    const auto r = rng() % 10;
    if (r == 0) continue;
    out.push_back(r == 1 ? 5 + rng() % vocab : x);
    if (r == 2) out.push_back(5 + rng() % vocab);
  }
  return out;
}

TokenIds words(std::initializer_list<std::size_t> w) { return TokenIds(w); }

}  // namespace

TEST_CASE("BLEU and ROUGE-L agree with reference scorers on 50 random pairs") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<TokenIds> cands, refs;
    for (int i = 0; i < 50; ++i) {
      refs.push_back(random_tokens(rng, 30, seed % 2 ? 6 : 40));
      cands.push_back(rng() % 4 == 0 ? random_tokens(rng, 30, 6) : perturb(refs.back(), rng, 6));
    }
    CHECK(std::abs(bleu(cands, refs) - testutil::oracle_bleu(cands, refs, false)) < 1e-9);
    CHECK(std::abs(bleu(cands, refs, BleuMean::arithmetic) - testutil::oracle_bleu(cands, refs, true)) < 1e-9);
    CHECK(std::abs(rouge_l(cands, refs) - testutil::oracle_rouge(cands, refs)) < 1e-9);
    for (int i = 0; i < 50; ++i) {
      REQUIRE(lcs_length(cands[i], refs[i]) == testutil::oracle_lcs(cands[i], refs[i]));
      const TokenIds c[] = {cands[i]}, r[] = {refs[i]};
      CHECK(sentence_bleu(cands[i], refs[i]) == doctest::Approx(testutil::oracle_bleu({cands[i]}, {refs[i]}, false)));
      CHECK(rouge_l(c, r) >= 0.0);
      CHECK(rouge_l(c, r) <= 1.0);
    }
    const double b = bleu(cands, refs);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
  }
}

TEST_CASE("metric examples") {
  const TokenIds abcd = words({1, 2, 3, 4}), abce = words({1, 2, 3, 5}), acbd = words({1, 3, 2, 4});
  CHECK(sentence_bleu(abcd, abcd) == 1.0);
  CHECK(sentence_bleu(abcd, abce) == 0.0);
  // The arithmetic mean keeps the lower-order matches: (3/4 + 2/3 + 1/2 + 0) / 4.
  CHECK(sentence_bleu(abcd, abce, BleuMean::arithmetic) == doctest::Approx((0.75 + 2.0 / 3 + 0.5) / 4));
  CHECK(lcs_length(abcd, acbd) == 3);
  const TokenIds c[] = {abcd}, r[] = {acbd};
  CHECK(rouge_l(c, r) == doctest::Approx(0.75));
  CHECK(rouge_l(c, c) == 1.0);
  const TokenIds other[] = {words({7, 8, 9})};
  CHECK(rouge_l(c, other) == 0.0);
  const TokenIds empty[] = {TokenIds{}};
  CHECK(rouge_l(empty, c) == 0.0);
  CHECK(bleu(empty, c) == 0.0);
  // Brevity penalty on a clipped candidate.
  const TokenIds longer = words({1, 2, 3, 4, 5, 6, 7, 8});
  const TokenIds prefix = words({1, 2, 3, 4, 5, 6});
  CHECK(sentence_bleu(prefix, longer) == doctest::Approx(std::exp(1.0 - 8.0 / 6.0)));
  CHECK_THROWS_AS(bleu(std::span<const TokenIds>{}, std::span<const TokenIds>{}), InputError);
  const TokenIds two[] = {abcd, abcd};
  CHECK_THROWS_AS(bleu(two, c), InputError);
  CHECK_THROWS_AS(rouge_l(two, c), InputError);
}

TEST_CASE("BLEU is one exactly when every candidate matches") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TokenIds> refs;
    for (int i = 0; i < 10; ++i) {
      TokenIds t = random_tokens(rng, 20, 30);
      while (t.size() < 4) t.push_back(6);
      refs.push_back(t);
    }
    CHECK(bleu(refs, refs) == doctest::Approx(1.0).epsilon(1e-12));
    auto cands = refs;
    cands[rng() % 10][0] = 1000;
    CHECK(bleu(cands, refs) < 1.0);
  }
}

TEST_CASE("metrics do not depend on corpus order") {
  std::mt19937_64 rng(6);
  std::vector<TokenIds> cands, refs;
  for (int i = 0; i < 40; ++i) {
    refs.push_back(random_tokens(rng, 25, 8));
    cands.push_back(perturb(refs.back(), rng, 8));
  }
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<TokenIds> c2, r2;
  for (auto p : perm) {
    c2.push_back(cands[p]);
    r2.push_back(refs[p]);
  }
  CHECK(bleu(cands, refs) == doctest::Approx(bleu(c2, r2)).epsilon(1e-14));
  CHECK(rouge_l(cands, refs) == doctest::Approx(rouge_l(c2, r2)).epsilon(1e-14));
  CHECK(avg_length(cands) == doctest::Approx(avg_length(c2)).epsilon(1e-14));
}

TEST_CASE("perplexity") {
  const std::vector<double> uniform(500, -std::log(100.0));
  CHECK(std::abs(perplexity(uniform) - 100.0) < 1e-6);
  CHECK(perplexity(std::vector<double>(10, 0.0)) == 1.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-6, 0);
  std::vector<double> lp(1000);
  for (double& x : lp) x = u(rng);
  double s = 0;
  for (double x : lp) s += x;
  CHECK(std::abs(perplexity(lp) - std::exp(-s / 1000)) < 1e-9);
  CHECK_THROWS_AS(perplexity(std::vector<double>{}), InputError);
  CHECK_THROWS_AS(perplexity(std::vector<double>{-1.0, NAN}), InputError);
}

TEST_CASE("average length") {
  const TokenIds ten(10, 5);
  CHECK(avg_length(std::span(&ten, 1)) == 10.0);
  const TokenIds pair[] = {TokenIds(100, 5), TokenIds(120, 5)};
  CHECK(avg_length(pair) == 110.0);
  CHECK_THROWS_AS(avg_length(std::span<const TokenIds>{}), InputError);
}

TEST_CASE("report comparison on the published rows") {
  EvalReport base, sgn;
  base.perplexity = 7.52;
  base.bleu = 0.0929;
  base.rouge_l = 0.348;
  base.avg_length = 66.9;
  base.reference_length = 116.5;
  sgn = base;
  sgn.perplexity = 6.67;
  sgn.bleu = 0.1275;
  sgn.rouge_l = 0.369;
  sgn.avg_length = 112.5;
  const ReportDelta d = compare_reports(base, sgn);
  CHECK(d.perplexity == doctest::Approx(-0.85));
  CHECK(d.bleu * 100 == doctest::Approx(3.46));
  CHECK(d.rouge_l * 100 == doctest::Approx(2.1));
  CHECK(d.closer_by == doctest::Approx(45.6));
  CHECK(d.length_gap_a == doctest::Approx(49.6));
  CHECK(d.length_gap_b == doctest::Approx(4.0));

  const ReportDelta zero = compare_reports(sgn, sgn);
  CHECK(zero.perplexity == 0.0);
  CHECK(zero.bleu == 0.0);
  CHECK(zero.rouge_l == 0.0);
  CHECK(zero.avg_length == 0.0);
  CHECK(zero.closer_by == 0.0);

  EvalReport val = sgn;
  val.split = "val";
  CHECK_THROWS_AS(compare_reports(base, val), ComparabilityError);
}

TEST_CASE("reports round trip through JSON") {
  EvalReport r;
  r.perplexity = 3.25;
  r.bleu = 0.125;
  r.rouge_l = 0.5;
  r.avg_length = 41.5;
  r.reference_length = 40.25;
  r.sentence_bleu = 0.0625;
  r.samples = 200;
  r.fingerprint = "abc123";
  const EvalReport back = report_from_json(report_to_json(r));
  CHECK(back.perplexity == r.perplexity);
  CHECK(back.bleu == r.bleu);
  CHECK(back.rouge_l == r.rouge_l);
  CHECK(back.avg_length == r.avg_length);
  CHECK(back.reference_length == r.reference_length);
  CHECK(back.sentence_bleu == r.sentence_bleu);
  CHECK(back.samples == 200);
  CHECK(back.split == "test");
  CHECK(back.fingerprint == "abc123");
  CHECK_THROWS_AS(report_from_json("{not json"), ParseError);
  CHECK_THROWS_AS(report_from_json("{\"bleu\": 0.1}"), SchemaError);
}
