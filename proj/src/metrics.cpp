#include "sgn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "sgn/errors.hpp"

namespace sgn {

using json = nlohmann::json;

std::string report_to_json(const EvalReport& r) {
  json j;
  j["perplexity"] = r.perplexity;
  j["bleu"] = r.bleu;
  j["rouge_l"] = r.rouge_l;
  j["avg_length"] = r.avg_length;
  j["reference_length"] = r.reference_length;
  j["sentence_bleu"] = r.sentence_bleu;
  j["samples"] = r.samples;
  j["split"] = r.split;
  j["fingerprint"] = r.fingerprint;
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed report: ") + e.what(), e.byte);
  }
  EvalReport r;
  try {
    r.perplexity = j.at("perplexity").get<double>();
    r.bleu = j.at("bleu").get<double>();
    r.rouge_l = j.at("rouge_l").get<double>();
    r.avg_length = j.at("avg_length").get<double>();
    r.reference_length = j.value("reference_length", 0.0);
    r.sentence_bleu = j.value("sentence_bleu", 0.0);
    r.samples = j.at("samples").get<std::size_t>();
    r.split = j.value("split", std::string("test"));
    r.fingerprint = j.value("fingerprint", std::string());
  } catch (const json::exception& e) {
    throw SchemaError(std::string("report is missing a field: ") + e.what());
  }
  return r;
}

double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw InputError("perplexity of an empty corpus");
  double s = 0.0;
  for (double lp : logprobs) {
    if (!std::isfinite(lp)) throw InputError("non-finite log-probability");
    s += lp;
  }
  return std::exp(-s / static_cast<double>(logprobs.size()));
}

namespace {

using NGram = std::vector<std::size_t>;

std::map<NGram, std::size_t> ngram_counts(const TokenIds& t, std::size_t n) {
  std::map<NGram, std::size_t> out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[NGram(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                             t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

struct BleuStats {
  double matches[4] = {0, 0, 0, 0};
  double totals[4] = {0, 0, 0, 0};
  double cand_len = 0, ref_len = 0;
};

void accumulate(BleuStats& s, const TokenIds& cand, const TokenIds& ref) {
  s.cand_len += static_cast<double>(cand.size());
  s.ref_len += static_cast<double>(ref.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto c = ngram_counts(cand, n);
    const auto r = ngram_counts(ref, n);
    for (const auto& [g, k] : c) {
      auto it = r.find(g);
      if (it != r.end()) s.matches[n - 1] += static_cast<double>(std::min(k, it->second));
      s.totals[n - 1] += static_cast<double>(k);
    }
  }
}

double score(const BleuStats& s, BleuMean mean) {
  if (s.cand_len == 0) return 0.0;
  double p[4];
  for (int n = 0; n < 4; ++n) p[n] = s.totals[n] > 0 ? s.matches[n] / s.totals[n] : 0.0;
  double combined;
  if (mean == BleuMean::geometric) {
    if (std::any_of(p, p + 4, [](double x) { return x == 0.0; })) return 0.0;
    double logsum = 0.0;
    for (double x : p) logsum += std::log(x);
    combined = std::exp(logsum / 4.0);
  } else {
    combined = (p[0] + p[1] + p[2] + p[3]) / 4.0;
  }
  const double bp = s.cand_len >= s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.cand_len);
  return bp * combined;
}

void check_pairs(std::size_t c, std::size_t r) {
  if (c == 0) throw InputError("no candidates to score");
  if (c != r) throw InputError("candidate and reference counts differ");
}

}  // namespace

double bleu(std::span<const TokenIds> candidates, std::span<const TokenIds> references, BleuMean mean) {
  check_pairs(candidates.size(), references.size());
  BleuStats s;
  for (std::size_t i = 0; i < candidates.size(); ++i) accumulate(s, candidates[i], references[i]);
  return score(s, mean);
}

double sentence_bleu(const TokenIds& candidate, const TokenIds& reference, BleuMean mean) {
  BleuStats s;
  accumulate(s, candidate, reference);
  return score(s, mean);
}

std::size_t lcs_length(const TokenIds& a, const TokenIds& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const TokenIds> candidates, std::span<const TokenIds> references) {
  check_pairs(candidates.size(), references.size());
  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& r = references[i];
    if (c.empty() || r.empty()) continue;
    const double l = static_cast<double>(lcs_length(c, r));
    if (l == 0) continue;
    const double p = l / static_cast<double>(c.size());
    const double rec = l / static_cast<double>(r.size());
    total += 2 * p * rec / (p + rec);
  }
  return total / static_cast<double>(candidates.size());
}

double avg_length(std::span<const TokenIds> recipes) {
  if (recipes.empty()) throw InputError("average length of no recipes");
  double s = 0.0;
  for (const auto& r : recipes) s += static_cast<double>(r.size());
  return s / static_cast<double>(recipes.size());
}

ReportDelta compare_reports(const EvalReport& a, const EvalReport& b) {
  if (a.split != b.split || a.samples != b.samples) {
    throw ComparabilityError("reports cover different evaluation splits (" + a.split + "/" +
                             std::to_string(a.samples) + " vs " + b.split + "/" + std::to_string(b.samples) + ")");
  }
  ReportDelta d;
  d.perplexity = b.perplexity - a.perplexity;
  d.bleu = b.bleu - a.bleu;
  d.rouge_l = b.rouge_l - a.rouge_l;
  d.avg_length = b.avg_length - a.avg_length;
  const double ref = b.reference_length != 0.0 ? b.reference_length : a.reference_length;
  d.length_gap_a = std::abs(a.avg_length - ref);
  d.length_gap_b = std::abs(b.avg_length - ref);
  d.closer_by = d.length_gap_a - d.length_gap_b;
  return d;
}

std::string delta_to_json(const ReportDelta& d) {
  json j;
  j["delta_perplexity"] = d.perplexity;
  j["delta_bleu"] = d.bleu;
  j["delta_rouge_l"] = d.rouge_l;
  j["delta_avg_length"] = d.avg_length;
  j["length_gap_a"] = d.length_gap_a;
  j["length_gap_b"] = d.length_gap_b;
  j["closer_by"] = d.closer_by;
  return j.dump(2);
}

}  // namespace sgn
