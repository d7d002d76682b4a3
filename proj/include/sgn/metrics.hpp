#pragma once

#include <span>
#include <string>
#include <vector>

#include "sgn/corpus.hpp"

namespace sgn {

struct EvalReport {
  double perplexity = 0.0;
  double bleu = 0.0;      // [0, 1]
  double rouge_l = 0.0;   // [0, 1]
  double avg_length = 0.0;
  double reference_length = 0.0;  // mean ground-truth length on the same split
  double sentence_bleu = 0.0;     // mean of per-pair BLEU
  std::size_t samples = 0;
  std::string split = "test";
  std::string fingerprint;
};

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

// exp(-mean log-probability).
double perplexity(std::span<const double> logprobs);

enum class BleuMean { geometric, arithmetic };

// Corpus BLEU over n = 1..4 with clipped counts and brevity penalty; no smoothing.
double bleu(std::span<const TokenIds> candidates, std::span<const TokenIds> references,
            BleuMean mean = BleuMean::geometric);
double sentence_bleu(const TokenIds& candidate, const TokenIds& reference, BleuMean mean = BleuMean::geometric);

std::size_t lcs_length(const TokenIds& a, const TokenIds& b);
// LCS F-measure per pair, averaged over pairs.
double rouge_l(std::span<const TokenIds> candidates, std::span<const TokenIds> references);

double avg_length(std::span<const TokenIds> recipes);

struct ReportDelta {
  double perplexity = 0.0;
  double bleu = 0.0;
  double rouge_l = 0.0;
  double avg_length = 0.0;
  double length_gap_a = 0.0;  // |avg_length(a) - reference|
  double length_gap_b = 0.0;
  double closer_by = 0.0;     // length_gap_a - length_gap_b; positive when b is closer
};

// b minus a for every metric. Throws ComparabilityError on differing splits.
ReportDelta compare_reports(const EvalReport& a, const EvalReport& b);
std::string delta_to_json(const ReportDelta& d);

}  // namespace sgn
