#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "genicl/corpus.hpp"

namespace genicl {

/// Whitespace tokenization shared by every text metric.
std::vector<std::string> whitespace_tokens(std::string_view s);

/// Length of the longest common subsequence of two token sequences.
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct RougeL {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
  std::size_t lcs = 0;
};

/// Sentence-level ROUGE-L with the balanced harmonic mean.
RougeL rouge_l(std::string_view prediction, std::string_view reference);

/// Trimmed, case-sensitive string equality.
double exact_match(std::string_view prediction, std::string_view reference);

/// Verbalized-label match: trimmed and case-insensitive.
double label_match(std::string_view prediction, std::string_view reference);

/// Token-overlap F1 of one prediction; for single-word labels it is the label match.
double token_f1(std::string_view prediction, std::string_view reference);

struct BinaryCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
};

BinaryCounts binary_counts(std::span<const std::string> predictions, std::span<const std::string> references,
                           std::string_view positive_label);
/// 2tp / (2tp + fp + fn); 0 when the positive class never appears.
double binary_f1(const BinaryCounts& c);
double binary_f1(std::span<const std::string> predictions, std::span<const std::string> references,
                 std::string_view positive_label);

/// Mean label match over a batch.
double accuracy(std::span<const std::string> predictions, std::span<const std::string> references);

/// Per-example score in [0,1]. f1 is token F1 per example; corpus-level binary
/// F1 is binary_f1().
double compute_metric(MetricKind metric, std::string_view prediction, std::string_view reference);
/// Name-based overload; throws ConfigError for unknown metric names.
double compute_metric(std::string_view metric, std::string_view prediction, std::string_view reference);

}  // namespace genicl
