#include "genicl/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

namespace genicl {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fold(std::string_view s) {
  std::string out(trim(s));
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

std::vector<std::string> whitespace_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeL rouge_l(std::string_view prediction, std::string_view reference) {
  const auto p = whitespace_tokens(prediction);
  const auto r = whitespace_tokens(reference);
  RougeL out;
  out.lcs = lcs_length(p, r);
  if (out.lcs == 0) return out;
  out.precision = static_cast<double>(out.lcs) / static_cast<double>(p.size());
  out.recall = static_cast<double>(out.lcs) / static_cast<double>(r.size());
  out.f = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

double exact_match(std::string_view prediction, std::string_view reference) {
  return trim(prediction) == trim(reference) ? 1.0 : 0.0;
}

double label_match(std::string_view prediction, std::string_view reference) {
  return fold(prediction) == fold(reference) ? 1.0 : 0.0;
}

double token_f1(std::string_view prediction, std::string_view reference) {
  const auto p = whitespace_tokens(fold(prediction));
  const auto r = whitespace_tokens(fold(reference));
  if (p.empty() || r.empty()) return p.empty() && r.empty() ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : r) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double prec = static_cast<double>(common) / static_cast<double>(p.size());
  const double rec = static_cast<double>(common) / static_cast<double>(r.size());
  return 2.0 * prec * rec / (prec + rec);
}

BinaryCounts binary_counts(std::span<const std::string> predictions, std::span<const std::string> references,
                           std::string_view positive_label) {
  BinaryCounts c;
  const std::size_t n = std::min(predictions.size(), references.size());
  for (std::size_t i = 0; i < n; ++i) {
    const bool pred_pos = label_match(predictions[i], positive_label) == 1.0;
    const bool ref_pos = label_match(references[i], positive_label) == 1.0;
    if (pred_pos && ref_pos) ++c.tp;
    else if (pred_pos) ++c.fp;
    else if (ref_pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double binary_f1(const BinaryCounts& c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double binary_f1(std::span<const std::string> predictions, std::span<const std::string> references,
                 std::string_view positive_label) {
  return binary_f1(binary_counts(predictions, references, positive_label));
}

double accuracy(std::span<const std::string> predictions, std::span<const std::string> references) {
  const std::size_t n = std::min(predictions.size(), references.size());
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += label_match(predictions[i], references[i]);
  return s / static_cast<double>(n);
}

double compute_metric(MetricKind metric, std::string_view prediction, std::string_view reference) {
  switch (metric) {
    case MetricKind::accuracy: return label_match(prediction, reference);
    case MetricKind::exact_match: return exact_match(prediction, reference);
    case MetricKind::rouge_l: return rouge_l(prediction, reference).f;
    case MetricKind::f1: return token_f1(prediction, reference);
  }
  return 0.0;
}

double compute_metric(std::string_view metric, std::string_view prediction, std::string_view reference) {
  return compute_metric(parse_metric(metric), prediction, reference);
}

}  // namespace genicl
