#pragma once

// End-to-end in-context evaluation: demonstration selectors, prediction,
// metric aggregation, and the analysis procedures built on top of them.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "genicl/corpus.hpp"
#include "genicl/lm.hpp"
#include "genicl/selector.hpp"
#include "genicl/shortlist.hpp"

namespace genicl {

/// Picks K demonstrations for a query, most relevant first.
class DemoSelector {
 public:
  virtual ~DemoSelector() = default;
  virtual std::string id() const = 0;
  virtual std::vector<Example> select(const Example& query, int K) const = 0;
  /// Whether the selector reads the trained latent prompt.
  virtual bool uses_latent() const { return false; }
};

class ZeroShotSelector : public DemoSelector {
 public:
  std::string id() const override { return "zero_shot"; }
  std::vector<Example> select(const Example&, int) const override { return {}; }
};

/// Uniform sample without replacement; the draw depends only on (seed, query id).
class RandomSelector : public DemoSelector {
 public:
  RandomSelector(const DemonstrationPool& pool, std::uint64_t seed) : pool_(&pool), seed_(seed) {}
  std::string id() const override { return "random"; }
  std::vector<Example> select(const Example& query, int K) const override;

 private:
  const DemonstrationPool* pool_;
  std::uint64_t seed_;
};

class Bm25Selector : public DemoSelector {
 public:
  Bm25Selector(const DemonstrationPool& pool, TaskTemplate tmpl, BM25Params params = {})
      : pool_(&pool), tmpl_(std::move(tmpl)), params_(params) {}
  std::string id() const override { return "bm25"; }
  std::vector<Example> select(const Example& query, int K) const override;

 private:
  const DemonstrationPool* pool_;
  TaskTemplate tmpl_;
  BM25Params params_;
};

/// Cosine top-K over an embedding index (the in-repo LM embedder or a trained one).
class EmbedSelector : public DemoSelector {
 public:
  EmbedSelector(const DemonstrationPool& pool, const EmbeddingIndex& index, TaskTemplate tmpl,
                std::string id = "embed")
      : pool_(&pool), index_(&index), tmpl_(std::move(tmpl)), id_(std::move(id)) {}
  std::string id() const override { return id_; }
  std::vector<Example> select(const Example& query, int K) const override;

 private:
  const DemonstrationPool* pool_;
  const EmbeddingIndex* index_;
  TaskTemplate tmpl_;
  std::string id_;
};

class GenICLSelector : public DemoSelector {
 public:
  GenICLSelector(const DemonstrationPool& pool, const Model& model, LatentPrompt latent, const EmbeddingIndex& index,
                 int shortlist_n, TaskTemplate tmpl, OrderPolicy order = OrderPolicy::descending,
                 std::uint64_t shuffle_seed = 0)
      : pool_(&pool), model_(&model), latent_(std::move(latent)), index_(&index), shortlist_n_(shortlist_n),
        tmpl_(std::move(tmpl)), order_(order), shuffle_seed_(shuffle_seed) {}
  std::string id() const override { return "genicl"; }
  std::vector<Example> select(const Example& query, int K) const override;
  Selection select_scored(const Example& query, int K) const;
  bool uses_latent() const override { return true; }
  GenICLSelector with_order(OrderPolicy order, std::uint64_t shuffle_seed = 0) const;

 private:
  const DemonstrationPool* pool_;
  const Model* model_;
  LatentPrompt latent_;
  const EmbeddingIndex* index_;
  int shortlist_n_;
  TaskTemplate tmpl_;
  OrderPolicy order_;
  std::uint64_t shuffle_seed_;
};

struct EvalOptions {
  int K = 8;
  int max_new_tokens = 16;
  std::uint64_t seed = 0;
};

struct QueryRecord {
  std::string query_id;
  std::string prediction;
  std::string reference;
  double value = 0.0;
  std::vector<std::string> demo_ids;
  /// Demonstrations dropped from the front so the prompt fits the window.
  int dropped_demos = 0;
};

struct EvalReport {
  std::string task_id;
  std::string selector_id;
  int K = 0;
  std::string metric;
  double score = 0.0;
  std::vector<QueryRecord> records;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  /// Corpus-level binary F1 (positive = first option), filled for f1 tasks with two options.
  std::optional<double> corpus_binary_f1;
};

/// Option tasks: argmax over options of log P(option | prompt), first option on ties.
/// Generation: greedy decoding, cut at the demo separator and trimmed.
std::string predict(const Model& model, std::span<const Example> demos, const Example& query, const TaskDataset& task,
                    int max_new_tokens, int* dropped = nullptr);

EvalReport evaluate_selector(const DemoSelector& selector, const TaskDataset& task, const Model& model,
                             const EvalOptions& options = {});

/// Recomputes every record from its stored demo ids (the selection manifest).
EvalReport replay_report(const EvalReport& report, const TaskDataset& task, const DemonstrationPool& pool,
                         const Model& model, int max_new_tokens = 16);

/// Fraction of queries whose first selected demonstration shares the query's key.
double top1_hit_rate(const DemoSelector& selector, std::span<const Example> queries);

struct RatioBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double percentage = 0.0;
};

struct UsefulRatioReport {
  std::vector<std::string> hard_query_ids;
  std::vector<double> ratios;
  std::vector<RatioBin> histogram;
  bool no_hard_queries = false;
};

/// Hard queries are those answered wrongly with the top-8 embedding-ranked
/// demos. For each, sample_n pool demos are drawn without replacement and a
/// demo counts as useful when it alone makes the prediction correct.
/// `edges` must start at 0, end at 1 and increase; the last bin is closed.
UsefulRatioReport useful_ratio_analysis(const TaskDataset& task, const DemonstrationPool& pool, const Model& model,
                                        const EmbeddingIndex& index, int sample_n, std::span<const double> edges,
                                        std::uint64_t seed, int max_new_tokens = 16);

struct Distribution {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0;
  std::size_t count = 0;
};

/// Linear-interpolation quantiles.
Distribution summarize(std::span<const double> values);

struct GroundTruthProbRow {
  std::string selector_id;
  std::vector<double> logprobs;
  Distribution summary;
};

/// log P(target | K selected demos, query) per query and selector.
std::vector<GroundTruthProbRow> ground_truth_prob_report(std::span<const DemoSelector* const> selectors,
                                                         const TaskDataset& task, const Model& model, int K);

struct OrderRow {
  OrderPolicy policy;
  std::uint64_t seed = 0;
  double score = 0.0;
};

struct OrderSensitivity {
  std::vector<OrderRow> rows;
  /// Selected sets (as sorted id lists) agreed across all policies for every query.
  bool sets_identical = true;
  double spread = 0.0;
};

OrderSensitivity order_sensitivity(const GenICLSelector& base, const TaskDataset& task, const Model& model,
                                   std::span<const OrderPolicy> policies, std::span<const std::uint64_t> seeds,
                                   const EvalOptions& options = {});

/// Tab-separated report export: one line per query plus a header.
std::string report_tsv(const EvalReport& report);
std::string report_json(const EvalReport& report);
/// Inverse of report_json; throws SchemaError on malformed input.
EvalReport report_from_json(std::string_view text);

}  // namespace genicl
