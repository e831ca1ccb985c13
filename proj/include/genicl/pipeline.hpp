#pragma once

// Stage composition shared by the CLI and the acceptance suite: preference
// data from a frozen LM, latent training, and ablation runs.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "genicl/contrastive.hpp"
#include "genicl/eval.hpp"
#include "genicl/kto.hpp"
#include "genicl/preference.hpp"
#include "genicl/shortlist.hpp"

namespace genicl {

struct PipelineConfig {
  TrainConfig train;
  PairOptions pairs;
  int shortlist_n = 64;
  int latent_m = 10;
  std::uint64_t latent_seed = 0;
};

/// Shortlists every query with `index` and builds its preference pairs under
/// the frozen scoring model.
std::vector<TrainQuery> build_train_queries(const TaskDataset& train, const DemonstrationPool& pool,
                                            const Model& scorer, const EmbeddingIndex& index,
                                            const PipelineConfig& cfg, std::vector<ScoredQuery>* scores = nullptr);

struct GenICLRun {
  Model model;
  LatentPrompt latent;
  TrainResult result;
  /// Content hash of the model right after the latent was installed.
  std::uint64_t init_hash = 0;
};

/// Installs a fresh latent on a copy of `pretrained`, snapshots the reference
/// and runs the alternating optimization.
GenICLRun train_genicl(const Model& pretrained, std::span<const TrainQuery> queries, const TaskDataset& train,
                       const PipelineConfig& cfg);

enum class Variant { full, no_nonpreferred, no_answer_loss, no_demo_loss };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);
TrainConfig apply_variant(TrainConfig cfg, Variant v);

struct AblationRow {
  Variant variant;
  double score = 0.0;
  /// Fraction of test queries whose top-1 pick is oracle-useful (keyed tasks only).
  std::optional<double> top1_hit_rate;
  int demo_updates = 0;
  int answer_updates = 0;
  std::uint64_t init_hash = 0;
};

AblationRow run_variant(const Model& pretrained, std::span<const TrainQuery> queries, const TaskDataset& train,
                        const TaskDataset& test, const DemonstrationPool& pool, const EmbeddingIndex& index,
                        const PipelineConfig& cfg, Variant v, const EvalOptions& eval);

std::vector<AblationRow> ablation_suite(const Model& pretrained, std::span<const TrainQuery> queries,
                                        const TaskDataset& train, const TaskDataset& test,
                                        const DemonstrationPool& pool, const EmbeddingIndex& index,
                                        const PipelineConfig& cfg, std::span<const Variant> variants,
                                        const EvalOptions& eval);

}  // namespace genicl
