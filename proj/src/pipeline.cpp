#include "genicl/pipeline.hpp"

#include "genicl/errors.hpp"

namespace genicl {

std::vector<TrainQuery> build_train_queries(const TaskDataset& train, const DemonstrationPool& pool,
                                            const Model& scorer, const EmbeddingIndex& index,
                                            const PipelineConfig& cfg, std::vector<ScoredQuery>* scores) {
  std::vector<TrainQuery> out;
  out.reserve(train.examples.size());
  for (const auto& q : train.examples) {
    const auto shortlist = index.rank(index_text(q, train.template_), cfg.shortlist_n).items;
    auto pairs = build_demo_pairs(q, shortlist, pool, scorer, train.template_, cfg.pairs);
    if (scores) scores->push_back(ScoredQuery{q, pairs.scores});
    out.push_back(TrainQuery{q, std::move(pairs.pairs)});
  }
  return out;
}

GenICLRun train_genicl(const Model& pretrained, std::span<const TrainQuery> queries, const TaskDataset& train_set,
                       const PipelineConfig& cfg) {
  GenICLRun run;
  run.model = pretrained;
  run.latent = init_latent(cfg.latent_m, run.model, cfg.latent_seed);
  run.init_hash = run.model.content_hash();
  const auto reference = snapshot_reference(run.model);
  run.result = train<float>(queries, train_set, run.model, run.latent, *reference, cfg.train);
  return run;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_nonpreferred: return "no_nonpreferred";
    case Variant::no_answer_loss: return "no_answer_loss";
    case Variant::no_demo_loss: return "no_demo_loss";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  for (auto v : {Variant::full, Variant::no_nonpreferred, Variant::no_answer_loss, Variant::no_demo_loss}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown ablation variant '" + std::string(s) + "'");
}

TrainConfig apply_variant(TrainConfig cfg, Variant v) {
  switch (v) {
    case Variant::full: break;
    case Variant::no_nonpreferred: cfg.lambda_l = 0.0; break;
    case Variant::no_answer_loss: cfg.use_answer_loss = false; break;
    case Variant::no_demo_loss: cfg.use_demo_loss = false; break;
  }
  return cfg;
}

AblationRow run_variant(const Model& pretrained, std::span<const TrainQuery> queries, const TaskDataset& train,
                        const TaskDataset& test, const DemonstrationPool& pool, const EmbeddingIndex& index,
                        const PipelineConfig& cfg, Variant v, const EvalOptions& eval) {
  PipelineConfig vcfg = cfg;
  vcfg.train = apply_variant(cfg.train, v);
  const auto run = train_genicl(pretrained, queries, train, vcfg);
  const GenICLSelector sel(pool, run.model, run.latent, index, cfg.shortlist_n, test.template_);

  AblationRow row;
  row.variant = v;
  row.score = evaluate_selector(sel, test, pretrained, eval).score;
  const bool keyed = !test.examples.empty() && test.examples.front().metadata.count("key") > 0;
  if (keyed) row.top1_hit_rate = top1_hit_rate(sel, test.examples);
  row.demo_updates = run.result.demo_updates;
  row.answer_updates = run.result.answer_updates;
  row.init_hash = run.init_hash;
  return row;
}

std::vector<AblationRow> ablation_suite(const Model& pretrained, std::span<const TrainQuery> queries,
                                        const TaskDataset& train, const TaskDataset& test,
                                        const DemonstrationPool& pool, const EmbeddingIndex& index,
                                        const PipelineConfig& cfg, std::span<const Variant> variants,
                                        const EvalOptions& eval) {
  std::vector<AblationRow> rows;
  for (const auto v : variants) rows.push_back(run_variant(pretrained, queries, train, test, pool, index, cfg, v, eval));
  for (const auto& r : rows) {
    if (r.init_hash != rows.front().init_hash) {
      throw TrainingError("ablation variants did not share the same initialization");
    }
  }
  return rows;
}

}  // namespace genicl
