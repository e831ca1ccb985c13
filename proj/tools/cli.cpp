#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <sstream>

#include "genicl/checkpoint.hpp"
#include "genicl/config.hpp"
#include "genicl/errors.hpp"
#include "genicl/hash.hpp"
#include "genicl/kernels.hpp"
#include "genicl/score_cache.hpp"

namespace genicl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string command;
  std::optional<std::string> config, task, pool, checkpoint, out, corpus;
  std::optional<std::uint64_t> seed;
  std::optional<int> k, steps;
  std::string selector = "genicl";
  std::vector<std::string> variants;
  std::vector<std::string> reports;
  bool deterministic = false;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

fs::path require(const std::optional<std::string>& p, const char* flag, const std::string& cmd) {
  if (!p) throw ConfigError(cmd + " requires " + flag);
  return fs::path(*p);
}

struct Retrieval {
  FrozenModel<float> model;
  std::unique_ptr<LmEmbedder> embedder;
  std::unique_ptr<EmbeddingIndex> index;
};

Retrieval make_retrieval(const Model& base, const DemonstrationPool& pool, const TaskTemplate& tmpl,
                         std::vector<double> projection = {}) {
  Retrieval r;
  r.model = std::make_shared<const Model>(base);
  r.embedder = std::make_unique<LmEmbedder>(r.model, std::move(projection));
  r.index = std::make_unique<EmbeddingIndex>(pool, *r.embedder, tmpl);
  return r;
}

class Runner {
 public:
  Runner(Options opt, std::ostream& out) : opt_(std::move(opt)), out_(out) {
    cfg_ = opt_.config ? load_run_config(*opt_.config) : RunConfig::defaults();
    if (opt_.seed) {
      cfg_.seed = *opt_.seed;
      cfg_.propagate_seed();
    }
    if (opt_.k) {
      cfg_.selection.K = *opt_.k;
      cfg_.eval.K = *opt_.k;
    }
    if (opt_.steps) {
      if (opt_.command == "pretrain") {
        cfg_.pretrain.steps = *opt_.steps;
      } else {
        cfg_.pipeline.train.steps = *opt_.steps;
      }
    }
    cfg_.eval.K = cfg_.selection.K;
    if (opt_.deterministic) kernels::set_backend(kernels::Backend::scalar);
  }

  void run() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& c = opt_.command;
    if (c == "synth") synth();
    else if (c == "pretrain") pretrain();
    else if (c == "score") score();
    else if (c == "pairs") pairs();
    else if (c == "train") train_cmd();
    else if (c == "select") select();
    else if (c == "eval") eval();
    else if (c == "analyze") analyze();
    else if (c == "ablate") ablate();
    else if (c == "report") report();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(secs);
  }

 private:
  // ---- inputs ----

  TaskBundle& bundle() {
    if (!bundle_) {
      const auto pool = opt_.pool ? std::optional<fs::path>(*opt_.pool) : std::nullopt;
      bundle_ = load_task_bundle(require(opt_.task, "--task", opt_.command), pool);
      for (const auto& w : bundle_->warnings) std::cerr << "warning: " << w << "\n";
      hashes_["train"] = hex64(dataset_hash(bundle_->train));
      hashes_["test"] = hex64(dataset_hash(bundle_->test));
      hashes_["pool"] = hex64(bundle_->pool.content_hash());
    }
    return *bundle_;
  }

  Checkpoint<float>& checkpoint() {
    if (!ck_) {
      const auto path = require(opt_.checkpoint, "--checkpoint", opt_.command);
      ck_ = load_checkpoint<float>(path);
      base_ = strip_latent(ck_->model);
      hashes_["checkpoint"] = hex64(file_hash(path));
    }
    return *ck_;
  }

  const Model& base() {
    checkpoint();
    return *base_;
  }

  const LatentPrompt& latent() {
    const auto& lat = checkpoint().latent;
    if (lat.length() == 0) {
      throw ConfigError(opt_.command + ": checkpoint carries no trained latent prompt (run `train` first)");
    }
    return lat;
  }

  Retrieval& retrieval() {
    if (!retrieval_) retrieval_ = make_retrieval(base(), bundle().pool, bundle().train.template_);
    return *retrieval_;
  }

  ScoreCache& cache() {
    if (!cache_) {
      const auto dir = ScoreCache::default_dir();
      fs::create_directories(dir);
      cache_.emplace(dir / "scores.tsv");
    }
    return *cache_;
  }

  std::vector<TrainQuery> train_queries(std::vector<ScoredQuery>* scores = nullptr) {
    auto pc = cfg_.pipeline;
    pc.pairs.cache = &cache();
    return build_train_queries(bundle().train, bundle().pool, base(), *retrieval().index, pc, scores);
  }

  fs::path out_path() { return require(opt_.out, "--out", opt_.command); }

  void emit(const fs::path& path, const std::string& text) {
    write_file(path, text);
    outputs_.push_back(path.string());
  }

  // ---- subcommands ----

  void synth() {
    const auto dir = out_path();
    const auto task = synth_task_generate(cfg_.synthetic);
    const auto desc = save_task_bundle(dir, task.train, task.test, task.pool);
    for (const char* f : {"train.jsonl", "test.jsonl", "pool.jsonl"}) outputs_.push_back((dir / f).string());
    outputs_.push_back(desc.string());
    out_ << desc.string() << "\n";
  }

  void pretrain() {
    const auto path = out_path();
    std::vector<std::string> lines;
    if (opt_.corpus) {
      std::ifstream in(*opt_.corpus);
      if (!in) throw ValidationError("cannot open corpus " + *opt_.corpus);
      for (std::string line; std::getline(in, line);) {
        if (!line.empty()) lines.push_back(line);
      }
      hashes_["corpus"] = hex64(file_hash(*opt_.corpus));
    } else {
      lines = copy_corpus(cfg_.corpus);
    }
    const auto res = pretrain_lm(lines, cfg_.pretrain);
    save_checkpoint(path, res.model);
    outputs_.push_back(path.string());
    out_ << "heldout_loss " << fmt6(res.initial_heldout_loss) << " -> " << fmt6(res.final_heldout_loss)
         << "  truncated_lines " << res.truncated_lines << "\n";
  }

  void score() {
    const auto path = out_path();
    std::vector<ScoredQuery> scores;
    train_queries(&scores);
    std::string text = "query_id\tdemo_id\tlogprob\ttokens\n";
    for (const auto& sq : scores) {
      for (const auto& [id, lp] : sq.scores) {
        text += sq.query.id + "\t" + id + "\t" + fmt(lp.value) + "\t" + std::to_string(lp.token_count) + "\n";
      }
    }
    emit(path, text);
  }

  void pairs() {
    const auto path = out_path();
    const auto queries = train_queries();
    std::string text;
    std::size_t n = 0;
    for (const auto& tq : queries) {
      for (const auto& p : tq.pairs) {
        text += json{{"query_id", p.query.id},
                     {"preferred", p.preferred.id},
                     {"non_preferred", p.non_preferred.id},
                     {"preferred_logprob", p.preferred_score.value},
                     {"non_preferred_logprob", p.non_preferred_score.value}}
                    .dump() +
                "\n";
        ++n;
      }
    }
    emit(path, text);
    out_ << n << " pairs over " << queries.size() << " queries\n";
  }

  void train_cmd() {
    const auto path = out_path();
    if (cfg_.pipeline.train.steps == 0) {
      // No optimization requested: the output is the input checkpoint.
      save_checkpoint(path, checkpoint().model);
      outputs_.push_back(path.string());
      return;
    }
    const auto queries = train_queries();
    std::string log;
    auto pc = cfg_.pipeline;
    const auto run = train_genicl(base(), queries, bundle().train, pc);
    for (const auto& rec : run.result.log) {
      json j{{"step", rec.step}, {"lr_demo", rec.lr_demo}, {"lr_answer", rec.lr_answer}, {"total", rec.total}};
      if (rec.demo) j["demo_loss"] = rec.demo->loss_value, j["demo_baseline"] = rec.demo->ref_baseline;
      if (rec.answer) j["answer_loss"] = rec.answer->loss_value, j["answer_baseline"] = rec.answer->ref_baseline;
      log += j.dump() + "\n";
    }
    save_checkpoint(path, run.model);
    outputs_.push_back(path.string());
    emit(fs::path(path.string() + ".log.jsonl"), log);
    out_ << "demo_updates " << run.result.demo_updates << "  answer_updates " << run.result.answer_updates
         << "  skipped_batches " << run.result.skipped_batches << "\n";
  }

  void select() {
    const auto path = out_path();
    const auto& lat = latent();
    const auto& b = bundle();
    std::string text;
    for (const auto& q : b.test.examples) {
      const auto sel = select_demonstrations(q, b.pool, checkpoint().model, lat, *retrieval().index,
                                             cfg_.pipeline.shortlist_n, cfg_.selection, b.test.template_);
      std::vector<std::string> ids;
      for (const auto& d : sel.demos) ids.push_back(d.id);
      text += json{{"query_id", q.id}, {"demo_ids", ids}, {"scores", sel.scores}}.dump() + "\n";
    }
    emit(path, text);
  }

  std::unique_ptr<DemoSelector> make_selector(const std::string& name) {
    const auto& b = bundle();
    const auto& tmpl = b.test.template_;
    if (name == "zero_shot") return std::make_unique<ZeroShotSelector>();
    if (name == "random") return std::make_unique<RandomSelector>(b.pool, cfg_.eval.seed);
    if (name == "bm25") return std::make_unique<Bm25Selector>(b.pool, tmpl);
    if (name == "embed") return std::make_unique<EmbedSelector>(b.pool, *retrieval().index, tmpl);
    if (name == "contrastive") {
      std::vector<ScoredQuery> scores;
      train_queries(&scores);
      const auto res = contrastive_baseline_train(scores, b.pool, *retrieval().embedder, tmpl, cfg_.contrastive);
      contrastive_ = make_retrieval(base(), b.pool, tmpl, res.projection);
      return std::make_unique<EmbedSelector>(b.pool, *contrastive_->index, tmpl, "contrastive");
    }
    if (name == "genicl") {
      return std::make_unique<GenICLSelector>(b.pool, checkpoint().model, latent(), *retrieval().index,
                                              cfg_.pipeline.shortlist_n, tmpl, cfg_.selection.order,
                                              cfg_.selection.shuffle_seed);
    }
    throw ConfigError("unknown selector '" + name + "' (expected zero_shot, random, bm25, embed, contrastive, genicl)");
  }

  const Model& prediction_model() {
    if (opt_.checkpoint) return base();
    throw ConfigError(opt_.command + " requires --checkpoint");
  }

  void eval() {
    const auto path = out_path();
    const auto sel = make_selector(opt_.selector);
    const auto rep = evaluate_selector(*sel, bundle().test, prediction_model(), cfg_.eval);
    emit(path, report_json(rep));
    auto tsv = path;
    tsv.replace_extension(".tsv");
    emit(tsv, report_tsv(rep));
    out_ << rep.selector_id << "\t" << rep.metric << "\t" << fmt6(rep.score) << "\n";
  }

  void analyze() {
    const auto dir = out_path();
    const auto& b = bundle();
    const auto& model = prediction_model();

    const auto ratio = useful_ratio_analysis(b.test, b.pool, model, *retrieval().index, cfg_.sample_n,
                                             cfg_.ratio_edges, cfg_.seed, cfg_.eval.max_new_tokens);
    std::string hist = "lo\thi\tcount\tpercentage\n";
    for (const auto& bin : ratio.histogram) {
      hist += fmt6(bin.lo) + "\t" + fmt6(bin.hi) + "\t" + std::to_string(bin.count) + "\t" + fmt(bin.percentage) + "\n";
    }
    emit(dir / "useful_ratio_hist.tsv", hist);
    std::string per = "query_id\tratio\n";
    for (std::size_t i = 0; i < ratio.hard_query_ids.size(); ++i) {
      per += ratio.hard_query_ids[i] + "\t" + fmt(ratio.ratios[i]) + "\n";
    }
    emit(dir / "useful_ratio.tsv", per);
    if (ratio.no_hard_queries) out_ << "no hard queries\n";

    std::vector<std::unique_ptr<DemoSelector>> owned;
    for (const char* name : {"random", "bm25", "embed"}) owned.push_back(make_selector(name));
    const bool has_latent = checkpoint().latent.length() > 0;
    if (has_latent) owned.push_back(make_selector("genicl"));
    std::vector<const DemoSelector*> sels;
    for (const auto& s : owned) sels.push_back(s.get());
    const auto gt = ground_truth_prob_report(sels, b.test, model, cfg_.eval.K);
    std::string summary = "selector\tcount\tmin\tq1\tmedian\tq3\tmax\tmean\n";
    std::string raw = "selector\tquery_id\tlogprob\n";
    for (const auto& row : gt) {
      const auto& s = row.summary;
      summary += row.selector_id + "\t" + std::to_string(s.count) + "\t" + fmt(s.min) + "\t" + fmt(s.q1) + "\t" +
                 fmt(s.median) + "\t" + fmt(s.q3) + "\t" + fmt(s.max) + "\t" + fmt(s.mean) + "\n";
      for (std::size_t i = 0; i < row.logprobs.size(); ++i) {
        raw += row.selector_id + "\t" + b.test.examples[i].id + "\t" + fmt(row.logprobs[i]) + "\n";
      }
    }
    emit(dir / "gt_logprob_summary.tsv", summary);
    emit(dir / "gt_logprob.tsv", raw);

    if (has_latent) {
      const GenICLSelector genicl(b.pool, checkpoint().model, latent(), *retrieval().index,
                                  cfg_.pipeline.shortlist_n, b.test.template_);
      const std::vector<OrderPolicy> policies{OrderPolicy::descending, OrderPolicy::ascending, OrderPolicy::shuffle};
      const std::vector<std::uint64_t> seeds{cfg_.seed, cfg_.seed + 1, cfg_.seed + 2};
      const auto os = order_sensitivity(genicl, b.test, model, policies, seeds, cfg_.eval);
      std::string text = "order\tseed\tscore\n";
      for (const auto& r : os.rows) {
        text += std::string(to_string(r.policy)) + "\t" + std::to_string(r.seed) + "\t" + fmt(r.score) + "\n";
      }
      emit(dir / "order_sensitivity.tsv", text);
      out_ << "order spread " << fmt6(os.spread) << (os.sets_identical ? "" : "  (selected sets differ)") << "\n";
    }
  }

  void ablate() {
    const auto path = out_path();
    const auto& b = bundle();
    std::vector<Variant> variants;
    if (opt_.variants.empty()) {
      variants = {Variant::full, Variant::no_nonpreferred, Variant::no_answer_loss, Variant::no_demo_loss};
    } else {
      for (const auto& v : opt_.variants) variants.push_back(parse_variant(v));
    }
    const auto queries = train_queries();
    const auto rows = ablation_suite(base(), queries, b.train, b.test, b.pool, *retrieval().index, cfg_.pipeline,
                                     variants, cfg_.eval);
    std::string text = "variant\tscore\ttop1_hit_rate\tdemo_updates\tanswer_updates\n";
    for (const auto& r : rows) {
      text += std::string(to_string(r.variant)) + "\t" + fmt(r.score) + "\t" +
              (r.top1_hit_rate ? fmt(*r.top1_hit_rate) : std::string("-")) + "\t" + std::to_string(r.demo_updates) +
              "\t" + std::to_string(r.answer_updates) + "\n";
    }
    emit(path, text);
    out_ << text;
  }

  void report() {
    if (opt_.reports.empty()) throw ConfigError("report requires one or more eval report files");
    std::string text = "task\tselector\tK\tmetric\tscore\tqueries\n";
    for (const auto& f : opt_.reports) {
      std::ifstream in(f);
      if (!in) throw ValidationError("cannot open report " + f);
      std::stringstream ss;
      ss << in.rdbuf();
      const auto r = report_from_json(ss.str());
      hashes_[f] = hex64(hash_string(ss.str()));
      text += r.task_id + "\t" + r.selector_id + "\t" + std::to_string(r.K) + "\t" + r.metric + "\t" + fmt6(r.score) +
              "\t" + std::to_string(r.records.size()) + "\n";
    }
    if (opt_.out) emit(*opt_.out, text);
    out_ << text;
  }

  void write_manifest(double secs) {
    RunManifest m;
    m.command = opt_.command;
    auto c = cfg_.to_json();
    c["deterministic"] = opt_.deterministic;
    c["kernel_backend"] = std::string(kernels::backend_name(kernels::active_backend()));
    if (opt_.command == "eval") c["selector"] = opt_.selector;
    m.config = std::move(c);
    m.input_hashes = hashes_;
    m.outputs = outputs_;
    m.seed = cfg_.seed;
    m.wall_clock_seconds = secs;
    fs::path dir = ".";
    if (opt_.out) {
      const fs::path o(*opt_.out);
      dir = opt_.command == "synth" || opt_.command == "analyze" ? o : o.parent_path();
      if (dir.empty()) dir = ".";
    }
    append_manifest(dir / "manifest.jsonl", m);
  }

  Options opt_;
  std::ostream& out_;
  RunConfig cfg_;
  std::optional<TaskBundle> bundle_;
  std::optional<Checkpoint<float>> ck_;
  std::optional<Model> base_;
  std::optional<Retrieval> retrieval_;
  std::optional<Retrieval> contrastive_;
  std::optional<ScoreCache> cache_;
  std::map<std::string, std::string> hashes_;
  std::vector<std::string> outputs_;
};

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const SchemaError*>(&e)) return "schema";
  if (dynamic_cast<const ValidationError*>(&e)) return "validation";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const WindowError*>(&e)) return "window";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const SelectionError*>(&e)) return "selection";
  if (dynamic_cast<const ConstructionError*>(&e)) return "construction";
  if (dynamic_cast<const ScoringError*>(&e)) return "scoring";
  if (dynamic_cast<const RenderError*>(&e)) return "render";
  if (dynamic_cast<const Error*>(&e)) return "error";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  return "internal";
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"genicl: demonstration selection with a preference-trained latent prompt"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("--config", opt.config, "JSON config file (overrides defaults; flags override it)");
  app.add_option("--seed", opt.seed, "Single seed all randomness derives from");
  app.add_option("--task", opt.task, "Task descriptor JSON");
  app.add_option("--pool", opt.pool, "Demonstration pool JSONL (overrides the descriptor's pool)");
  app.add_option("--checkpoint", opt.checkpoint, "Model checkpoint");
  app.add_option("--out", opt.out, "Output file or directory");
  app.add_option("--k", opt.k, "Number of demonstrations")->check(CLI::NonNegativeNumber);
  app.add_option("--selector", opt.selector, "zero_shot|random|bm25|embed|contrastive|genicl");
  app.add_option("--steps", opt.steps, "Training steps")->check(CLI::NonNegativeNumber);
  app.add_flag("--deterministic", opt.deterministic, "Force the scalar reference kernels");

  app.add_subcommand("synth", "Write a key-match synthetic task bundle");
  auto* pre = app.add_subcommand("pretrain", "Pretrain the tiny LM");
  pre->add_option("--corpus", opt.corpus, "Text corpus, one line per sequence (default: synthetic copy corpus)");
  app.add_subcommand("score", "Score shortlist candidates of every training query");
  app.add_subcommand("pairs", "Build demo preference pairs");
  app.add_subcommand("train", "Train the latent prompt");
  app.add_subcommand("select", "Select demonstrations for the test queries");
  app.add_subcommand("eval", "Evaluate one selector end to end");
  app.add_subcommand("analyze", "Useful-ratio, ground-truth probability and order analyses");
  auto* abl = app.add_subcommand("ablate", "Train and evaluate the ablation variants");
  abl->add_option("--variant", opt.variants, "full|no_nonpreferred|no_answer_loss|no_demo_loss (repeatable)");
  auto* rep = app.add_subcommand("report", "Summarize eval reports");
  rep->add_option("reports", opt.reports, "Eval report JSON files");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << e.what() << "\n\n" << app.help();
    return 2;
  }
  opt.command = app.get_subcommands().front()->get_name();

  try {
    Runner runner(opt, out);
    runner.run();
  } catch (const std::exception& e) {
    err << json{{"error", {{"kind", error_kind(e)}, {"command", opt.command}, {"message", e.what()}}}}.dump() << "\n";
    kernels::reset_backend();
    return 1;
  }
  kernels::reset_backend();
  return 0;
}

}  // namespace genicl::cli
