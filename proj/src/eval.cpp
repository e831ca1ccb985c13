#include "genicl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "genicl/errors.hpp"
#include "genicl/hash.hpp"
#include "genicl/metrics.hpp"

namespace genicl {

namespace {

std::vector<Example> lookup(const DemonstrationPool& pool, std::span<const ScoredCandidate> items) {
  std::vector<Example> out;
  out.reserve(items.size());
  for (const auto& c : items) out.push_back(*pool.find(c.example_id));
  return out;
}

std::vector<int> prompt_tokens(const Vocabulary& vocab, std::span<const Example> demos, const Example& query,
                               const TaskTemplate& tmpl) {
  std::vector<int> ids{vocab.bos()};
  const auto body = vocab.encode(answer_context(demos, query, tmpl));
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

bool key_match(const Example& query, const Example& demo) {
  const auto q = query.metadata.find("key");
  const auto d = demo.metadata.find("key");
  return q != query.metadata.end() && d != demo.metadata.end() && q->second == d->second;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<Example> RandomSelector::select(const Example& query, int K) const {
  if (K <= 0) return {};
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pool_->size(); ++i) {
    if ((*pool_)[i].id != query.id) idx.push_back(i);
  }
  std::mt19937_64 rng(seed_ ^ (hash_string(query.id) * 0x9e3779b97f4a7c15ULL));
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(K), idx.size());
  // Partial Fisher-Yates: the first k positions are a uniform sample.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<Example> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back((*pool_)[idx[i]]);
  return out;
}

std::vector<Example> Bm25Selector::select(const Example& query, int K) const {
  if (K <= 0) return {};
  return lookup(*pool_, bm25_rank(index_text(query, tmpl_), *pool_, K, params_, tmpl_).items);
}

std::vector<Example> EmbedSelector::select(const Example& query, int K) const {
  if (K <= 0) return {};
  return lookup(*pool_, index_->rank(index_text(query, tmpl_), K).items);
}

Selection GenICLSelector::select_scored(const Example& query, int K) const {
  SelectionConfig cfg{K, order_, shuffle_seed_};
  return select_demonstrations(query, *pool_, *model_, latent_, *index_, std::max(shortlist_n_, K), cfg, tmpl_);
}

std::vector<Example> GenICLSelector::select(const Example& query, int K) const {
  return select_scored(query, K).demos;
}

GenICLSelector GenICLSelector::with_order(OrderPolicy order, std::uint64_t shuffle_seed) const {
  GenICLSelector copy = *this;
  copy.order_ = order;
  copy.shuffle_seed_ = shuffle_seed;
  return copy;
}

std::string predict(const Model& model, std::span<const Example> demos, const Example& query, const TaskDataset& task,
                    int max_new_tokens, int* dropped) {
  const auto& tmpl = task.template_;
  const auto window = static_cast<std::size_t>(model.config.context_length);
  const bool options = task.kind != TaskKind::generation;

  std::size_t longest = static_cast<std::size_t>(max_new_tokens);
  if (options) {
    if (!query.options || query.options->empty()) {
      throw ConfigError("query '" + query.id + "' of an option task has no options");
    }
    longest = 0;
    for (const auto& o : *query.options) {
      longest = std::max(longest, model.vocab.encode(render_answer(tmpl, query, o)).size());
    }
  }
  std::size_t skip = 0;
  std::vector<int> ctx = prompt_tokens(model.vocab, demos.subspan(skip), query, tmpl);
  while (ctx.size() + longest > window && skip < demos.size()) {
    ++skip;
    ctx = prompt_tokens(model.vocab, demos.subspan(skip), query, tmpl);
  }
  if (ctx.size() + (options ? longest : 1) > window) {
    throw WindowError("query '" + query.id + "' does not fit the context window even without demonstrations");
  }
  if (dropped) *dropped = static_cast<int>(skip);

  if (options) {
    std::string best;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (const auto& o : *query.options) {
      const auto tgt = model.vocab.encode(render_answer(tmpl, query, o));
      const double lp = sequence_logprob(model, ctx, tgt).value;
      if (lp > best_lp) {
        best_lp = lp;
        best = o;
      }
    }
    return best;
  }

  const int budget = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(max_new_tokens), window - ctx.size()));
  std::string text;
  const std::string& stop = tmpl.demo_separator;
  for (int i = 0; i < budget; ++i) {
    const auto lp = next_token_logprobs(model, ctx);
    const int next = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (next == model.vocab.eos()) break;
    ctx.push_back(next);
    if (!model.vocab.is_special(next)) text += model.vocab.token(next);
    if (!stop.empty() && text.size() >= stop.size() && text.compare(text.size() - stop.size(), stop.size(), stop) == 0) {
      text.resize(text.size() - stop.size());
      break;
    }
  }
  return trim(std::move(text));
}

namespace {

void finish_report(EvalReport& r, const TaskDataset& task) {
  double sum = 0.0;
  for (const auto& rec : r.records) sum += rec.value;
  r.score = r.records.empty() ? 0.0 : sum / static_cast<double>(r.records.size());
  if (task.metric == MetricKind::f1 && !task.examples.empty() && task.examples.front().options &&
      task.examples.front().options->size() == 2) {
    std::vector<std::string> preds, refs;
    for (const auto& rec : r.records) {
      preds.push_back(rec.prediction);
      refs.push_back(rec.reference);
    }
    r.corpus_binary_f1 = binary_f1(preds, refs, task.examples.front().options->front());
  }
}

std::uint64_t eval_hash(const std::string& selector, const TaskDataset& task, const Model& model, int K,
                        int max_new_tokens, std::uint64_t seed) {
  Hasher h;
  h.str(selector).str(task.task_id).value(K).value(max_new_tokens).value(seed).value(model.content_hash());
  for (const auto& ex : task.examples) h.str(ex.id).str(ex.input).str(ex.target);
  return h.digest();
}

}  // namespace

EvalReport evaluate_selector(const DemoSelector& selector, const TaskDataset& task, const Model& model,
                             const EvalOptions& options) {
  if (options.K < 0) throw ConfigError("evaluate_selector: K must be >= 0");
  if (selector.id() == "zero_shot" && options.K != 0) {
    throw ConfigError("zero_shot selector requires K = 0");
  }
  EvalReport r;
  r.task_id = task.task_id;
  r.selector_id = selector.id();
  r.K = options.K;
  r.metric = std::string(to_string(task.metric));
  r.seed = options.seed;
  r.config_hash = eval_hash(r.selector_id, task, model, options.K, options.max_new_tokens, options.seed);
  for (const auto& q : task.examples) {
    const auto demos = selector.select(q, options.K);
    QueryRecord rec;
    rec.query_id = q.id;
    rec.reference = q.target;
    for (const auto& d : demos) rec.demo_ids.push_back(d.id);
    rec.prediction = predict(model, demos, q, task, options.max_new_tokens, &rec.dropped_demos);
    rec.value = compute_metric(task.metric, rec.prediction, rec.reference);
    r.records.push_back(std::move(rec));
  }
  finish_report(r, task);
  return r;
}

EvalReport replay_report(const EvalReport& report, const TaskDataset& task, const DemonstrationPool& pool,
                         const Model& model, int max_new_tokens) {
  EvalReport r = report;
  std::map<std::string, const Example*> by_id;
  for (const auto& ex : task.examples) by_id[ex.id] = &ex;
  for (auto& rec : r.records) {
    const auto it = by_id.find(rec.query_id);
    if (it == by_id.end()) throw ValidationError("replay: query '" + rec.query_id + "' not in task");
    std::vector<Example> demos;
    for (const auto& id : rec.demo_ids) {
      const Example* d = pool.find(id);
      if (!d) throw ValidationError("replay: demonstration '" + id + "' not in pool");
      demos.push_back(*d);
    }
    rec.prediction = predict(model, demos, *it->second, task, max_new_tokens, &rec.dropped_demos);
    rec.value = compute_metric(task.metric, rec.prediction, rec.reference);
  }
  finish_report(r, task);
  return r;
}

double top1_hit_rate(const DemoSelector& selector, std::span<const Example> queries) {
  if (queries.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& q : queries) {
    const auto demos = selector.select(q, 1);
    if (!demos.empty() && key_match(q, demos.front())) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

UsefulRatioReport useful_ratio_analysis(const TaskDataset& task, const DemonstrationPool& pool, const Model& model,
                                        const EmbeddingIndex& index, int sample_n, std::span<const double> edges,
                                        std::uint64_t seed, int max_new_tokens) {
  if (sample_n < 1 || static_cast<std::size_t>(sample_n) > pool.size()) {
    throw ConfigError("useful_ratio_analysis: sample_n must be in [1, pool size]");
  }
  if (edges.size() < 2 || edges.front() != 0.0 || edges.back() != 1.0) {
    throw ConfigError("useful_ratio_analysis: bin edges must run from 0 to 1");
  }
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw ConfigError("useful_ratio_analysis: bin edges must increase");
  }

  UsefulRatioReport out;
  const EmbedSelector top8(pool, index, task.template_);
  for (const auto& q : task.examples) {
    const auto demos = top8.select(q, 8);
    const auto pred = predict(model, demos, q, task, max_new_tokens);
    if (compute_metric(task.metric, pred, q.target) >= 1.0) continue;

    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed ^ (hash_string(q.id) * 0x9e3779b97f4a7c15ULL));
    for (std::size_t i = 0; i < static_cast<std::size_t>(sample_n); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    std::size_t useful = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(sample_n); ++i) {
      const std::vector<Example> one{pool[idx[i]]};
      if (compute_metric(task.metric, predict(model, one, q, task, max_new_tokens), q.target) >= 1.0) ++useful;
    }
    out.hard_query_ids.push_back(q.id);
    out.ratios.push_back(static_cast<double>(useful) / static_cast<double>(sample_n));
  }

  out.no_hard_queries = out.ratios.empty();
  if (out.no_hard_queries) return out;
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) out.histogram.push_back({edges[b], edges[b + 1], 0, 0.0});
  for (double r : out.ratios) {
    std::size_t b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), r) - edges.begin());
    b = b == 0 ? 0 : b - 1;
    b = std::min(b, out.histogram.size() - 1);
    ++out.histogram[b].count;
  }
  for (auto& bin : out.histogram) {
    bin.percentage = 100.0 * static_cast<double>(bin.count) / static_cast<double>(out.ratios.size());
  }
  return out;
}

Distribution summarize(std::span<const double> values) {
  Distribution d;
  d.count = values.size();
  if (values.empty()) return d;
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  d.min = v.front();
  d.max = v.back();
  d.q1 = q(0.25);
  d.median = q(0.5);
  d.q3 = q(0.75);
  d.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return d;
}

std::vector<GroundTruthProbRow> ground_truth_prob_report(std::span<const DemoSelector* const> selectors,
                                                         const TaskDataset& task, const Model& model, int K) {
  std::vector<GroundTruthProbRow> rows;
  for (const auto* sel : selectors) {
    GroundTruthProbRow row;
    row.selector_id = sel->id();
    const int k = sel->id() == "zero_shot" ? 0 : K;
    for (const auto& q : task.examples) {
      const auto demos = sel->select(q, k);
      const auto enc = icl_tokens(model.vocab, demos, q, q.target, task.template_);
      row.logprobs.push_back(sequence_logprob(model, enc.context, enc.target).value);
    }
    row.summary = summarize(row.logprobs);
    rows.push_back(std::move(row));
  }
  return rows;
}

OrderSensitivity order_sensitivity(const GenICLSelector& base, const TaskDataset& task, const Model& model,
                                   std::span<const OrderPolicy> policies, std::span<const std::uint64_t> seeds,
                                   const EvalOptions& options) {
  OrderSensitivity out;
  std::map<std::string, std::vector<std::string>> reference_sets;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  const std::vector<std::uint64_t> one_seed{options.seed};
  for (const auto policy : policies) {
    const auto& policy_seeds = policy == OrderPolicy::shuffle && !seeds.empty()
                                   ? std::vector<std::uint64_t>(seeds.begin(), seeds.end())
                                   : one_seed;
    for (const auto s : policy_seeds) {
      const GenICLSelector sel = base.with_order(policy, s);
      const auto report = evaluate_selector(sel, task, model, options);
      for (const auto& rec : report.records) {
        auto ids = rec.demo_ids;
        std::sort(ids.begin(), ids.end());
        const auto [it, inserted] = reference_sets.emplace(rec.query_id, ids);
        if (!inserted && it->second != ids) out.sets_identical = false;
      }
      out.rows.push_back({policy, s, report.score});
      lo = std::min(lo, report.score);
      hi = std::max(hi, report.score);
    }
  }
  out.spread = out.rows.empty() ? 0.0 : hi - lo;
  return out;
}

std::string report_tsv(const EvalReport& r) {
  std::ostringstream os;
  os << "query_id\tprediction\treference\tvalue\tdemo_ids\n";
  for (const auto& rec : r.records) {
    os << rec.query_id << '\t' << rec.prediction << '\t' << rec.reference << '\t' << rec.value << '\t';
    for (std::size_t i = 0; i < rec.demo_ids.size(); ++i) os << (i ? "," : "") << rec.demo_ids[i];
    os << '\n';
  }
  return os.str();
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["task_id"] = r.task_id;
  j["selector"] = r.selector_id;
  j["K"] = r.K;
  j["metric"] = r.metric;
  j["score"] = r.score;
  j["config_hash"] = hex64(r.config_hash);
  j["seed"] = r.seed;
  if (r.corpus_binary_f1) j["corpus_binary_f1"] = *r.corpus_binary_f1;
  auto& recs = j["records"] = nlohmann::ordered_json::array();
  for (const auto& rec : r.records) {
    recs.push_back({{"query_id", rec.query_id},
                    {"prediction", rec.prediction},
                    {"reference", rec.reference},
                    {"value", rec.value},
                    {"demo_ids", rec.demo_ids},
                    {"dropped_demos", rec.dropped_demos}});
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.task_id = j.at("task_id").get<std::string>();
    r.selector_id = j.at("selector").get<std::string>();
    r.K = j.at("K").get<int>();
    r.metric = j.at("metric").get<std::string>();
    r.score = j.at("score").get<double>();
    r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("corpus_binary_f1")) r.corpus_binary_f1 = j["corpus_binary_f1"].get<double>();
    for (const auto& rec : j.at("records")) {
      QueryRecord q;
      q.query_id = rec.at("query_id").get<std::string>();
      q.prediction = rec.at("prediction").get<std::string>();
      q.reference = rec.at("reference").get<std::string>();
      q.value = rec.at("value").get<double>();
      q.demo_ids = rec.at("demo_ids").get<std::vector<std::string>>();
      q.dropped_demos = rec.at("dropped_demos").get<int>();
      r.records.push_back(std::move(q));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("eval report: ") + e.what());
  } catch (const std::logic_error& e) {
    throw SchemaError(std::string("eval report: bad config_hash: ") + e.what());
  }
}

}  // namespace genicl
