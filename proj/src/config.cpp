#include "genicl/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "genicl/errors.hpp"
#include "genicl/hash.hpp"

namespace genicl {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> keys, const std::string& section) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (auto key : keys) known = known || key == k;
    if (!known) throw ConfigError("unknown config key '" + section + (section.empty() ? "" : ".") + k + "'");
  }
}

template <class T>
void get_if(const json& j, const char* key, T& v) {
  if (auto it = j.find(key); it != j.end()) v = it->get<T>();
}

json section(const json& j, const char* name) {
  auto it = j.find(name);
  return it == j.end() ? json::object() : *it;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.pipeline.train.eta1 = 1e-2;
  c.pipeline.train.eta2 = 1e-2;
  c.pipeline.train.steps = 300;
  c.pipeline.train.batch_size = 16;
  c.pipeline.train.warmup_steps = 30;
  c.pipeline.train.pairs_per_query = 2;
  c.pipeline.pairs.n_pos = 4;
  c.pipeline.pairs.n_neg = 32;
  c.pipeline.shortlist_n = 64;
  c.pipeline.latent_m = 10;
  for (int i = 0; i <= 20; ++i) c.ratio_edges.push_back(i / 20.0);
  c.propagate_seed();
  return c;
}

void RunConfig::propagate_seed() {
  synthetic.seed = seed;
  corpus.seed = seed;
  pretrain.seed = seed;
  pipeline.train.seed = seed;
  pipeline.latent_seed = seed + 100;
  selection.shuffle_seed = seed;
  eval.seed = seed;
  contrastive.seed = seed;
}

void RunConfig::merge(const json& j) {
  try {
    check_keys(j,
               {"seed", "synthetic", "corpus", "model", "pretrain", "train", "pairs", "pipeline", "selection", "eval",
                "contrastive", "analysis"},
               "");
    get_if(j, "seed", seed);

    const auto syn = section(j, "synthetic");
    check_keys(syn, {"n_keys", "pool_size", "query_count", "test_count", "filler_length"}, "synthetic");
    get_if(syn, "n_keys", synthetic.n_keys);
    get_if(syn, "pool_size", synthetic.pool_size);
    get_if(syn, "query_count", synthetic.query_count);
    get_if(syn, "test_count", synthetic.test_count);
    get_if(syn, "filler_length", synthetic.filler_length);

    const auto cor = section(j, "corpus");
    check_keys(cor, {"lines", "max_items", "min_keys", "max_keys", "filler_length"}, "corpus");
    get_if(cor, "lines", corpus.lines);
    get_if(cor, "max_items", corpus.max_items);
    get_if(cor, "min_keys", corpus.min_keys);
    get_if(cor, "max_keys", corpus.max_keys);
    get_if(cor, "filler_length", corpus.filler_length);

    const auto mod = section(j, "model");
    check_keys(mod, {"n_layer", "d_model", "n_head", "d_ff", "context_length", "init_std", "max_latent"}, "model");
    auto& mc = pretrain.model;
    get_if(mod, "n_layer", mc.n_layer);
    get_if(mod, "d_model", mc.d_model);
    get_if(mod, "n_head", mc.n_head);
    get_if(mod, "d_ff", mc.d_ff);
    get_if(mod, "context_length", mc.context_length);
    get_if(mod, "init_std", mc.init_std);
    get_if(mod, "max_latent", mc.max_latent);

    const auto pre = section(j, "pretrain");
    check_keys(pre, {"steps", "batch_size", "lr", "warmup_steps", "weight_decay", "grad_clip", "heldout_fraction"},
               "pretrain");
    get_if(pre, "steps", pretrain.steps);
    get_if(pre, "batch_size", pretrain.batch_size);
    get_if(pre, "lr", pretrain.lr);
    get_if(pre, "warmup_steps", pretrain.warmup_steps);
    get_if(pre, "weight_decay", pretrain.weight_decay);
    get_if(pre, "grad_clip", pretrain.grad_clip);
    get_if(pre, "heldout_fraction", pretrain.heldout_fraction);

    const auto tr = section(j, "train");
    check_keys(tr,
               {"beta", "lambda_w", "lambda_l", "eta1", "eta2", "steps", "batch_size", "warmup_steps", "weight_decay",
                "pairs_per_query", "use_demo_loss", "use_answer_loss"},
               "train");
    auto& t = pipeline.train;
    get_if(tr, "beta", t.beta);
    get_if(tr, "lambda_w", t.lambda_w);
    get_if(tr, "lambda_l", t.lambda_l);
    get_if(tr, "eta1", t.eta1);
    get_if(tr, "eta2", t.eta2);
    get_if(tr, "steps", t.steps);
    get_if(tr, "batch_size", t.batch_size);
    get_if(tr, "warmup_steps", t.warmup_steps);
    get_if(tr, "weight_decay", t.weight_decay);
    get_if(tr, "pairs_per_query", t.pairs_per_query);
    get_if(tr, "use_demo_loss", t.use_demo_loss);
    get_if(tr, "use_answer_loss", t.use_answer_loss);

    const auto pr = section(j, "pairs");
    check_keys(pr, {"n_pos", "n_neg", "per_token_mean"}, "pairs");
    get_if(pr, "n_pos", pipeline.pairs.n_pos);
    get_if(pr, "n_neg", pipeline.pairs.n_neg);
    get_if(pr, "per_token_mean", pipeline.pairs.per_token_mean);

    const auto pl = section(j, "pipeline");
    check_keys(pl, {"shortlist_n", "latent_m"}, "pipeline");
    get_if(pl, "shortlist_n", pipeline.shortlist_n);
    get_if(pl, "latent_m", pipeline.latent_m);

    const auto sel = section(j, "selection");
    check_keys(sel, {"K", "order"}, "selection");
    get_if(sel, "K", selection.K);
    if (sel.contains("order")) selection.order = parse_order(sel["order"].get<std::string>());

    const auto ev = section(j, "eval");
    check_keys(ev, {"max_new_tokens"}, "eval");
    get_if(ev, "max_new_tokens", eval.max_new_tokens);

    const auto con = section(j, "contrastive");
    check_keys(con, {"n_neg", "temperature", "lr", "epochs"}, "contrastive");
    get_if(con, "n_neg", contrastive.n_neg);
    get_if(con, "temperature", contrastive.temperature);
    get_if(con, "lr", contrastive.lr);
    get_if(con, "epochs", contrastive.epochs);

    const auto an = section(j, "analysis");
    check_keys(an, {"sample_n", "ratio_edges"}, "analysis");
    get_if(an, "sample_n", sample_n);
    get_if(an, "ratio_edges", ratio_edges);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  eval.K = selection.K;
}

json RunConfig::to_json() const {
  const auto& mc = pretrain.model;
  const auto& t = pipeline.train;
  return json{
      {"seed", seed},
      {"synthetic",
       {{"n_keys", synthetic.n_keys},
        {"pool_size", synthetic.pool_size},
        {"query_count", synthetic.query_count},
        {"test_count", synthetic.test_count},
        {"filler_length", synthetic.filler_length}}},
      {"corpus",
       {{"lines", corpus.lines},
        {"max_items", corpus.max_items},
        {"min_keys", corpus.min_keys},
        {"max_keys", corpus.max_keys},
        {"filler_length", corpus.filler_length}}},
      {"model",
       {{"n_layer", mc.n_layer},
        {"d_model", mc.d_model},
        {"n_head", mc.n_head},
        {"d_ff", mc.d_ff},
        {"context_length", mc.context_length},
        {"init_std", mc.init_std},
        {"max_latent", mc.max_latent}}},
      {"pretrain",
       {{"steps", pretrain.steps},
        {"batch_size", pretrain.batch_size},
        {"lr", pretrain.lr},
        {"warmup_steps", pretrain.warmup_steps},
        {"weight_decay", pretrain.weight_decay},
        {"grad_clip", pretrain.grad_clip},
        {"heldout_fraction", pretrain.heldout_fraction}}},
      {"train",
       {{"beta", t.beta},
        {"lambda_w", t.lambda_w},
        {"lambda_l", t.lambda_l},
        {"eta1", t.eta1},
        {"eta2", t.eta2},
        {"steps", t.steps},
        {"batch_size", t.batch_size},
        {"warmup_steps", t.warmup_steps},
        {"weight_decay", t.weight_decay},
        {"pairs_per_query", t.pairs_per_query},
        {"use_demo_loss", t.use_demo_loss},
        {"use_answer_loss", t.use_answer_loss}}},
      {"pairs",
       {{"n_pos", pipeline.pairs.n_pos},
        {"n_neg", pipeline.pairs.n_neg},
        {"per_token_mean", pipeline.pairs.per_token_mean}}},
      {"pipeline", {{"shortlist_n", pipeline.shortlist_n}, {"latent_m", pipeline.latent_m}}},
      {"selection", {{"K", selection.K}, {"order", std::string(to_string(selection.order))}}},
      {"eval", {{"max_new_tokens", eval.max_new_tokens}}},
      {"contrastive",
       {{"n_neg", contrastive.n_neg},
        {"temperature", contrastive.temperature},
        {"lr", contrastive.lr},
        {"epochs", contrastive.epochs}}},
      {"analysis", {{"sample_n", sample_n}, {"ratio_edges", ratio_edges}}},
  };
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  auto c = RunConfig::defaults();
  c.merge(j);
  if (j.contains("seed")) c.propagate_seed();
  return c;
}

TaskBundle load_task_bundle(const std::filesystem::path& descriptor,
                            const std::optional<std::filesystem::path>& pool_override) {
  std::ifstream in(descriptor);
  if (!in) throw ValidationError("cannot open task descriptor " + descriptor.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SchemaError("task descriptor " + descriptor.string() + ": " + e.what());
  }
  const auto base = descriptor.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  try {
    check_keys(j, {"task_id", "kind", "metric", "template", "train", "test", "pool"}, "task");
    const auto task_id = j.at("task_id").get<std::string>();
    const auto kind = parse_task_kind(j.at("kind").get<std::string>());
    std::optional<MetricKind> metric;
    if (j.contains("metric")) metric = parse_metric(j["metric"].get<std::string>());
    TaskTemplate tmpl;
    const auto t = section(j, "template");
    check_keys(t, {"input_pattern", "answer_pattern", "demo_separator", "answer_prefix"}, "template");
    get_if(t, "input_pattern", tmpl.input_pattern);
    get_if(t, "answer_pattern", tmpl.answer_pattern);
    get_if(t, "demo_separator", tmpl.demo_separator);
    get_if(t, "answer_prefix", tmpl.answer_prefix);

    TaskBundle b;
    auto load = [&](const std::filesystem::path& p) {
      auto r = load_dataset(p, task_id, kind, tmpl, metric);
      for (auto& w : r.warnings) b.warnings.push_back(p.string() + ": " + w);
      return std::move(r.dataset);
    };
    b.train = load(resolve(j.at("train").get<std::string>()));
    b.test = load(resolve(j.at("test").get<std::string>()));
    const auto pool_path = pool_override ? *pool_override : resolve(j.at("pool").get<std::string>());
    b.pool = DemonstrationPool(load(pool_path).examples);
    return b;
  } catch (const json::exception& e) {
    throw SchemaError("task descriptor " + descriptor.string() + ": " + e.what());
  }
}

std::filesystem::path save_task_bundle(const std::filesystem::path& dir, const TaskDataset& train,
                                       const TaskDataset& test, const DemonstrationPool& pool) {
  std::filesystem::create_directories(dir);
  save_dataset(dir / "train.jsonl", train.examples);
  save_dataset(dir / "test.jsonl", test.examples);
  save_dataset(dir / "pool.jsonl", pool.examples());
  const auto& t = train.template_;
  const json j{{"task_id", train.task_id},
               {"kind", std::string(to_string(train.kind))},
               {"metric", std::string(to_string(train.metric))},
               {"template",
                {{"input_pattern", t.input_pattern},
                 {"answer_pattern", t.answer_pattern},
                 {"demo_separator", t.demo_separator},
                 {"answer_prefix", t.answer_prefix}}},
               {"train", "train.jsonl"},
               {"test", "test.jsonl"},
               {"pool", "pool.jsonl"}};
  const auto path = dir / "task.json";
  write_file(path, j.dump(2) + "\n");
  return path;
}

std::uint64_t dataset_hash(const TaskDataset& ds) {
  Hasher h;
  h.str(ds.task_id).str(to_string(ds.kind)).str(to_string(ds.metric));
  const auto& t = ds.template_;
  h.str(t.input_pattern).str(t.answer_pattern).str(t.demo_separator).str(t.answer_prefix);
  h.value<std::uint64_t>(ds.examples.size());
  for (const auto& e : ds.examples) {
    h.str(e.id).str(e.input).str(e.target);
    h.value<int>(e.options ? static_cast<int>(e.options->size()) : -1);
    if (e.options) {
      for (const auto& o : *e.options) h.str(o);
    }
    h.value<std::uint64_t>(e.metadata.size());
    for (const auto& [k, v] : e.metadata) h.str(k).str(v);
  }
  return h.digest();
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  std::ostringstream ss;
  ss << in.rdbuf();
  return hash_string(ss.str());
}

json RunManifest::to_json() const {
  return json{{"command", command},         {"config", config},
              {"input_hashes", input_hashes}, {"outputs", outputs},
              {"seed", seed},               {"wall_clock_seconds", wall_clock_seconds},
              {"format_version", format_version}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config = j.at("config");
  m.input_hashes = j.at("input_hashes").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::vector<std::string>>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  m.format_version = j.at("format_version").get<int>();
  return m;
}

void append_manifest(const std::filesystem::path& file, const RunManifest& m) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  const auto line = m.to_json().dump() + "\n";
  std::FILE* f = std::fopen(file.string().c_str(), "ab");
  if (!f) throw ValidationError("cannot append to manifest " + file.string());
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size();
  std::fclose(f);
  if (!ok) throw ValidationError("short write to manifest " + file.string());
}

std::vector<RunManifest> read_manifests(const std::filesystem::path& file) {
  std::ifstream in(file);
  std::vector<RunManifest> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(RunManifest::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw SchemaError(file.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

Model strip_latent(const Model& model) {
  const auto latent = find_latent(model);
  if (latent.length() == 0) return model;
  const auto& toks = model.vocab.tokens();
  const std::size_t keep = toks.size() - latent.length();
  for (std::size_t k = 0; k < latent.length(); ++k) {
    if (latent.token_ids[k] != static_cast<int>(keep + k)) {
      throw CheckpointError("strip_latent: latent tokens are not the vocabulary tail");
    }
  }
  Model out;
  out.config = model.config;
  out.vocab = Vocabulary(std::vector<std::string>(toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(keep)));
  out.params.assign(model.params.begin(), model.params.end() - static_cast<std::ptrdiff_t>(latent.length() * model.d()));
  out.seed = model.seed;
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << text;
    if (!out) throw ValidationError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace genicl
