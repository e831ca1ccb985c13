#include "genicl/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <json.hpp>

#include "genicl/errors.hpp"
#include "genicl/hash.hpp"

namespace genicl {

using json = nlohmann::json;

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::classification: return "classification";
    case TaskKind::multi_choice: return "multi_choice";
    case TaskKind::generation: return "generation";
  }
  return "?";
}

std::string_view to_string(MetricKind m) {
  switch (m) {
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::f1: return "f1";
    case MetricKind::rouge_l: return "rouge_l";
    case MetricKind::exact_match: return "exact_match";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "multi_choice") return TaskKind::multi_choice;
  if (s == "generation") return TaskKind::generation;
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

MetricKind parse_metric(std::string_view s) {
  if (s == "accuracy") return MetricKind::accuracy;
  if (s == "f1") return MetricKind::f1;
  if (s == "rouge_l") return MetricKind::rouge_l;
  if (s == "exact_match") return MetricKind::exact_match;
  throw ConfigError("unknown metric '" + std::string(s) + "'");
}

MetricKind default_metric(TaskKind k) {
  return k == TaskKind::generation ? MetricKind::rouge_l : MetricKind::accuracy;
}

namespace {

bool needs_options(TaskKind k) { return k != TaskKind::generation; }

void validate_example(const Example& ex, TaskKind kind) {
  if (ex.target.empty()) throw ValidationError("record " + ex.id + ": empty target");
  if (needs_options(kind) && !ex.options) {
    throw SchemaError("record " + ex.id + ": missing field 'options' required for " + std::string(to_string(kind)));
  }
  if (ex.options) {
    const auto& o = *ex.options;
    if (std::find(o.begin(), o.end(), ex.target) == o.end()) {
      throw ValidationError("record " + ex.id + ": target '" + ex.target + "' is not among its options");
    }
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

const std::string* lookup_slot(const Example& ex, const std::string& name) {
  if (name == "input") return &ex.input;
  const auto l = lower(name);
  if (l == "target" || l == "answer" || l == "label") return &ex.target;
  auto it = ex.metadata.find(name);
  return it == ex.metadata.end() ? nullptr : &it->second;
}

std::string fill(const std::string& pattern, const Example& ex) {
  std::string out;
  out.reserve(pattern.size() + 32);
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const char c = pattern[i];
    if (c == '{' && i + 1 < pattern.size() && pattern[i + 1] == '{') {
      out += '{';
      ++i;
    } else if (c == '}' && i + 1 < pattern.size() && pattern[i + 1] == '}') {
      out += '}';
      ++i;
    } else if (c == '{') {
      const auto close = pattern.find('}', i + 1);
      if (close == std::string::npos) throw RenderError("unterminated slot in pattern '" + pattern + "'");
      const std::string name = pattern.substr(i + 1, close - i - 1);
      const std::string* value = lookup_slot(ex, name);
      if (value == nullptr) throw RenderError("missing slot " + name);
      out += *value;
      i = close;
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

void validate_dataset(const TaskDataset& ds) {
  std::set<std::string> ids;
  for (const auto& ex : ds.examples) {
    if (!ids.insert(ex.id).second) throw ValidationError("duplicate example id " + ex.id);
    validate_example(ex, ds.kind);
  }
}

DemonstrationPool::DemonstrationPool(std::vector<Example> examples) : examples_(std::move(examples)) {
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    if (!index_.emplace(examples_[i].id, i).second) {
      throw ValidationError("duplicate example id " + examples_[i].id + " in demonstration pool");
    }
  }
}

const Example* DemonstrationPool::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &examples_[it->second];
}

std::size_t DemonstrationPool::position(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw ValidationError("id " + std::string(id) + " not in demonstration pool");
  return it->second;
}

std::uint64_t DemonstrationPool::content_hash() const {
  Hasher h;
  for (const auto& ex : examples_) h.str(ex.id).str(ex.input).str(ex.target);
  return h.digest();
}

LoadResult load_dataset(const std::filesystem::path& path, std::string_view task_id, TaskKind kind,
                        const TaskTemplate& tmpl, std::optional<MetricKind> metric) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open dataset file " + path.string());
  LoadResult result;
  auto& ds = result.dataset;
  ds.task_id = std::string(task_id);
  ds.kind = kind;
  ds.template_ = tmpl;
  ds.metric = metric.value_or(default_metric(kind));

  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    Example ex;
    ex.id = rec.contains("id") && rec["id"].is_string() ? rec["id"].get<std::string>()
                                                          : "line-" + std::to_string(line_no);
    for (const char* field : {"input", "target"}) {
      if (!rec.contains(field) || !rec[field].is_string()) {
        throw SchemaError("record " + ex.id + ": missing field '" + field + "'");
      }
    }
    ex.task_id = ds.task_id;
    ex.input = rec["input"].get<std::string>();
    ex.target = rec["target"].get<std::string>();
    if (rec.contains("options") && !rec["options"].is_null()) {
      ex.options = rec["options"].get<std::vector<std::string>>();
    }
    if (rec.contains("metadata") && rec["metadata"].is_object()) {
      for (auto it = rec["metadata"].begin(); it != rec["metadata"].end(); ++it) {
        ex.metadata[it.key()] = it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
      }
    }
    if (!ids.insert(ex.id).second) throw ValidationError("duplicate example id " + ex.id);
    validate_example(ex, kind);
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.empty()) result.warnings.push_back("dataset " + path.string() + " contains no records");
  return result;
}

void save_dataset(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SchemaError("cannot write dataset file " + path.string());
  for (const auto& ex : examples) {
    json rec{{"id", ex.id}, {"input", ex.input}, {"target", ex.target}};
    if (ex.options) rec["options"] = *ex.options;
    if (!ex.metadata.empty()) rec["metadata"] = ex.metadata;
    out << rec.dump() << '\n';
  }
}

TaskTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open template file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("template " + path.string() + ": " + e.what());
  }
  TaskTemplate t;
  if (!j.contains("input_pattern")) throw SchemaError("template " + path.string() + ": missing input_pattern");
  t.input_pattern = j["input_pattern"].get<std::string>();
  t.answer_pattern = j.value("answer_pattern", t.answer_pattern);
  t.demo_separator = j.value("demo_separator", t.demo_separator);
  t.answer_prefix = j.value("answer_prefix", t.answer_prefix);
  return t;
}

std::string render_example(const TaskTemplate& tmpl, const Example& ex, bool include_target) {
  std::string out = fill(tmpl.input_pattern, ex);
  if (include_target) {
    out += tmpl.answer_prefix;
    out += fill(tmpl.answer_pattern, ex);
  }
  return out;
}

std::string assemble_prompt(std::span<const Example> demos, const Example& query, const TaskTemplate& tmpl) {
  std::string out;
  for (const auto& d : demos) {
    out += render_example(tmpl, d, true);
    out += tmpl.demo_separator;
  }
  out += render_example(tmpl, query, false);
  return out;
}

std::string answer_context(std::span<const Example> demos, const Example& query, const TaskTemplate& tmpl) {
  return assemble_prompt(demos, query, tmpl) + tmpl.answer_prefix;
}

}  // namespace genicl
