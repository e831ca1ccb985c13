#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace genicl {

enum class TaskKind { classification, multi_choice, generation };
enum class MetricKind { accuracy, f1, rouge_l, exact_match };

std::string_view to_string(TaskKind k);
std::string_view to_string(MetricKind m);
/// Throws ConfigError on unknown names.
TaskKind parse_task_kind(std::string_view s);
MetricKind parse_metric(std::string_view s);

/// Metric used when a task file does not name one.
MetricKind default_metric(TaskKind k);

struct Example {
  std::string id;
  std::string task_id;
  std::string input;
  std::string target;
  std::optional<std::vector<std::string>> options;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const Example&, const Example&) = default;
};

/// Patterns reference slots as {Name}. Slot lookup: "input", then the target
/// aliases "target"/"answer"/"label" (any case), then example metadata.
/// "{{" and "}}" produce literal braces.
struct TaskTemplate {
  std::string input_pattern = "{input}";
  std::string answer_pattern = "{target}";
  std::string demo_separator = "\n\n";
  /// Text between the rendered input and its answer.
  std::string answer_prefix = " ";

  friend bool operator==(const TaskTemplate&, const TaskTemplate&) = default;
};

struct TaskDataset {
  std::string task_id;
  TaskKind kind = TaskKind::classification;
  std::vector<Example> examples;
  TaskTemplate template_;
  MetricKind metric = MetricKind::accuracy;
};

/// Validates the per-kind invariants (unique ids, non-empty targets, options
/// present and containing the target for option tasks). Throws ValidationError.
void validate_dataset(const TaskDataset& ds);

class DemonstrationPool {
 public:
  DemonstrationPool() = default;
  /// Throws ValidationError on duplicate ids.
  explicit DemonstrationPool(std::vector<Example> examples);

  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  const Example& operator[](std::size_t i) const { return examples_[i]; }
  const std::vector<Example>& examples() const { return examples_; }
  /// Exact id lookup; nullptr when absent.
  const Example* find(std::string_view id) const;
  /// Position of `id`; throws ValidationError when absent.
  std::size_t position(std::string_view id) const;

  /// Content hash over ids, inputs and targets in pool order.
  std::uint64_t content_hash() const;

 private:
  std::vector<Example> examples_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct LoadResult {
  TaskDataset dataset;
  std::vector<std::string> warnings;
};

/// Reads one JSON record per line: {"id","input","target","options"?,"metadata"?}.
LoadResult load_dataset(const std::filesystem::path& path, std::string_view task_id, TaskKind kind,
                        const TaskTemplate& tmpl, std::optional<MetricKind> metric = std::nullopt);

/// Writes records in the same format load_dataset reads.
void save_dataset(const std::filesystem::path& path, std::span<const Example> examples);

/// JSON object with input_pattern / answer_pattern / demo_separator / answer_prefix keys.
TaskTemplate load_template(const std::filesystem::path& path);

std::string render_example(const TaskTemplate& tmpl, const Example& ex, bool include_target);

/// Rendered demos (with targets) joined by the separator, then the query without target.
std::string assemble_prompt(std::span<const Example> demos, const Example& query, const TaskTemplate& tmpl);

/// Prompt plus the answer prefix: the exact text an answer is conditioned on.
std::string answer_context(std::span<const Example> demos, const Example& query, const TaskTemplate& tmpl);

}  // namespace genicl
