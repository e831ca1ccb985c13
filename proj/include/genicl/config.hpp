#pragma once

// Resolved run configuration (defaults < config file < flags), task bundles on
// disk, and the append-only run manifest.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "genicl/contrastive.hpp"
#include "genicl/corpus.hpp"
#include "genicl/eval.hpp"
#include "genicl/lm.hpp"
#include "genicl/pipeline.hpp"
#include "genicl/synthetic.hpp"

namespace genicl {

struct RunConfig {
  std::uint64_t seed = 0;
  SyntheticTaskSpec synthetic;
  CopyCorpusSpec corpus;
  PretrainConfig pretrain;
  PipelineConfig pipeline;
  SelectionConfig selection;
  EvalOptions eval;
  ContrastiveConfig contrastive;
  int sample_n = 100;
  std::vector<double> ratio_edges;

  /// Defaults used when no config file is given.
  static RunConfig defaults();
  /// Overwrites only the keys present in `j`; unknown keys raise ConfigError.
  void merge(const nlohmann::json& j);
  /// Sets every sub-seed from the single top-level seed.
  void propagate_seed();
  nlohmann::json to_json() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

/// A task descriptor: train/test query files, the pool, template, kind and metric.
struct TaskBundle {
  TaskDataset train;
  TaskDataset test;
  DemonstrationPool pool;
  std::vector<std::string> warnings;
};

/// Reads a descriptor JSON {"task_id","kind","metric","template":{...},"train","test","pool"};
/// relative paths resolve against the descriptor's directory.
TaskBundle load_task_bundle(const std::filesystem::path& descriptor,
                            const std::optional<std::filesystem::path>& pool_override = std::nullopt);

/// Writes train.jsonl, test.jsonl, pool.jsonl and task.json into `dir`; returns the descriptor path.
std::filesystem::path save_task_bundle(const std::filesystem::path& dir, const TaskDataset& train,
                                       const TaskDataset& test, const DemonstrationPool& pool);

/// Content hash of a dataset's canonical serialization.
std::uint64_t dataset_hash(const TaskDataset& ds);

/// Content hash of a file's bytes (0 when it does not exist).
std::uint64_t file_hash(const std::filesystem::path& path);

inline constexpr int kArtifactFormatVersion = 1;

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::map<std::string, std::string> input_hashes;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;
  int format_version = kArtifactFormatVersion;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// Appends one JSON line.
void append_manifest(const std::filesystem::path& file, const RunManifest& m);
std::vector<RunManifest> read_manifests(const std::filesystem::path& file);

/// Removes latent tokens and their embedding rows: the plain LM the latent was trained on.
Model strip_latent(const Model& model);

/// Writes `text` to `path` atomically (temporary file + rename).
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace genicl
