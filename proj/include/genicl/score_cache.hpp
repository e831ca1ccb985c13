#pragma once

// Persistent (model hash, query id, demo id) -> LogProb cache. The file is an
// append-only log of tab-separated lines; each line carries an FNV checksum so
// torn or edited lines are skipped (and counted) on load.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>

#include "genicl/lm.hpp"

namespace genicl {

class ScoreCache {
 public:
  /// Memory-only cache.
  ScoreCache() = default;
  /// Loads `file` if it exists; later puts are appended to it.
  explicit ScoreCache(std::filesystem::path file);

  std::optional<LogProb> get(std::uint64_t model_hash, std::string_view query_id, std::string_view demo_id) const;
  /// Ids may not contain tabs or newlines (ValidationError).
  void put(std::uint64_t model_hash, std::string_view query_id, std::string_view demo_id, LogProb value);

  std::size_t size() const;
  std::size_t corrupt_lines() const { return corrupt_; }
  const std::filesystem::path& file() const { return file_; }

  /// $GENICL_CACHE_DIR when set, otherwise ".genicl_cache".
  static std::filesystem::path default_dir();

  /// The exact line written for one record (without the newline).
  static std::string encode_line(std::uint64_t model_hash, std::string_view query_id, std::string_view demo_id,
                                 LogProb value);
  /// nullopt when the line is malformed or its checksum does not match.
  static std::optional<std::tuple<std::uint64_t, std::string, std::string, LogProb>> decode_line(
      std::string_view line);

 private:
  using Key = std::tuple<std::uint64_t, std::string, std::string>;
  std::filesystem::path file_;
  std::map<Key, LogProb, std::less<>> entries_;
  std::size_t corrupt_ = 0;
  mutable std::mutex mu_;
};

}  // namespace genicl
