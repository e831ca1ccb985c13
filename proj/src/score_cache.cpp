#include "genicl/score_cache.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <vector>

#include "genicl/errors.hpp"
#include "genicl/hash.hpp"

namespace genicl {

namespace {

std::vector<std::string_view> split_tabs(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find('\t', start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void check_id(std::string_view id) {
  if (id.empty() || id.find_first_of("\t\n\r") != std::string_view::npos) {
    throw ValidationError("score cache ids must be non-empty and free of tabs/newlines: '" + std::string(id) + "'");
  }
}

std::optional<std::uint64_t> parse_hex(std::string_view s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

std::string ScoreCache::encode_line(std::uint64_t model_hash, std::string_view query_id, std::string_view demo_id,
                                    LogProb value) {
  char num[64];
  std::snprintf(num, sizeof num, "%a", value.value);
  std::string body = hex64(model_hash) + '\t' + std::string(query_id) + '\t' + std::string(demo_id) + '\t' + num +
                     '\t' + std::to_string(value.token_count);
  return body + '\t' + hex64(hash_string(body));
}

std::optional<std::tuple<std::uint64_t, std::string, std::string, LogProb>> ScoreCache::decode_line(
    std::string_view line) {
  const auto fields = split_tabs(line);
  if (fields.size() != 6) return std::nullopt;
  const auto body = line.substr(0, line.size() - fields[5].size() - 1);
  const auto sum = parse_hex(fields[5]);
  if (!sum || *sum != hash_string(body)) return std::nullopt;
  const auto model = parse_hex(fields[0]);
  if (!model || fields[1].empty() || fields[2].empty()) return std::nullopt;
  const std::string num(fields[3]);
  char* end = nullptr;
  const double v = std::strtod(num.c_str(), &end);
  if (end != num.c_str() + num.size()) return std::nullopt;
  int count = 0;
  const auto [p, ec] = std::from_chars(fields[4].data(), fields[4].data() + fields[4].size(), count);
  if (ec != std::errc() || p != fields[4].data() + fields[4].size()) return std::nullopt;
  return std::tuple{*model, std::string(fields[1]), std::string(fields[2]), LogProb{v, count}};
}

ScoreCache::ScoreCache(std::filesystem::path file) : file_(std::move(file)) {
  std::ifstream in(file_);
  if (!in) return;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto rec = decode_line(line);
    if (!rec) {
      ++corrupt_;
      continue;
    }
    auto& [model, q, d, lp] = *rec;
    entries_[Key{model, std::move(q), std::move(d)}] = lp;
  }
}

std::optional<LogProb> ScoreCache::get(std::uint64_t model_hash, std::string_view query_id,
                                       std::string_view demo_id) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(Key{model_hash, std::string(query_id), std::string(demo_id)});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::put(std::uint64_t model_hash, std::string_view query_id, std::string_view demo_id, LogProb value) {
  check_id(query_id);
  check_id(demo_id);
  const std::string line = encode_line(model_hash, query_id, demo_id, value) + '\n';
  std::lock_guard lock(mu_);
  entries_[Key{model_hash, std::string(query_id), std::string(demo_id)}] = value;
  if (file_.empty()) return;
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  // One write call per record keeps lines whole under concurrent appenders.
  std::FILE* f = std::fopen(file_.c_str(), "ab");
  if (!f) throw Error("cannot append to score cache " + file_.string());
  std::fwrite(line.data(), 1, line.size(), f);
  std::fclose(f);
}

std::size_t ScoreCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::filesystem::path ScoreCache::default_dir() {
  if (const char* env = std::getenv("GENICL_CACHE_DIR"); env && *env) return env;
  return ".genicl_cache";
}

}  // namespace genicl
