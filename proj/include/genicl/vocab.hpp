#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace genicl {

/// Character-level vocabulary. Single-byte tokens encode text; multi-character
/// tokens such as "<bos>" or "<latent:3>" are specials that no text can produce.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  /// <bos>, <eos>, <unk>, newline, tab, then printable ASCII.
  static Vocabulary character_default();

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  /// -1 when absent.
  int find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token) >= 0; }

  int bos() const { return bos_; }
  int eos() const { return eos_; }
  int unk() const { return unk_; }

  /// Unknown characters map to <unk> (or throw when no <unk> exists).
  std::vector<int> encode(std::string_view text) const;
  /// Specials are dropped.
  std::string decode(const std::vector<int>& ids) const;

  /// Appends a special token and returns its id; throws if it already exists.
  int append_special(const std::string& token);

  bool is_special(int id) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void rebuild();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::array<int, 256> byte_to_id_{};
  int bos_ = -1;
  int eos_ = -1;
  int unk_ = -1;
};

}  // namespace genicl
