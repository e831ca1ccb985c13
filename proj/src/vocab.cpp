#include "genicl/vocab.hpp"

#include <cstdio>

#include "genicl/errors.hpp"
#include "genicl/hash.hpp"

namespace genicl {

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) { rebuild(); }

Vocabulary Vocabulary::character_default() {
  std::vector<std::string> t{"<bos>", "<eos>", "<unk>", "\n", "\t"};
  for (int c = 32; c < 127; ++c) t.emplace_back(1, static_cast<char>(c));
  return Vocabulary(std::move(t));
}

void Vocabulary::rebuild() {
  index_.clear();
  byte_to_id_.fill(-1);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& tok = tokens_[i];
    if (tok.empty()) throw ConfigError("vocabulary contains an empty token at position " + std::to_string(i));
    if (!index_.emplace(tok, static_cast<int>(i)).second) {
      throw ConfigError("duplicate vocabulary token '" + tok + "'");
    }
    if (tok.size() == 1) byte_to_id_[static_cast<unsigned char>(tok[0])] = static_cast<int>(i);
  }
  bos_ = find("<bos>");
  eos_ = find("<eos>");
  unk_ = find("<unk>");
}

int Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) {
    int id = byte_to_id_[static_cast<unsigned char>(c)];
    if (id < 0) {
      if (unk_ < 0) throw ConfigError("character outside vocabulary and no <unk> token");
      id = unk_;
    }
    ids.push_back(id);
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    const auto& tok = token(id);
    if (tok.size() == 1) out += tok;
  }
  return out;
}

int Vocabulary::append_special(const std::string& token) {
  if (token.size() < 2) throw ConfigError("special tokens must be longer than one character");
  if (contains(token)) throw ConfigError("token '" + token + "' already in vocabulary");
  tokens_.push_back(token);
  rebuild();
  return static_cast<int>(tokens_.size() - 1);
}

bool Vocabulary::is_special(int id) const { return token(id).size() != 1; }

}  // namespace genicl
