#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

namespace genicl {

/// 64-bit FNV-1a over canonical byte serializations. Used for content hashes
/// (models, pools, configs) that key caches and manifests.
class Hasher {
 public:
  Hasher& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Hasher& str(std::string_view s) {
    const std::uint64_t n = s.size();
    bytes(&n, sizeof n);
    return bytes(s.data(), s.size());
  }

  template <class T>
    requires std::is_arithmetic_v<T>
  Hasher& value(T v) {
    return bytes(&v, sizeof v);
  }

  template <class T>
    requires std::is_arithmetic_v<T>
  Hasher& values(std::span<const T> v) {
    value<std::uint64_t>(v.size());
    return bytes(v.data(), v.size_bytes());
  }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t h);

inline std::uint64_t hash_string(std::string_view s) { return Hasher{}.str(s).digest(); }

}  // namespace genicl
