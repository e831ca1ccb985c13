#pragma once

// Binary checkpoints: an 8-byte magic, a format version, a JSON header
// (architecture, vocabulary, seed, precision, trainable ranges) and the raw
// parameter array in the stored precision.

#include <cstdint>
#include <filesystem>

#include "genicl/lm.hpp"
#include "genicl/model.hpp"

namespace genicl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
struct Checkpoint {
  ModelState<T> model;
  /// Rebuilt from the vocabulary; empty when the model carries no latent tokens.
  LatentPrompt latent;
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelState<T>& model);

/// Loads into precision T. A stored precision different from T is converted;
/// scores are bit-exact only when the precisions match.
template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace genicl
