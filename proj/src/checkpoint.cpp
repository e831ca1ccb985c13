#include "genicl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "genicl/errors.hpp"

namespace genicl {

namespace {

constexpr char kMagic[8] = {'G', 'E', 'N', 'I', 'C', 'L', 'C', 'K'};

using nlohmann::json;

json config_json(const ModelConfig& c) {
  return {{"n_layer", c.n_layer},     {"d_model", c.d_model},   {"n_head", c.n_head},
          {"d_ff", c.d_ff},           {"context_length", c.context_length},
          {"norm_eps", c.norm_eps},   {"init_std", c.init_std}, {"max_latent", c.max_latent}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.n_layer = j.at("n_layer").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_head = j.at("n_head").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.context_length = j.at("context_length").get<int>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.init_std = j.at("init_std").get<double>();
  c.max_latent = j.at("max_latent").get<int>();
  c.validate();
  return c;
}

/// Reads exactly n bytes or throws naming the offset where the data ran out.
class Reader {
 public:
  Reader(std::ifstream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  void read(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) {
      throw CheckpointError("checkpoint " + path_.string() + " truncated at byte offset " +
                            std::to_string(offset_ + got) + " while reading " + what + " (expected " +
                            std::to_string(n) + " more bytes)");
    }
    offset_ += n;
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::ifstream& in_;
  const std::filesystem::path& path_;
  std::uint64_t offset_ = 0;
};

template <class S, class T>
void read_params(Reader& r, std::size_t count, std::vector<T>& out) {
  std::vector<S> raw(count);
  r.read(raw.data(), count * sizeof(S), "parameters");
  out.assign(raw.begin(), raw.end());
}

}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelState<T>& model) {
  json header;
  header["config"] = config_json(model.config);
  header["vocab"] = model.vocab.tokens();
  header["seed"] = model.seed;
  header["precision"] = precision_of<T>() == Precision::f64 ? "f64" : "f32";
  header["param_count"] = model.params.size();
  json ranges = json::array();
  for (const auto& r : model.trainable) ranges.push_back({r.begin, r.end});
  header["trainable"] = ranges;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t header_len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(model.params.data()),
              static_cast<std::streamsize>(model.params.size() * sizeof(T)));
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(in, path);

  char magic[8];
  r.read(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  std::uint32_t version = 0;
  r.read(&version, sizeof version, "format version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path.string() + " has format version " + std::to_string(version) +
                          " but this build reads version " + std::to_string(kCheckpointVersion) +
                          "; re-export it with a matching build (no automatic migration exists)");
  }
  std::uint64_t header_len = 0;
  r.read(&header_len, sizeof header_len, "header length");
  if (header_len > (1u << 26)) throw CheckpointError("checkpoint header length implausible: " + std::to_string(header_len));
  std::string text(header_len, '\0');
  r.read(text.data(), text.size(), "header");

  Checkpoint<T> ck;
  std::string precision;
  std::size_t count = 0;
  try {
    const json header = json::parse(text);
    ck.model.config = config_from(header.at("config"));
    ck.model.vocab = Vocabulary(header.at("vocab").get<std::vector<std::string>>());
    ck.model.seed = header.at("seed").get<std::uint64_t>();
    precision = header.at("precision").get<std::string>();
    count = header.at("param_count").get<std::size_t>();
    for (const auto& range : header.at("trainable")) {
      ck.model.trainable.push_back(ParamRange{range.at(0).get<std::size_t>(), range.at(1).get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + " has a malformed header: " + e.what());
  }

  if (precision == "f32") {
    read_params<float>(r, count, ck.model.params);
  } else if (precision == "f64") {
    read_params<double>(r, count, ck.model.params);
  } else {
    throw CheckpointError("checkpoint " + path.string() + " has unknown precision '" + precision + "'");
  }
  char extra;
  if (in.read(&extra, 1); in.gcount() != 0) {
    throw CheckpointError("checkpoint " + path.string() + " has trailing bytes after offset " +
                          std::to_string(r.offset()));
  }
  const auto zeros = ModelState<T>::zeros(ck.model.config, ck.model.vocab);
  if (zeros.params.size() != count) {
    throw CheckpointError("checkpoint " + path.string() + " parameter count " + std::to_string(count) +
                          " does not match its architecture (" + std::to_string(zeros.params.size()) + ")");
  }
  ck.latent = find_latent(ck.model);
  return ck;
}

template void save_checkpoint<float>(const std::filesystem::path&, const ModelState<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ModelState<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace genicl
