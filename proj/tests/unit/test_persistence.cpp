#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "genicl/checkpoint.hpp"
#include "genicl/config.hpp"
#include "genicl/errors.hpp"
#include "genicl/score_cache.hpp"
#include "test_support.hpp"

using namespace genicl;
using genicl::testing::tiny_config;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "genicl_test_persist";
  fs::create_directories(dir);
  const auto p = dir / name;
  fs::remove(p);
  return p;
}

std::vector<double> probe_scores(const Model& m) {
  const auto lat = find_latent(m);
  std::vector<double> out;
  const std::vector<std::string> texts{"abcK", "xyzQ\n3", "hello world", "{}[]"};
  for (const auto& t : texts) {
    std::vector<int> ctx{m.vocab.bos()};
    const auto body = m.vocab.encode(t);
    ctx.insert(ctx.end(), body.begin(), body.end());
    std::vector<int> tgt = m.vocab.encode("7");
    if (lat.length() > 0) tgt = lat.token_ids;
    out.push_back(sequence_logprob(m, std::span<const int>(ctx), std::span<const int>(tgt)).value);
  }
  return out;
}

Model probe_model() {
  auto m = Model::random(tiny_config(), Vocabulary::character_default(), 21);
  init_latent(3, m, 5);
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto m = probe_model();
  const auto p = scratch("rt.ck");
  save_checkpoint(p, m);
  const auto ck = load_checkpoint<float>(p);
  EXPECT_EQ(ck.model.params, m.params);
  EXPECT_EQ(ck.model.vocab, m.vocab);
  EXPECT_EQ(ck.model.config, m.config);
  EXPECT_EQ(ck.model.trainable, m.trainable);
  EXPECT_EQ(ck.model.content_hash(), m.content_hash());
  EXPECT_EQ(ck.latent.token_ids, find_latent(m).token_ids);
  EXPECT_EQ(probe_scores(ck.model), probe_scores(m));
}

TEST(Checkpoint, DoubleRoundTrip) {
  auto m = ModelF64::random(tiny_config(), Vocabulary::character_default(), 4);
  const auto p = scratch("rt64.ck");
  save_checkpoint(p, m);
  EXPECT_EQ(load_checkpoint<double>(p).model.params, m.params);
  const auto as_float = load_checkpoint<float>(p);
  EXPECT_EQ(as_float.model.params.size(), m.params.size());
}

TEST(Checkpoint, TruncationNamesOffset) {
  const auto m = probe_model();
  const auto p = scratch("trunc.ck");
  save_checkpoint(p, m);
  const auto size = fs::file_size(p);
  fs::resize_file(p, size - 10);
  try {
    load_checkpoint<float>(p);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("truncated at byte offset"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, VersionMismatchIsExplicit) {
  const auto m = probe_model();
  const auto p = scratch("ver.ck");
  save_checkpoint(p, m);
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = kCheckpointVersion + 1;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  try {
    load_checkpoint<float>(p);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("migration"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, BadMagicAndTrailingBytes) {
  const auto p = scratch("junk.ck");
  std::ofstream(p) << "definitely not a checkpoint";
  EXPECT_THROW(load_checkpoint<float>(p), CheckpointError);
  const auto q = scratch("trail.ck");
  save_checkpoint(q, probe_model());
  std::ofstream(q, std::ios::app | std::ios::binary) << "x";
  EXPECT_THROW(load_checkpoint<float>(q), CheckpointError);
}

// Run A writes a checkpoint and its probe scores; run B is a separate process
// (this binary re-invoked) that loads it and writes its own probe scores.
TEST(Checkpoint, CrossProcessProbeScoresMatch) {
  std::error_code ec;
  const auto self = fs::read_symlink("/proc/self/exe", ec);
  if (ec) GTEST_SKIP() << "cannot locate own executable";
  const auto ck = scratch("xproc.ck");
  const auto out = scratch("xproc.scores");
  const auto m = probe_model();
  save_checkpoint(ck, m);
  const std::string cmd = "GENICL_CHILD_CKPT=" + ck.string() + " GENICL_CHILD_OUT=" + out.string() + " " + self.string() +
                          " --gtest_filter=CheckpointChild.WriteProbeScores > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  std::ifstream in(out);
  std::vector<double> child;
  for (std::string tok; in >> tok;) child.push_back(std::strtod(tok.c_str(), nullptr));
  EXPECT_EQ(child, probe_scores(m));
}

TEST(CheckpointChild, WriteProbeScores) {
  const char* ck = std::getenv("GENICL_CHILD_CKPT");
  const char* out = std::getenv("GENICL_CHILD_OUT");
  if (ck == nullptr || out == nullptr) GTEST_SKIP() << "only runs as the child of the cross-process test";
  const auto loaded = load_checkpoint<float>(ck);
  std::ofstream f(out);
  for (double v : probe_scores(loaded.model)) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a\n", v);
    f << buf;
  }
}

TEST(ScoreCache, PutGetAndModelHashIsolation) {
  ScoreCache c;
  c.put(1, "q", "d", LogProb{-1.25, 3});
  const auto hit = c.get(1, "q", "d");
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->value, -1.25);
  EXPECT_EQ(hit->token_count, 3);
  EXPECT_FALSE(c.get(2, "q", "d"));
  EXPECT_THROW(c.put(1, "a\tb", "d", LogProb{}), ValidationError);
}

TEST(ScoreCache, ThousandPutsSurviveReload) {
  const auto p = scratch("cache.tsv");
  std::vector<std::tuple<std::uint64_t, std::string, std::string, LogProb>> put;
  {
    ScoreCache c(p);
    for (int i = 0; i < 1000; ++i) {
      const LogProb lp{-std::ldexp(1.0 + i * 1e-7, -i % 40) / 3.0, i % 7};
      put.emplace_back(static_cast<std::uint64_t>(i % 5), "q" + std::to_string(i), "d" + std::to_string(i * 7), lp);
      c.put(std::get<0>(put.back()), std::get<1>(put.back()), std::get<2>(put.back()), lp);
    }
  }
  const ScoreCache again(p);
  EXPECT_EQ(again.size(), 1000u);
  EXPECT_EQ(again.corrupt_lines(), 0u);
  for (const auto& [h, q, d, lp] : put) {
    const auto got = again.get(h, q, d);
    ASSERT_TRUE(got);
    EXPECT_EQ(got->value, lp.value);
    EXPECT_EQ(got->token_count, lp.token_count);
  }
}

TEST(ScoreCache, CorruptLinesAreSkippedAndCounted) {
  const auto p = scratch("corrupt.tsv");
  {
    ScoreCache c(p);
    c.put(7, "q1", "d1", LogProb{-2.0, 1});
    c.put(7, "q2", "d2", LogProb{-3.0, 1});
  }
  {
    std::ofstream f(p, std::ios::app);
    f << "garbage line\n";
    auto line = ScoreCache::encode_line(7, "q3", "d3", LogProb{-4.0, 1});
    line[line.size() - 1] = line.back() == '0' ? '1' : '0';
    f << line << "\n";
    f << ScoreCache::encode_line(7, "q4", "d4", LogProb{-5.0, 2}).substr(0, 12);
  }
  const ScoreCache c(p);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.corrupt_lines(), 3u);
  EXPECT_FALSE(c.get(7, "q3", "d3"));
}

TEST(ScoreCache, LatestPutWins) {
  const auto p = scratch("latest.tsv");
  {
    ScoreCache c(p);
    c.put(1, "q", "d", LogProb{-1.0, 1});
    c.put(1, "q", "d", LogProb{-2.0, 1});
  }
  EXPECT_EQ(ScoreCache(p).get(1, "q", "d")->value, -2.0);
}

TEST(RunConfigTest, PrecedenceDefaultsFileFlags) {
  const auto p = scratch("cfg.json");
  std::ofstream(p) << R"({"seed": 9, "train": {"steps": 50}, "selection": {"K": 4}})";
  auto c = load_run_config(p);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.pipeline.train.steps, 50);
  EXPECT_EQ(c.pipeline.train.eta1, RunConfig::defaults().pipeline.train.eta1);
  EXPECT_EQ(c.selection.K, 4);
  EXPECT_EQ(c.eval.K, 4);
  EXPECT_EQ(c.pipeline.train.seed, 9u);
  EXPECT_EQ(c.synthetic.seed, 9u);
  // Round trip through the resolved JSON.
  auto d = RunConfig::defaults();
  d.merge(c.to_json());
  EXPECT_EQ(d.to_json(), c.to_json());
}

TEST(RunConfigTest, UnknownKeysAndBadTypesAreConfigErrors) {
  auto c = RunConfig::defaults();
  EXPECT_THROW(c.merge(nlohmann::json::parse(R"({"trian": {}})")), ConfigError);
  EXPECT_THROW(c.merge(nlohmann::json::parse(R"({"train": {"stepz": 1}})")), ConfigError);
  EXPECT_THROW(c.merge(nlohmann::json::parse(R"({"train": {"steps": "many"}})")), ConfigError);
}

TEST(Manifest, AppendOnlyRoundTrip) {
  const auto p = scratch("manifest.jsonl");
  RunManifest a;
  a.command = "eval";
  a.config = RunConfig::defaults().to_json();
  a.input_hashes = {{"pool", "00ff"}};
  a.outputs = {"x.json"};
  a.seed = 3;
  a.wall_clock_seconds = 1.5;
  append_manifest(p, a);
  const auto first = slurp(p);
  auto b = a;
  b.command = "train";
  append_manifest(p, b);
  EXPECT_EQ(slurp(p).substr(0, first.size()), first);
  const auto all = read_manifests(p);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].command, "eval");
  EXPECT_EQ(all[1].command, "train");
  EXPECT_EQ(all[0].config, a.config);
  EXPECT_EQ(all[0].input_hashes, a.input_hashes);
  EXPECT_EQ(all[0].format_version, kArtifactFormatVersion);
}

TEST(TaskBundle, SaveLoadRoundTrip) {
  SyntheticTaskSpec s;
  s.pool_size = 20;
  s.query_count = 5;
  s.test_count = 3;
  const auto t = synth_task_generate(s);
  const auto dir = fs::temp_directory_path() / "genicl_test_persist" / "bundle";
  const auto desc = save_task_bundle(dir, t.train, t.test, t.pool);
  const auto b = load_task_bundle(desc);
  EXPECT_EQ(dataset_hash(b.train), dataset_hash(t.train));
  EXPECT_EQ(dataset_hash(b.test), dataset_hash(t.test));
  EXPECT_EQ(b.pool.content_hash(), t.pool.content_hash());
  EXPECT_EQ(b.train.template_, t.train.template_);
}

TEST(StripLatent, RecoversBaseModel) {
  const auto base = Model::random(tiny_config(), Vocabulary::character_default(), 2);
  auto with = base;
  init_latent(4, with, 1);
  const auto stripped = strip_latent(with);
  EXPECT_EQ(stripped.content_hash(), base.content_hash());
  EXPECT_EQ(strip_latent(base).content_hash(), base.content_hash());
}
