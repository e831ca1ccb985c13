#include <gtest/gtest.h>

#include <cmath>

#include "genicl/errors.hpp"
#include "genicl/kto.hpp"
#include "genicl/synthetic.hpp"
#include "test_support.hpp"

using namespace genicl;
using genicl::testing::central_difference;
using genicl::testing::relative_error;
using genicl::testing::tiny_config;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Rig {
  SyntheticTask task;
  ModelF64 model;
  LatentPrompt latent;
  FrozenModel<double> reference;
  std::vector<PreferencePair> pairs;
  std::vector<AnswerPair> answers;

  explicit Rig(double perturb = 0.0, int d = 16) {
    SyntheticTaskSpec s;
    s.pool_size = 24;
    s.query_count = 6;
    s.test_count = 2;
    s.seed = 4;
    task = synth_task_generate(s);
    model = ModelF64::random(tiny_config(d, 2, 2, 64), Vocabulary::character_default(), 12);
    latent = init_latent(3, model, 2);
    reference = snapshot_reference(model);
    std::mt19937_64 rng(99);
    std::normal_distribution<double> nd(0.0, perturb);
    if (perturb > 0.0) {
      for (std::size_t i = latent.rows.begin; i < latent.rows.end; ++i) model.params[i] += nd(rng);
    }
    for (std::size_t i = 0; i < task.train.examples.size(); ++i) {
      const auto& q = task.train.examples[i];
      pairs.push_back(PreferencePair{q, task.pool[2 * i], task.pool[2 * i + 1], {}, {}});
      answers.push_back(build_answer_pair(q, task.train, 7));
    }
  }
};

}  // namespace

TEST(KtoObjective, IdentityIsMinusOne) {
  const std::vector<double> z(5, 0.0);
  const auto o = kto_objective(z, z, 0.0, 0.1, 1.0, 1.0);
  EXPECT_NEAR(o.loss, -1.0, 1e-15);
}

TEST(KtoObjective, HandValue) {
  const std::vector<double> rw{2.0}, rl{-1.0};
  const auto o = kto_objective(rw, rl, 0.0, 0.1, 1.0, 1.0);
  EXPECT_NEAR(o.loss, -(sig(0.2) + sig(0.1)), 1e-15);
  EXPECT_NEAR(o.loss, -1.074813, 1e-6);
}

TEST(KtoObjective, SaturationLimit) {
  const std::vector<double> rw{1e4}, rl{3.0};
  EXPECT_NEAR(kto_objective(rw, rl, 0.0, 0.1, 0.7, 0.0).loss, -0.7, 1e-12);
}

TEST(KtoObjective, AnalyticDerivativesMatchDifferences) {
  const std::vector<double> rw{0.3, -1.2, 2.0}, rl{-0.4, 0.8, 0.1};
  const double s = 0.05, beta = 0.1, lw = 1.3, ll = 0.6;
  const auto o = kto_objective(rw, rl, s, beta, lw, ll);
  const double h = 1e-6;
  for (std::size_t i = 0; i < rw.size(); ++i) {
    auto up = rw, dn = rw;
    up[i] += h, dn[i] -= h;
    const double fd = (kto_objective(up, rl, s, beta, lw, ll).loss - kto_objective(dn, rl, s, beta, lw, ll).loss) / (2 * h);
    EXPECT_NEAR(o.d_r_w[i], fd, 1e-9);
    EXPECT_LT(o.d_r_w[i], 0.0);
    auto lu = rl, ld = rl;
    lu[i] += h, ld[i] -= h;
    const double fl = (kto_objective(rw, lu, s, beta, lw, ll).loss - kto_objective(rw, ld, s, beta, lw, ll).loss) / (2 * h);
    EXPECT_NEAR(o.d_r_l[i], fl, 1e-9);
    EXPECT_GT(o.d_r_l[i], 0.0);
  }
}

TEST(KtoObjective, RaisingPreferredLogprobLowersLoss) {
  const std::vector<double> rl{0.2};
  double prev = kto_objective(std::vector<double>{-3.0}, rl, 0.0, 0.1, 1.0, 1.0).loss;
  for (double r = -2.5; r <= 3.0; r += 0.5) {
    const double cur = kto_objective(std::vector<double>{r}, rl, 0.0, 0.1, 1.0, 1.0).loss;
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(KtoObjective, ZeroPreferredWeightIgnoresPreferredBranch) {
  const std::vector<double> rl{0.4};
  const double a = kto_objective(std::vector<double>{-5.0}, rl, 0.02, 0.1, 0.0, 1.0).loss;
  const double b = kto_objective(std::vector<double>{7.0}, rl, 0.02, 0.1, 0.0, 1.0).loss;
  EXPECT_EQ(a, b);
}

TEST(Baseline, HandRatiosAndClamp) {
  const std::vector<double> r{0.2, -0.1, 0.3, 0.0};
  EXPECT_NEAR(kl_baseline_from_ratios(r, 0.1), 0.1 * (0.4 / 4.0), 1e-15);
  const std::vector<double> neg{-0.2, 0.1, -0.3};
  EXPECT_EQ(kl_baseline_from_ratios(neg, 0.1), 0.0);
  EXPECT_EQ(kl_baseline_from_ratios(std::vector<double>{}, 0.1), 0.0);
}

TEST(Baseline, MismatchedPairingShiftsQueries) {
  Rig s;
  std::vector<Example> qs, ds;
  for (int i = 0; i < 3; ++i) qs.push_back(s.task.train.examples[i]), ds.push_back(s.task.pool[i]);
  const auto items = mismatched_items(s.model.vocab, s.latent, Direction::latent_given_demo, qs, ds, {},
                                      s.task.train.template_);
  ASSERT_EQ(items.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    const auto want = latent_given_tokens(s.model.vocab, s.latent, ds[i], qs[(i + 1) % 3], s.task.train.template_);
    EXPECT_EQ(items[i].context, want.context);
    EXPECT_EQ(items[i].target, want.target);
  }
  EXPECT_TRUE(mismatched_items(s.model.vocab, s.latent, Direction::latent_given_demo,
                               std::span<const Example>(qs.data(), 1), std::span<const Example>(ds.data(), 1), {},
                               s.task.train.template_)
                  .empty());
}

TEST(Baseline, IdenticalModelsGiveZeroAndSmallBatchWarns) {
  Rig s;
  ReferenceScorer<double> ref(*s.reference);
  std::vector<Example> qs, ds;
  for (int i = 0; i < 4; ++i) qs.push_back(s.task.train.examples[i]), ds.push_back(s.task.pool[i]);
  const auto items = mismatched_items(s.model.vocab, s.latent, Direction::latent_given_demo, qs, ds, {},
                                      s.task.train.template_);
  const auto b = estimate_ref_baseline<double>(items, s.model, ref, 0.1);
  EXPECT_EQ(b.value, 0.0);
  EXPECT_EQ(b.raw, 0.0);
  EXPECT_FALSE(b.warning);
  const auto one = estimate_ref_baseline<double>(std::span<const Encoded>(items.data(), 1), s.model, ref, 0.1);
  EXPECT_TRUE(one.warning);
  EXPECT_EQ(one.value, 0.0);
}

TEST(KtoLoss, PolicyEqualsReferenceGivesMinusOne) {
  Rig s;
  ReferenceScorer<double> ref(*s.reference);
  TrainConfig cfg;
  const auto d = demo_loss<double>(s.pairs, s.model, ref, s.latent, cfg, s.task.train.template_);
  const auto a = answer_loss<double>(s.answers, s.model, ref, s.latent, cfg, s.task.train.template_);
  EXPECT_NEAR(d.loss_value, -1.0, 1e-12);
  EXPECT_NEAR(a.loss_value, -1.0, 1e-12);
  EXPECT_EQ(d.ref_baseline, 0.0);
  EXPECT_EQ(a.ref_baseline, 0.0);
  EXPECT_EQ(d.mean_log_ratio_preferred, 0.0);
}

TEST(LogRatio, ZeroForIdenticalModelsAndPure) {
  Rig s;
  const auto& q = s.task.train.examples[0];
  EXPECT_EQ(log_ratio(s.model, *s.reference, s.latent, q, s.task.pool[0], s.task.train.template_), 0.0);
  Rig p(0.3);
  const double a = log_ratio(p.model, *p.reference, p.latent, q, p.task.pool[0], p.task.train.template_);
  const double b = log_ratio(p.model, *p.reference, p.latent, q, p.task.pool[0], p.task.train.template_);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, 0.0);
}

TEST(LogRatio, SignFollowsFirstOrderExpansion) {
  Rig s;
  const auto& q = s.task.train.examples[1];
  const auto& demo = s.task.pool[3];
  const auto enc = encode_item(s.model.vocab, s.latent, Direction::latent_given_demo, q, &demo, {},
                               s.task.train.template_);
  const auto seq = score_sequence(s.model, std::span<const int>(enc.context), std::span<const int>(enc.target));
  std::vector<double> g(s.model.params.size(), 0.0);
  accumulate_logprob_grad(s.model, seq, 1.0, std::span<double>(g), false);
  for (const double dir : {1.0, -1.0}) {
    auto m = s.model;
    for (std::size_t i = s.latent.rows.begin; i < s.latent.rows.end; ++i) m.params[i] += dir * 1e-3 * g[i];
    const double r = log_ratio(m, *s.reference, enc);
    EXPECT_EQ(r > 0.0, dir > 0.0) << r;
  }
}

TEST(LogRatio, IncompatibleReferenceIsConfigError) {
  Rig s;
  auto other = ModelF64::random(tiny_config(16, 2, 2, 64), Vocabulary::character_default(), 12);
  const auto& q = s.task.train.examples[0];
  EXPECT_THROW(log_ratio(s.model, other, s.latent, q, s.task.pool[0], s.task.train.template_), ConfigError);
}

namespace {

// Loss as a function of θ with the baseline pinned at its value at the base point.
template <class LossFn, class Items>
void check_gradient(Rig& s, LossFn loss_fn, const Items& batch, Direction dir) {
  ReferenceScorer<double> ref(*s.reference);
  TrainConfig cfg;
  cfg.beta = 0.5;
  cfg.lambda_w = 1.0;
  cfg.lambda_l = 0.8;
  std::vector<double> grad(s.model.params.size(), 0.0);
  const auto st = loss_fn(batch, s.model, ref, s.latent, cfg, s.task.train.template_, &grad);
  const double s_ref = st.ref_baseline;

  std::vector<Encoded> win, lose;
  for (const auto& item : batch) {
    if constexpr (std::is_same_v<std::decay_t<decltype(item)>, PreferencePair>) {
      win.push_back(encode_item(s.model.vocab, s.latent, dir, item.query, &item.preferred, {}, s.task.train.template_));
      lose.push_back(encode_item(s.model.vocab, s.latent, dir, item.query, &item.non_preferred, {}, s.task.train.template_));
    } else {
      win.push_back(encode_item(s.model.vocab, s.latent, dir, item.query, nullptr, item.y_w, s.task.train.template_));
      lose.push_back(encode_item(s.model.vocab, s.latent, dir, item.query, nullptr, item.y_l, s.task.train.template_));
    }
  }
  auto f = [&]() {
    std::vector<double> rw, rl;
    for (const auto& e : win) rw.push_back(log_ratio(s.model, *s.reference, e));
    for (const auto& e : lose) rl.push_back(log_ratio(s.model, *s.reference, e));
    return kto_objective(rw, rl, s_ref, cfg.beta, cfg.lambda_w, cfg.lambda_l).loss;
  };
  EXPECT_NEAR(f(), st.loss_value, 1e-12);
  const auto idx = genicl::testing::sample_indices(s.latent.rows.begin, s.latent.rows.end, 24, 5);
  for (const auto i : idx) {
    const double fd = central_difference(s.model, i, f);
    EXPECT_LT(relative_error(grad[i], fd), 1e-5) << "coord " << i << " analytic " << grad[i] << " fd " << fd;
  }
}

}  // namespace

TEST(KtoLoss, DemoGradientMatchesFiniteDifferences) {
  Rig s(0.4);
  check_gradient(
      s, [](auto&&... a) { return demo_loss<double>(a...); }, s.pairs, Direction::latent_given_demo);
}

TEST(KtoLoss, AnswerGradientMatchesFiniteDifferences) {
  Rig s(0.4);
  check_gradient(
      s, [](auto&&... a) { return answer_loss<double>(a...); }, s.answers, Direction::answer_given_latent);
}

TEST(ReferenceScorerTest, CachedEqualsDirect) {
  Rig s(0.2);
  ReferenceScorer<double> ref(*s.reference);
  const auto enc = encode_item(s.model.vocab, s.latent, Direction::latent_given_demo, s.task.train.examples[0],
                               &s.task.pool[0], {}, s.task.train.template_);
  const double direct =
      sequence_logprob(*s.reference, std::span<const int>(enc.context), std::span<const int>(enc.target)).value;
  EXPECT_EQ(ref.logprob(enc), direct);
  EXPECT_EQ(ref.logprob(enc), direct);
}

namespace {

std::vector<TrainQuery> train_queries(const Rig& s) {
  std::vector<TrainQuery> out;
  for (const auto& p : s.pairs) out.push_back(TrainQuery{p.query, {p}});
  return out;
}

TrainConfig short_cfg(int steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 3;
  c.warmup_steps = 0;
  c.eta1 = 1e-2;
  c.eta2 = 1e-2;
  return c;
}

}  // namespace

TEST(Train, ZeroStepsLeavesThetaUnchanged) {
  Rig s;
  const auto before = s.model.params;
  const auto q = train_queries(s);
  const auto r = train<double>(q, s.task.train, s.model, s.latent, *s.reference, short_cfg(0));
  EXPECT_EQ(s.model.params, before);
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, ZeroLearningRateLogsButDoesNotMove) {
  Rig s;
  const auto before = s.model.params;
  auto cfg = short_cfg(1);
  cfg.eta1 = cfg.eta2 = 0.0;
  const auto q = train_queries(s);
  const auto r = train<double>(q, s.task.train, s.model, s.latent, *s.reference, cfg);
  EXPECT_EQ(s.model.params, before);
  ASSERT_EQ(r.log.size(), 1u);
  ASSERT_TRUE(r.log[0].demo.has_value());
  ASSERT_TRUE(r.log[0].answer.has_value());
  EXPECT_NEAR(r.log[0].demo->loss_value, -1.0, 1e-12);
}

TEST(Train, OnlyLatentRowsMove) {
  Rig s;
  const auto before = s.model.params;
  const auto q = train_queries(s);
  train<double>(q, s.task.train, s.model, s.latent, *s.reference, short_cfg(4));
  bool latent_moved = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const bool in_latent = i >= s.latent.rows.begin && i < s.latent.rows.end;
    if (in_latent) latent_moved = latent_moved || s.model.params[i] != before[i];
    else ASSERT_EQ(s.model.params[i], before[i]) << i;
  }
  EXPECT_TRUE(latent_moved);
}

TEST(Train, DisabledDemoLossNeverUpdatesDemoLevel) {
  Rig s;
  auto cfg = short_cfg(4);
  cfg.use_demo_loss = false;
  const auto q = train_queries(s);
  const auto r = train<double>(q, s.task.train, s.model, s.latent, *s.reference, cfg);
  EXPECT_EQ(r.demo_updates, 0);
  EXPECT_EQ(r.answer_updates, 4);
  for (const auto& rec : r.log) EXPECT_FALSE(rec.demo.has_value());
}

TEST(Train, DemoLossDecreasesOnRepeatedBatch) {
  Rig s;
  auto cfg = short_cfg(30);
  cfg.use_answer_loss = false;
  const auto q = train_queries(s);
  const auto r = train<double>(q, s.task.train, s.model, s.latent, *s.reference, cfg);
  ASSERT_EQ(r.log.size(), 30u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) first += r.log[i].demo->loss_value, last += r.log[20 + i].demo->loss_value;
  EXPECT_LT(last, first);
}

TEST(Train, RequiresInstalledLatent) {
  Rig s;
  auto plain = ModelF64::random(tiny_config(16, 2, 2, 64), Vocabulary::character_default(), 12);
  const auto q = train_queries(s);
  EXPECT_THROW(train<double>(q, s.task.train, plain, s.latent, *s.reference, short_cfg(1)), ConfigError);
  auto bad = short_cfg(1);
  bad.beta = 0.0;
  EXPECT_THROW(train<double>(q, s.task.train, s.model, s.latent, *s.reference, bad), ConfigError);
}
