#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "test_util.hpp"
#include "tmmoe/metrics.hpp"
#include "tmmoe/synthetic.hpp"
#include "tmmoe/trainer.hpp"

namespace tmmoe {
namespace {

using testing::random_tensor;

ModelConfig small_config() {
  ModelConfig c;
  c.input_features = 5;
  c.window_steps = 8;
  c.horizon_steps = 4;
  c.tcn_filters = 8;
  c.num_experts = 3;
  c.expert_hidden = 8;
  c.gate_hidden = 4;
  c.tower_hidden = 8;
  return c;
}

WindowSet random_set(std::uint64_t seed, std::size_t n, const ModelConfig& c) {
  Rng rng(seed);
  WindowSet set;
  set.steps = c.window_steps;
  set.features = c.input_features;
  set.horizon = c.horizon_steps;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureWindow w;
    w.inputs = random_tensor(rng, {c.window_steps, c.input_features});
    w.label = intention_from_index(i % 3);
    w.longitudinal = random_tensor(rng, {c.horizon_steps});
    w.lateral = random_tensor(rng, {c.horizon_steps});
    w.vehicle_id = static_cast<std::int64_t>(i);
    set.windows.push_back(std::move(w));
  }
  return set;
}

TmmoeModel fresh(const ModelConfig& c, std::uint64_t seed = 1) {
  TmmoeModel m(c);
  m.initialize(seed);
  return m;
}

// ---- k-fold ---------------------------------------------------------------

TEST(Kfold, SingletonFolds) {
  const auto folds = kfold(10, 10, 3);
  ASSERT_EQ(folds.size(), 10u);
  for (const auto& f : folds) {
    EXPECT_EQ(f.validation.size(), 1u);
    EXPECT_EQ(f.train.size(), 9u);
  }
}

TEST(Kfold, PartitionProperty) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng.below(12);
    const std::size_t n = k + rng.below(60);
    const auto folds = kfold(n, k, rng.next_u64());
    std::vector<int> seen(n, 0);
    std::size_t lo = n, hi = 0;
    for (const auto& f : folds) {
      lo = std::min(lo, f.validation.size());
      hi = std::max(hi, f.validation.size());
      for (std::size_t i : f.validation) ++seen[i];
      EXPECT_EQ(f.train.size() + f.validation.size(), n);
      std::vector<std::size_t> both;
      std::set_intersection(f.train.begin(), f.train.end(), f.validation.begin(),
                            f.validation.end(), std::back_inserter(both));
      EXPECT_TRUE(both.empty());
    }
    EXPECT_LE(hi - lo, 1u);
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Kfold, TwentyThreeIntoTen) {
  const auto folds = kfold(23, 10, 8);
  std::set<std::size_t> all;
  for (const auto& f : folds) {
    EXPECT_TRUE(f.validation.size() == 2 || f.validation.size() == 3);
    all.insert(f.validation.begin(), f.validation.end());
  }
  EXPECT_EQ(all.size(), 23u);
}

TEST(Kfold, SeededAndValidated) {
  EXPECT_EQ(kfold(30, 5, 1)[2].validation, kfold(30, 5, 1)[2].validation);
  EXPECT_NE(kfold(30, 5, 1)[2].validation, kfold(30, 5, 2)[2].validation);
  EXPECT_THROW(kfold(4, 5, 1), std::invalid_argument);
  EXPECT_THROW(kfold(4, 0, 1), std::invalid_argument);
}

TEST(Holdout, SplitSizes) {
  const Fold f = holdout_split(600, 0.2, 3);
  EXPECT_EQ(f.validation.size(), 120u);
  EXPECT_EQ(f.train.size(), 480u);
  EXPECT_THROW(holdout_split(10, 1.0, 3), std::invalid_argument);
}

// ---- training loop -------------------------------------------------------

TEST(TrainLoop, ZeroEpochsRunsOneStep) {
  const ModelConfig c = small_config();
  const WindowSet set = random_set(1, 8, c);
  TrainConfig cfg;
  cfg.max_epochs = 0;
  const TmmoeModel start = fresh(c);
  const TrainResult r = train_loop(set, nullptr, start, cfg);
  EXPECT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.optimizer_steps, 1u);
  // One Adam step moves each parameter by at most the learning rate.
  for (const auto& [name, p] : r.model.params()) {
    const Tensor& p0 = start.params().get(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_LE(std::abs(p[i] - p0[i]), cfg.adam.learning_rate * (1 + 1e-9)) << name;
    }
  }
  EXPECT_EQ(train_loop(set, nullptr, fresh(c), [] {
              TrainConfig t;
              t.max_epochs = 3;
              t.batch_size = 3;
              return t;
            }())
                .optimizer_steps,
            9u);
}

TEST(TrainLoop, EmptyDatasetIsAnError) {
  const ModelConfig c = small_config();
  WindowSet empty = random_set(1, 0, c);
  EXPECT_THROW(train_loop(empty, nullptr, fresh(c), {}), std::invalid_argument);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(train_loop(random_set(1, 4, c), nullptr, fresh(c), bad), std::invalid_argument);
}

TEST(TrainLoop, OverfitsEightSamples) {
  const ModelConfig c = small_config();
  const WindowSet set = random_set(2, 8, c);
  TrainConfig cfg;
  cfg.max_epochs = 500;
  const TrainResult r = train_loop(set, nullptr, fresh(c), cfg);
  for (std::size_t e = 1; e < 10; ++e) {
    EXPECT_LE(r.history[e].train.joint, r.history[e - 1].train.joint) << "epoch " << e + 1;
  }
  EXPECT_LT(r.history.back().train.joint, 0.05);
}

TEST(TrainLoop, HistoryIsBitIdenticalAcrossRuns) {
  const ModelConfig c = small_config();
  const WindowSet set = random_set(3, 40, c), held = random_set(4, 10, c);
  TrainConfig cfg;
  cfg.max_epochs = 6;
  cfg.batch_size = 16;
  cfg.seed = 5;
  const auto a = train_loop(set, &held, fresh(c), cfg);
  const auto b = train_loop(set, &held, fresh(c), cfg);
  std::ostringstream ha, hb;
  write_history_csv(ha, a.history);
  write_history_csv(hb, b.history);
  EXPECT_EQ(ha.str(), hb.str());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].train.joint, b.history[e].train.joint);
    EXPECT_EQ(a.history[e].test->lateral, b.history[e].test->lateral);
  }
  cfg.seed = 6;
  const auto d = train_loop(set, &held, fresh(c), cfg);
  EXPECT_NE(d.history.back().train.joint, a.history.back().train.joint);
}

TEST(TrainLoop, KeepsBestHeldOutEpoch) {
  const ModelConfig c = small_config();
  const WindowSet set = random_set(3, 24, c), held = random_set(9, 12, c);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.batch_size = 8;
  const auto r = train_loop(set, &held, fresh(c), cfg);
  double best = INFINITY;
  std::size_t best_epoch = 0;
  for (const auto& h : r.history) {
    if (h.test->joint < best) best = h.test->joint, best_epoch = h.epoch;
  }
  EXPECT_EQ(r.best_epoch, best_epoch);
  TmmoeModel m = r.model;
  EXPECT_DOUBLE_EQ(evaluate_losses(m, held, 8).joint, best);
}

TEST(TrainLoop, StopPredicateEndsEarly) {
  const ModelConfig c = small_config();
  const WindowSet set = random_set(3, 24, c);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.batch_size = 8;
  std::size_t seen = 0;
  const auto r = train_loop(set, nullptr, fresh(c), cfg, {},
                            [&](const EpochRecord& e, const TmmoeModel&) {
                              ++seen;
                              return e.epoch == 4;
                            });
  EXPECT_EQ(seen, 4u);
  EXPECT_EQ(r.history.size(), 4u);
  EXPECT_EQ(r.optimizer_steps, 12u);
}

TEST(TrainLoop, HistoryCsvHeader) {
  std::ostringstream os;
  write_history_csv(os, {EpochRecord{1, {1, 2, 3, 4}, std::nullopt}});
  EXPECT_EQ(os.str(),
            "epoch,joint,L_c,L_r1,L_r2,test_joint,test_L_c,test_L_r1,test_L_r2\n1,1,2,3,4,,,,\n");
}

// ---- checkpoints -----------------------------------------------------------

TEST(Checkpoint, RoundTripReproducesForwardBitForBit) {
  const ModelConfig c = small_config();
  const WindowSet set = random_set(5, 16, c);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  const auto r = train_loop(set, nullptr, fresh(c), cfg);
  const auto dir = testing::scratch_dir("ckpt");
  save_checkpoint(dir, r.model, {{"data_hash", hash_hex(set.config_hash())}});
  const Checkpoint back = load_checkpoint(dir);
  EXPECT_EQ(back.manifest.at("data_hash"), hash_hex(set.config_hash()));
  EXPECT_EQ(back.manifest.at("config_hash"), hash_hex(manifest_hash(back.manifest)));
  EXPECT_TRUE(back.manifest.contains("timestamp"));
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Batch batch = make_batch(set, idx);
  const Predictions a = r.model.predict(batch), b = back.model.predict(batch);
  auto same = [](const Tensor& x, const Tensor& y) {
    return std::ranges::equal(x.data(), y.data());
  };
  EXPECT_TRUE(same(a.probabilities, b.probabilities));
  EXPECT_TRUE(same(a.longitudinal, b.longitudinal));
  EXPECT_TRUE(same(a.lateral, b.lateral));
}

TEST(Checkpoint, ManifestHashIgnoresTimestamp) {
  std::map<std::string, std::string> m{{"a", "1"}, {"timestamp", "x"}};
  const auto h = manifest_hash(m);
  m["timestamp"] = "y";
  m["config_hash"] = "z";
  EXPECT_EQ(manifest_hash(m), h);
  m["a"] = "2";
  EXPECT_NE(manifest_hash(m), h);
}

TEST(Checkpoint, MissingOrForeignDirectory) {
  const auto dir = testing::scratch_dir("ckpt_missing");
  EXPECT_THROW(load_checkpoint(dir), FormatError);
}

TEST(KeyValues, ParsesAndRejects) {
  std::istringstream in("# comment\n a = 1 \n\nb=two # trailing\n");
  const auto kv = read_key_values(in);
  EXPECT_EQ(kv.at("a"), "1");
  EXPECT_EQ(kv.at("b"), "two");
  std::istringstream bad("novalue\n");
  EXPECT_THROW(read_key_values(bad), std::invalid_argument);
}

// ---- metrics -----------------------------------------------------------------

std::optional<double> brute_auc(std::span<const double> s, std::span<const bool> pos) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      pairs += 1.0;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  if (pairs == 0.0) return std::nullopt;
  return num / pairs;
}

double trapezoid(const RocCurve& c) {
  double a = 0.0;
  for (std::size_t i = 1; i < c.fpr.size(); ++i) {
    a += (c.fpr[i] - c.fpr[i - 1]) * 0.5 * (c.tpr[i] + c.tpr[i - 1]);
  }
  return a;
}

TEST(Metrics, AccuracyCases) {
  const std::vector<std::size_t> y{0, 1, 2, 1};
  EXPECT_EQ(accuracy(y, y), 1.0);
  EXPECT_EQ(accuracy(std::vector<std::size_t>{1, 2, 0, 0}, y), 0.0);
  EXPECT_EQ(accuracy(std::vector<std::size_t>{0, 1, 2, 2}, y), 0.75);
  EXPECT_THROW(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}),
               std::invalid_argument);
  EXPECT_THROW(accuracy(std::vector<std::size_t>{1}, y), std::invalid_argument);
}

TEST(Metrics, AucCases) {
  const bool pos[] = {true, true, false, false};
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, pos), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, pos), 0.5);
  const std::vector<double> inverted{0.9, 0.3, 0.4, 0.1};
  EXPECT_EQ(auc(inverted, pos), 0.75);
  EXPECT_EQ(auc(inverted, pos), brute_auc(inverted, pos));
  const bool none[] = {false, false, false, false};
  EXPECT_FALSE(auc(inverted, none).has_value());
}

TEST(Metrics, AucMatchesBruteForceWithTies) {
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<double> s(n);
    auto flags = std::make_unique<bool[]>(n);
    const double levels = 1.0 + static_cast<double>(rng.below(20));
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::floor(rng.uniform() * levels) / levels;
      flags[i] = rng.uniform() < 0.4;
    }
    const std::span<const bool> pos(flags.get(), n);
    const auto a = auc(s, pos), b = brute_auc(s, pos);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (a) {
      EXPECT_NEAR(*a, *b, 1e-12);
      EXPECT_NEAR(trapezoid(roc_curve(s, pos)), *a, 1e-12);
    }
  }
}

TEST(Metrics, RocCurveShape) {
  const bool pos[] = {true, false, true, false, false};
  const auto c = roc_curve(std::vector<double>{0.9, 0.7, 0.7, 0.2, 0.1}, pos);
  EXPECT_EQ(c.fpr.front(), 0.0);
  EXPECT_EQ(c.tpr.front(), 0.0);
  EXPECT_EQ(c.fpr.back(), 1.0);
  EXPECT_EQ(c.tpr.back(), 1.0);
  EXPECT_EQ(c.fpr.size(), 5u);  // origin + four distinct scores
  EXPECT_TRUE(std::is_sorted(c.fpr.begin(), c.fpr.end()));
  EXPECT_TRUE(std::is_sorted(c.tpr.begin(), c.tpr.end()));
}

TEST(Metrics, RocAucPerClassAndMissing) {
  Tensor scores(Shape{4, 3}, std::vector<double>{0.8, 0.1, 0.1,  //
                                                 0.7, 0.2, 0.1,  //
                                                 0.1, 0.8, 0.1,  //
                                                 0.2, 0.7, 0.1});
  const Intention labels[] = {Intention::kLaneKeep, Intention::kLaneKeep, Intention::kLeft,
                              Intention::kLeft};
  const auto r = roc_auc(scores, labels);
  EXPECT_EQ(r.auc[0], 1.0);
  EXPECT_EQ(r.auc[1], 1.0);
  EXPECT_FALSE(r.auc[2].has_value());
  EXPECT_EQ(r.macro_auc, 1.0);
  scores[0] = 0.9;
  EXPECT_THROW(roc_auc(scores, labels), std::invalid_argument);
}

TEST(Metrics, RmseMaeCases) {
  const Tensor zero(Shape{2, 3}, 0.0), two(Shape{2, 3}, 2.0);
  EXPECT_EQ(rmse_mae(zero, zero).rmse, 0.0);
  EXPECT_EQ(rmse_mae(two, zero).rmse, 2.0);
  EXPECT_EQ(rmse_mae(two, zero).mae, 2.0);
  const auto e = rmse_mae(Tensor(Shape{2}, std::vector<double>{3.0, -4.0}), Tensor(Shape{2}, 0.0));
  EXPECT_DOUBLE_EQ(e.rmse, std::sqrt(12.5));
  EXPECT_DOUBLE_EQ(e.mae, 3.5);
  EXPECT_THROW(rmse_mae(zero, Tensor(Shape{3, 2}, 0.0)), std::invalid_argument);
}

TEST(Metrics, PowerMeanAndPermutationProperties) {
  Rng rng(41);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    Tensor a = random_tensor(rng, {n}), b = random_tensor(rng, {n});
    const auto e = rmse_mae(a, b);
    EXPECT_GE(e.rmse, e.mae - 1e-15);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    Tensor pa(Shape{n}), pb(Shape{n});
    for (std::size_t i = 0; i < n; ++i) pa[i] = a[perm[i]], pb[i] = b[perm[i]];
    EXPECT_NEAR(rmse_mae(pa, pb).rmse, e.rmse, 1e-12);
  }
}

TEST(Metrics, ReportJsonSchema) {
  MetricReport r;
  r.samples = 4;
  r.auc = {0.9, std::nullopt, 0.7};
  const auto j = nlohmann::json::parse(r.to_json());
  for (const char* k : {"LK", "LCL", "LCR"}) EXPECT_TRUE(j["auc"].contains(k)) << k;
  EXPECT_TRUE(j["auc"]["LCL"].is_null());
  EXPECT_EQ(j["samples"], 4);
  EXPECT_TRUE(j["lateral"].contains("rmse"));
}

TEST(Metrics, RocCsvColumns) {
  RocResult r;
  r.curves[0] = {{0.0, 1.0}, {0.0, 1.0}};
  std::ostringstream os;
  write_roc_csv(os, r);
  EXPECT_EQ(os.str(), "class,fpr,tpr\nLK,0,0\nLK,1,1\n");
}

TEST(Evaluate, DeterministicAndEndpointScoped) {
  const ModelConfig c = small_config();
  const WindowSet set = random_set(6, 30, c);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  const auto r = train_loop(set, nullptr, fresh(c), cfg);
  const auto a = evaluate(r.model, set, 7), b = evaluate(r.model, set, 30);
  EXPECT_EQ(a.report.to_json(), evaluate(r.model, set, 7).report.to_json());
  EXPECT_NEAR(a.report.lateral.rmse, b.report.lateral.rmse, 1e-12);
  EXPECT_EQ(a.report.samples, 30u);
  const auto end = evaluate(r.model, set, 7, true);
  EXPECT_TRUE(end.report.endpoint_only);
  EXPECT_NE(end.report.lateral.rmse, a.report.lateral.rmse);
  EXPECT_EQ(end.report.accuracy, a.report.accuracy);
}

TEST(Evaluate, ErrorsAreOnReconstructedPositions) {
  // A model predicting exactly the targets would score zero; shifting every
  // last position moves predictions and truth together.
  const ModelConfig c = small_config();
  WindowSet set = random_set(7, 12, c);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  const auto r = train_loop(set, nullptr, fresh(c), cfg);
  const auto before = evaluate(r.model, set).report;
  for (auto& w : set.windows) w.last_x += 1000.0, w.last_y -= 3.0;
  const auto after = evaluate(r.model, set).report;
  EXPECT_NEAR(before.longitudinal.rmse, after.longitudinal.rmse, 1e-9);
  EXPECT_NEAR(before.lateral.mae, after.lateral.mae, 1e-9);
}

// ---- ablation ----------------------------------------------------------------

ModelConfig ablation_config(const WindowSet& set) {
  ModelConfig c = small_config();
  c.input_features = set.features;
  c.window_steps = set.steps;
  c.horizon_steps = set.horizon;
  return c;
}

TEST(Ablation, EmptyDropMatchesBaseline) {
  const WindowSet set = conflict_corpus(6, 6, 3, 1);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  const auto r = ablation_run(set, {}, ablation_config(set), cfg);
  EXPECT_EQ(r.full.to_json(), r.dropped.to_json());
  EXPECT_THROW(ablation_run(set, {"speed"}, ablation_config(set), cfg), std::invalid_argument);
}

TEST(Ablation, OnlyDroppedColumnsDiffer) {
  const WindowSet set = conflict_corpus(4, 6, 3, 2);
  WindowSet dropped = set;
  const auto cols = feature::group_columns("coupling_degree");
  zero_features(dropped, cols);
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t k = 0; k < set.windows[i].inputs.size(); ++k) {
      const bool in_group = k % feature::kCount == feature::kCoupling;
      if (in_group) {
        EXPECT_EQ(dropped.windows[i].inputs[k], 0.0);
      } else {
        EXPECT_EQ(dropped.windows[i].inputs[k], set.windows[i].inputs[k]);
      }
    }
  }
}

TEST(Ablation, SameSeedsGiveSameRun) {
  const WindowSet set = conflict_corpus(6, 6, 3, 3);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  const auto a = ablation_run(set, {"coupling_degree"}, ablation_config(set), cfg);
  const auto b = ablation_run(set, {"coupling_degree"}, ablation_config(set), cfg);
  EXPECT_EQ(a.dropped.to_json(), b.dropped.to_json());
  EXPECT_EQ(a.full.to_json(), b.full.to_json());
}

}  // namespace
}  // namespace tmmoe
