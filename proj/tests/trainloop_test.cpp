#include "pan/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "pan/synth.hpp"

namespace pan {
namespace {

// Small but real data: full-length 2816-sample windows, few repetitions.
Dataset small_data(std::size_t subjects, std::size_t reps, double noise, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.subjects = subjects;
  cfg.seed = seed;
  cfg.noise = noise;
  cfg.protocol.reps = reps;
  return generate_dataset(cfg);
}

TrainConfig quick_train(std::size_t epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  return cfg;
}

std::vector<double> snapshot(PainAttnNet& model) {
  std::vector<double> out;
  for (const ParamRef& p : model.parameters()) {
    out.insert(out.end(), p.value->vec().begin(), p.value->vec().end());
  }
  return out;
}

TEST(TrainEpochs, CurveLengthAndFiniteness) {
  const Dataset ds = small_data(2, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  PainAttnNet model(ModelConfig::miniature(2), 11);
  const std::vector<double> curve = train_epochs(model, task, quick_train(3, 21));
  ASSERT_EQ(curve.size(), 3u);
  for (double l : curve) {
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_GE(l, 0.0);
  }
}

TEST(TrainEpochs, LossFallsOnSeparableData) {
  const Dataset ds = small_data(2, 4, 0.0, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  PainAttnNet model(ModelConfig::miniature(2), 11);
  const std::vector<double> curve = train_epochs(model, task, quick_train(12, 21));
  EXPECT_LT(curve.back(), curve.front());
}

TEST(TrainEpochs, ZeroEpochsLeavesModelUntouched) {
  const Dataset ds = small_data(2, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  PainAttnNet model(ModelConfig::miniature(2), 11);
  const std::vector<double> before = snapshot(model);
  const std::vector<double> curve = train_epochs(model, task, quick_train(0, 21));
  EXPECT_TRUE(curve.empty());
  const std::vector<double> after = snapshot(model);
  ASSERT_EQ(before.size(), after.size());
  EXPECT_EQ(0, std::memcmp(before.data(), after.data(), before.size() * sizeof(double)));
}

TEST(TrainEpochs, SameSeedSameCurveAndWeights) {
  const Dataset ds = small_data(2, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));

  PainAttnNet a(ModelConfig::miniature(2), 11);
  PainAttnNet b(ModelConfig::miniature(2), 11);
  const std::vector<double> ca = train_epochs(a, task, quick_train(3, 21));
  const std::vector<double> cb = train_epochs(b, task, quick_train(3, 21));
  ASSERT_EQ(ca.size(), cb.size());
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(ca[i], cb[i]);
  const std::vector<double> wa = snapshot(a);
  const std::vector<double> wb = snapshot(b);
  EXPECT_EQ(0, std::memcmp(wa.data(), wb.data(), wa.size() * sizeof(double)));

  PainAttnNet c(ModelConfig::miniature(2), 11);
  const std::vector<double> cc = train_epochs(c, task, quick_train(3, 22));
  bool differs = false;
  for (std::size_t i = 0; i < ca.size() && !differs; ++i) differs = ca[i] != cc[i];
  EXPECT_TRUE(differs);
}

TEST(TrainEpochs, PartialBatchSmallerThanBatchSizeStillTrains) {
  // Two windows against the default batch size of 128: the only batch is the
  // final partial one. If it were dropped the weights could never move.
  Dataset ds = small_data(1, 1, 0.05, 5);
  Dataset two;
  two.rate = ds.rate;
  two.samples_per_window = ds.samples_per_window;
  for (const WindowRecord& r : ds.records) {
    if (r.level == 0 || r.level == 4) two.records.push_back(r);
  }
  ASSERT_EQ(two.records.size(), 2u);
  const TaskDataset task = build_task_dataset(two, TaskSpec::by_name("t0t4"));
  PainAttnNet model(ModelConfig::miniature(2), 11);
  const std::vector<double> before = snapshot(model);
  train_epochs(model, task, quick_train(1, 21));
  const std::vector<double> after = snapshot(model);
  bool moved = false;
  for (std::size_t i = 0; i < before.size() && !moved; ++i) moved = before[i] != after[i];
  EXPECT_TRUE(moved);
}

TEST(TrainEpochs, ClassWeightingRuns) {
  const Dataset ds = small_data(2, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("pain-any"));
  PainAttnNet model(ModelConfig::miniature(2), 11);
  TrainConfig cfg = quick_train(2, 21);
  cfg.class_weighting = true;
  const std::vector<double> curve = train_epochs(model, task, cfg);
  for (double l : curve) EXPECT_TRUE(std::isfinite(l));
}

TEST(TrainEpochs, NonFiniteLossNamesEpochAndBatch) {
  Dataset ds = small_data(1, 2, 0.05, 5);
  ds.records[3].samples[100] = std::numeric_limits<float>::quiet_NaN();
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("5way"));
  PainAttnNet model(ModelConfig::miniature(5), 11);
  try {
    train_epochs(model, task, quick_train(1, 21));
    FAIL() << "NaN input did not abort";
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("epoch 0"), std::string::npos);
    EXPECT_NE(what.find("batch 0"), std::string::npos);
  }
}

TEST(TrainEpochs, LeavesModelInEvalMode) {
  const Dataset ds = small_data(1, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  PainAttnNet model(ModelConfig::miniature(2), 11);
  train_epochs(model, task, quick_train(1, 21));
  std::vector<std::size_t> rows{0, 1};
  const Tensor a = model.forward_logits(task.batch_input(rows));
  const Tensor b = model.forward_logits(task.batch_input(rows));
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(double)));
}

TEST(TrainEpochs, RejectsMismatchedClassCount) {
  const Dataset ds = small_data(1, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("5way"));
  PainAttnNet model(ModelConfig::miniature(2), 11);
  EXPECT_THROW(train_epochs(model, task, quick_train(1, 21)), ConfigError);
}

TEST(TrainEpochs, RejectsZeroBatch) {
  TrainConfig cfg = quick_train(1, 21);
  cfg.batch_size = 0;
  const Dataset ds = small_data(1, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  PainAttnNet model(ModelConfig::miniature(2), 11);
  EXPECT_THROW(train_epochs(model, task, cfg), ConfigError);
}

TEST(Evaluate, CountsEveryWindowOnce) {
  const Dataset ds = small_data(2, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  PainAttnNet model(ModelConfig::miniature(2), 11);
  const ConfusionMatrix cm = evaluate(model, task);
  EXPECT_EQ(cm.total(), task.size());
  EXPECT_EQ(evaluate(model, task), cm);
  // Batch size must not affect predictions.
  EXPECT_EQ(evaluate(model, task, 3), cm);
}

TEST(SubjectSplitTest, PartitionsBySubject) {
  const Dataset ds = small_data(3, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("5way"));
  const SubjectSplit split = subject_split(task, 2);
  EXPECT_EQ(split.train.size() + split.test.size(), task.size());
  EXPECT_EQ(split.test.size(), 10u);
  for (std::uint16_t s : split.test.subject) EXPECT_EQ(s, 2u);
  for (std::uint16_t s : split.train.subject) EXPECT_NE(s, 2u);
}

TEST(Loocv, PartitionProperty) {
  const Dataset ds = small_data(3, 2, 0.0, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  const LoocvResult res = loocv(task, ModelConfig::miniature(2), quick_train(1, 33));
  ASSERT_EQ(res.folds.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(res.folds[i].subject, i + 1);
    EXPECT_EQ(res.folds[i].matrix.total(), 4u);
    EXPECT_EQ(res.folds[i].loss_curve.size(), 1u);
    EXPECT_GT(res.folds[i].seconds, 0.0);
  }
  EXPECT_EQ(res.pooled.total(), task.size());
  EXPECT_GT(res.wall_seconds, 0.0);
  const MetricsReport direct = compute_metrics(res.pooled);
  EXPECT_DOUBLE_EQ(res.report.acc, direct.acc);
  EXPECT_DOUBLE_EQ(res.report.kappa, direct.kappa);
}

TEST(Loocv, NeedsTwoSubjects) {
  const Dataset ds = small_data(1, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  EXPECT_THROW(loocv(task, ModelConfig::miniature(2), quick_train(1, 33)), DomainError);
}

TEST(Loocv, RejectsZeroJobsAndWrongModel) {
  const Dataset ds = small_data(2, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  EXPECT_THROW(loocv(task, ModelConfig::miniature(2), quick_train(1, 33), 0), ConfigError);
  EXPECT_THROW(loocv(task, ModelConfig::miniature(5), quick_train(1, 33)), ConfigError);
}

TEST(Loocv, ParallelFoldsMatchSerial) {
  const Dataset ds = small_data(3, 2, 0.05, 5);
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  const TrainConfig cfg = quick_train(2, 33);
  const ModelConfig mcfg = ModelConfig::miniature(2);
  const LoocvResult serial = loocv(task, mcfg, cfg, 1);
  const LoocvResult parallel = loocv(task, mcfg, cfg, 3);
  EXPECT_EQ(serial.pooled, parallel.pooled);
  ASSERT_EQ(serial.folds.size(), parallel.folds.size());
  for (std::size_t i = 0; i < serial.folds.size(); ++i) {
    EXPECT_EQ(serial.folds[i].subject, parallel.folds[i].subject);
    EXPECT_EQ(serial.folds[i].matrix, parallel.folds[i].matrix);
    ASSERT_EQ(serial.folds[i].loss_curve.size(), parallel.folds[i].loss_curve.size());
    for (std::size_t e = 0; e < serial.folds[i].loss_curve.size(); ++e) {
      EXPECT_EQ(serial.folds[i].loss_curve[e], parallel.folds[i].loss_curve[e]);
    }
  }
}

TEST(MeanThreshold, AgreesWithBruteForce) {
  Dataset ds;
  ds.samples_per_window = 2;
  const double means[] = {1.0, 2.0, 3.0, 4.0, 2.5, 0.5};
  const std::uint8_t levels[] = {0, 4, 0, 4, 4, 0};
  for (std::size_t i = 0; i < 6; ++i) {
    WindowRecord r;
    r.subject_id = 1;
    r.level = levels[i];
    r.samples = {static_cast<float>(means[i]), static_cast<float>(means[i])};
    ds.records.push_back(r);
  }
  const TaskDataset task = build_task_dataset(ds, TaskSpec::by_name("t0t4"));

  double brute = 0.0;
  for (double cut : {0.0, 0.75, 1.5, 2.25, 2.75, 3.5, 4.5}) {
    std::size_t low0 = 0;
    std::size_t low1 = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      const bool low = means[i] < cut;
      const bool one = levels[i] == 4;
      low0 += (low && !one) || (!low && one);
      low1 += (low && one) || (!low && !one);
    }
    brute = std::max({brute, low0 / 6.0, low1 / 6.0});
  }
  EXPECT_DOUBLE_EQ(mean_threshold_accuracy(task), brute);
}

TEST(MeanThreshold, HandCases) {
  Dataset ds;
  ds.samples_per_window = 1;
  auto push = [&ds](double v, std::uint8_t level) {
    WindowRecord r;
    r.subject_id = 1;
    r.level = level;
    r.samples = {static_cast<float>(v)};
    ds.records.push_back(r);
  };
  push(1.0, 0);
  push(2.0, 4);
  push(3.0, 0);
  push(4.0, 4);
  const TaskDataset interleaved = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  EXPECT_DOUBLE_EQ(mean_threshold_accuracy(interleaved), 0.75);

  ds.records.clear();
  push(1.0, 4);
  push(2.0, 4);
  push(3.0, 0);
  push(4.0, 0);
  const TaskDataset reversed = build_task_dataset(ds, TaskSpec::by_name("t0t4"));
  EXPECT_DOUBLE_EQ(mean_threshold_accuracy(reversed), 1.0);

  const TaskDataset five = build_task_dataset(small_data(1, 1, 0.0, 5),
                                              TaskSpec::by_name("5way"));
  EXPECT_THROW(mean_threshold_accuracy(five), DomainError);
}

}  // namespace
}  // namespace pan
