#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "pan/error.hpp"
#include "pan/log.hpp"
#include "pan/loss.hpp"
#include "pan/metrics.hpp"
#include "pan/model.hpp"
#include "pan/optimizer.hpp"
#include "pan/rng.hpp"
#include "pan/tasks.hpp"

namespace pan {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  bool class_weighting = false;

  AdamConfig adam() const {
    AdamConfig a;
    a.lr = lr;
    a.beta1 = beta1;
    a.beta2 = beta2;
    a.eps = eps;
    a.weight_decay = weight_decay;
    return a;
  }

  void validate() const {
    adam().validate();
    if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  }
};

/// Runs cfg.epochs passes of minibatch Adam over the task dataset and returns
/// the per-epoch mean loss. Every source of randomness (epoch shuffles,
/// dropout masks) is derived from cfg.seed, so equal seeds give equal curves
/// and equal final weights. The final partial batch is trained on, not
/// dropped. Leaves the model in eval mode.
inline std::vector<double> train_epochs(PainAttnNet& model, const TaskDataset& data,
                                        const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw DomainError("train: dataset is empty");
  if (data.task.num_classes != model.config().num_classes) {
    throw ConfigError("train: task " + data.task.name + " has " +
                      std::to_string(data.task.num_classes) + " classes, model has " +
                      std::to_string(model.config().num_classes));
  }
  std::vector<double> curve;
  if (cfg.epochs == 0) return curve;
  curve.reserve(cfg.epochs);

  std::vector<double> weights;
  const std::vector<double>* weights_ptr = nullptr;
  if (cfg.class_weighting) {
    weights = inverse_frequency_weights(data.label, data.task.num_classes);
    weights_ptr = &weights;
  }

  Adam opt(model.parameters(), cfg.adam());
  const std::uint64_t shuffle_root = derive_seed(cfg.seed, 0x65706f6368ULL);
  const std::uint64_t dropout_root = derive_seed(cfg.seed, 0x6d61736bULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  model.set_mode(Mode::kTrain);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(shuffle_root, epoch));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batch = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      model.set_dropout_seed(derive_seed(derive_seed(dropout_root, epoch), batch));
      const Tensor logits = model.forward_logits(data.batch_input(rows));
      const CrossEntropyResult ce =
          cross_entropy(softmax_rows(logits), data.batch_labels(rows), weights_ptr);
      if (!std::isfinite(ce.loss)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch));
      }
      model.zero_grads();
      model.backward_logits(ce.dlogits);
      opt.step();
      loss_sum += ce.loss * static_cast<double>(rows.size());
    }
    curve.push_back(loss_sum / static_cast<double>(order.size()));
    logging::debug("epoch " + std::to_string(epoch) + " loss " +
                   std::to_string(curve.back()));
  }
  model.set_mode(Mode::kEval);
  return curve;
}

/// Confusion matrix of argmax predictions in eval mode.
inline ConfusionMatrix evaluate(PainAttnNet& model, const TaskDataset& data,
                                std::size_t batch_size = 256) {
  if (data.size() == 0) throw DomainError("evaluate: dataset is empty");
  if (data.task.num_classes != model.config().num_classes) {
    throw ConfigError("evaluate: task " + data.task.name + " has " +
                      std::to_string(data.task.num_classes) + " classes, model has " +
                      std::to_string(model.config().num_classes));
  }
  model.set_mode(Mode::kEval);
  ConfusionMatrix cm(data.task.num_classes);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t stop = std::min(data.size(), start + batch_size);
    std::vector<std::size_t> rows(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    const Tensor logits = model.forward_logits(data.batch_input(rows));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::size_t arg = 0;
      double best = logits(r, 0);
      for (std::size_t k = 1; k < data.task.num_classes; ++k) {
        if (logits(r, k) > best) {
          best = logits(r, k);
          arg = k;
        }
      }
      cm.add(data.label[rows[r]], arg);
    }
  }
  return cm;
}

struct SubjectSplit {
  TaskDataset train;
  TaskDataset test;
};

inline SubjectSplit subject_split(const TaskDataset& data, std::uint16_t held_out) {
  SubjectSplit out;
  out.train.source = data.source;
  out.test.source = data.source;
  out.train.task = data.task;
  out.test.task = data.task;
  for (std::size_t i = 0; i < data.size(); ++i) {
    TaskDataset& dst = data.subject[i] == held_out ? out.test : out.train;
    dst.index.push_back(data.index[i]);
    dst.label.push_back(data.label[i]);
    dst.subject.push_back(data.subject[i]);
  }
  return out;
}

struct FoldResult {
  std::uint16_t subject = 0;
  std::vector<double> loss_curve;
  ConfusionMatrix matrix;
  double seconds = 0.0;
};

struct LoocvResult {
  std::vector<FoldResult> folds;
  ConfusionMatrix pooled;
  MetricsReport report;
  double wall_seconds = 0.0;
};

/// Leave-one-subject-out cross-validation. One fold per subject, each trained
/// from scratch with a seed derived from (global seed, subject id), so the
/// outcome does not depend on fold scheduling. Folds may run on up to `jobs`
/// threads; the pooled matrix is always assembled serially in ascending
/// subject order, and metrics are computed once on the pooled matrix.
inline LoocvResult loocv(const TaskDataset& data, const ModelConfig& model_cfg,
                         const TrainConfig& cfg, std::size_t jobs = 1) {
  cfg.validate();
  if (jobs == 0) throw ConfigError("loocv: jobs must be positive");
  if (data.size() == 0) throw DomainError("loocv: dataset is empty");
  if (model_cfg.num_classes != data.task.num_classes) {
    throw ConfigError("loocv: model is configured for " +
                      std::to_string(model_cfg.num_classes) + " classes, task " +
                      data.task.name + " has " + std::to_string(data.task.num_classes));
  }
  std::vector<std::uint16_t> subjects = data.subject_ids();
  std::sort(subjects.begin(), subjects.end());
  if (subjects.size() < 2) {
    throw DomainError("loocv: need at least 2 distinct subjects, found " +
                      std::to_string(subjects.size()));
  }

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t k = data.task.num_classes;
  LoocvResult result{{}, ConfusionMatrix(k), {}, 0.0};
  result.folds.reserve(subjects.size());
  for (std::uint16_t sid : subjects) {
    result.folds.push_back(FoldResult{sid, {}, ConfusionMatrix(k), 0.0});
  }

  std::vector<std::exception_ptr> errors(subjects.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= result.folds.size()) return;
      FoldResult& fold = result.folds[i];
      try {
        const auto fold_t0 = std::chrono::steady_clock::now();
        const SubjectSplit split = subject_split(data, fold.subject);
        for (std::uint16_t s : split.train.subject) {
          if (s == fold.subject) {
            throw StateError("loocv: subject " + std::to_string(s) +
                             " leaked into its own training fold");
          }
        }
        for (std::uint16_t s : split.test.subject) {
          if (s != fold.subject) {
            throw StateError("loocv: subject " + std::to_string(s) +
                             " leaked into the fold testing subject " +
                             std::to_string(fold.subject));
          }
        }
        if (split.train.size() == 0 || split.test.size() == 0) {
          throw DomainError("loocv: fold for subject " + std::to_string(fold.subject) +
                            " has an empty side");
        }
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = derive_seed(cfg.seed, fold.subject);
        PainAttnNet model(model_cfg, fold_cfg.seed);
        fold.loss_curve = train_epochs(model, split.train, fold_cfg);
        fold.matrix = evaluate(model, split.test);
        fold.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                     fold_t0)
                           .count();
        logging::info("fold subject " + std::to_string(fold.subject) + " accuracy " +
                      std::to_string(accuracy(fold.matrix)) + " (" +
                      std::to_string(fold.seconds) + "s)");
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min(jobs, result.folds.size());
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (const FoldResult& fold : result.folds) result.pooled.merge(fold.matrix);
  result.report = compute_metrics(result.pooled);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

/// Best-threshold-on-window-mean baseline for binary tasks. This is the
/// sanity bar the learned model has to clear: it sweeps every threshold over
/// per-window means, both polarities, and returns the best accuracy.
inline double mean_threshold_accuracy(const TaskDataset& data) {
  if (data.task.num_classes != 2) {
    throw DomainError("mean_threshold_accuracy: defined for binary tasks only");
  }
  if (data.size() == 0) throw DomainError("mean_threshold_accuracy: dataset is empty");
  const std::size_t n = data.size();
  std::vector<std::pair<double, std::uint8_t>> keyed(n);
  for (std::size_t i = 0; i < n; ++i) {
    const WindowRecord& rec = data.source->records[data.index[i]];
    double sum = 0.0;
    for (float s : rec.samples) sum += static_cast<double>(s);
    keyed[i] = {sum / static_cast<double>(rec.samples.size()), data.label[i]};
  }
  std::sort(keyed.begin(), keyed.end());

  std::size_t ones_total = 0;
  for (const auto& [mean, label] : keyed) ones_total += label;

  // Cut after position i: the first i windows fall below the threshold. Only
  // cuts between distinct means are realizable.
  std::size_t best = 0;
  std::size_t ones_left = 0;
  for (std::size_t i = 0; i <= n; ++i) {
    if (i == 0 || i == n || keyed[i - 1].first < keyed[i].first) {
      const std::size_t zeros_left = i - ones_left;
      const std::size_t low0high1 = zeros_left + (ones_total - ones_left);
      const std::size_t low1high0 = ones_left + (n - i) - (ones_total - ones_left);
      best = std::max({best, low0high1, low1high0});
    }
    if (i < n) ones_left += keyed[i].second;
  }
  return static_cast<double>(best) / static_cast<double>(n);
}

}  // namespace pan
