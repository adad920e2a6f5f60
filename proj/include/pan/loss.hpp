#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pan/tensor.hpp"

namespace pan {

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor dlogits;
};

/// Per-class weights inversely proportional to class frequency,
/// w_k = total / (K * count_k).
inline std::vector<double> inverse_frequency_weights(const std::vector<std::uint8_t>& labels,
                                                     std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::uint8_t l : labels) {
    if (l >= num_classes) throw DomainError("class weights: label out of range");
    ++counts[l];
  }
  std::vector<double> w(num_classes, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) throw DomainError("class weights: class " + std::to_string(k) +
                                          " has no samples");
    w[k] = static_cast<double>(labels.size()) /
           (static_cast<double>(num_classes) * static_cast<double>(counts[k]));
  }
  return w;
}

/// Mean negative log-likelihood over probability rows, with the gradient
/// taken with respect to the logits that produced them: (p - onehot) / N.
/// With class weights the per-sample terms are scaled by w_label and the
/// normalizer becomes the weight sum. Probabilities are clamped at 1e-12
/// before the log.
inline CrossEntropyResult cross_entropy(const Tensor& probs,
                                        const std::vector<std::uint8_t>& labels,
                                        const std::vector<double>* class_weights = nullptr) {
  if (probs.rank() != 2) throw DimensionError("cross_entropy: expected [N x K] probabilities");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  if (labels.size() != n) throw DimensionError("cross_entropy: label count mismatch");
  if (class_weights && class_weights->size() != k) {
    throw DimensionError("cross_entropy: weight count mismatch");
  }
  constexpr double kClamp = 1e-12;

  double weight_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw DomainError("cross_entropy: label out of range");
    weight_sum += class_weights ? (*class_weights)[labels[i]] : 1.0;
  }

  CrossEntropyResult result;
  result.dlogits = Tensor(probs.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = class_weights ? (*class_weights)[labels[i]] : 1.0;
    const double p = std::max(probs(i, labels[i]), kClamp);
    loss += -w * std::log(p);
    for (std::size_t j = 0; j < k; ++j) {
      const double onehot = j == labels[i] ? 1.0 : 0.0;
      result.dlogits(i, j) = w * (probs(i, j) - onehot) / weight_sum;
    }
  }
  result.loss = loss / weight_sum;
  return result;
}

}  // namespace pan
