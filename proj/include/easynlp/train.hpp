#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "easynlp/model.hpp"
#include "easynlp/optim.hpp"
#include "easynlp/tensor.hpp"

namespace easynlp {

class Rng;

/// Zeroes grads, records loss_fn on a fresh tape, back-propagates and takes
/// one Adam step over `params`. Returns the loss value.
double train_step(const ParameterList& params, AdamState& state, const std::function<Tensor()>& loss_fn);

/// Shuffled index batches covering [0, n); the last batch may be short.
std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, Rng& rng);
/// In-order batches.
std::vector<std::vector<std::size_t>> sequential_batches(std::size_t n, std::size_t batch_size);

/// Row-wise argmax of [n×K]; ties go to the lowest column.
std::vector<int> argmax_rows(const Tensor& logits);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold);
/// Unweighted mean of per-class F1 over classes [0, K).
double macro_f1(const std::vector<int>& predicted, const std::vector<int>& gold, std::size_t num_classes);

/// Sequences with class labels, ready for batching.
struct LabeledSequences {
  std::vector<TokenSequence> seqs;
  std::vector<int> labels;
  std::vector<std::size_t> domains;  // empty unless multi-domain

  std::size_t size() const { return seqs.size(); }
};

/// Batch of the selected rows with class labels set.
Batch labeled_batch(const LabeledSequences& data, const std::vector<std::size_t>& idx);

/// Eval-mode classifier logits [n×K] and pooled features [n×d], in chunks.
std::pair<Tensor, Tensor> classify_all(const TransformerModel& model, const LabeledSequences& data,
                                       std::size_t batch_size = 64);
std::vector<int> predict_classes(const TransformerModel& model, const LabeledSequences& data);

struct ClassifierTrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  std::function<void(std::size_t epoch, double loss)> on_epoch;  // after each epoch
};

/// Plain cross-entropy fine-tuning. Returns per-epoch mean losses.
std::vector<double> train_classifier(TransformerModel& model, const LabeledSequences& data,
                                     const ClassifierTrainOptions& options);

template <typename T>
std::vector<T> select(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

}  // namespace easynlp
