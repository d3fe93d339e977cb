#include "easynlp/train.hpp"

#include <numeric>

#include "easynlp/errors.hpp"
#include "easynlp/rng.hpp"

namespace easynlp {

double train_step(const ParameterList& params, AdamState& state, const std::function<Tensor()>& loss_fn) {
  zero_grads(params);
  Tape tape;
  double value = 0.0;
  {
    TapeScope scope(tape);
    const Tensor loss = loss_fn();
    value = loss.item();
    backward(loss, tape);
  }
  adam_step(params, state);
  return value;
}

std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw DomainError("batch_size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

std::vector<std::vector<std::size_t>> sequential_batches(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw DomainError("batch_size must be positive");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back();
    for (std::size_t j = i; j < std::min(n, i + batch_size); ++j) out.back().push_back(j);
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects [n×K], got " + shape_to_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold) {
  if (predicted.size() != gold.size()) throw DimensionError("prediction and gold counts differ");
  if (gold.empty()) throw DomainError("accuracy of an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += predicted[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

double macro_f1(const std::vector<int>& predicted, const std::vector<int>& gold, std::size_t num_classes) {
  if (predicted.size() != gold.size()) throw DimensionError("prediction and gold counts differ");
  if (gold.empty() || num_classes == 0) throw DomainError("macro-F1 of an empty set");
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const int k = static_cast<int>(c);
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      tp += predicted[i] == k && gold[i] == k;
      fp += predicted[i] == k && gold[i] != k;
      fn += predicted[i] != k && gold[i] == k;
    }
    total += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return total / static_cast<double>(num_classes);
}

Batch labeled_batch(const LabeledSequences& data, const std::vector<std::size_t>& idx) {
  if (data.labels.size() != data.seqs.size()) throw DimensionError("one label per sequence");
  Batch b = pad_batch(select(data.seqs, idx));
  b.class_labels = select(data.labels, idx);
  return b;
}

std::pair<Tensor, Tensor> classify_all(const TransformerModel& model, const LabeledSequences& data,
                                       std::size_t batch_size) {
  const std::size_t K = model.config().num_classes, d = model.config().hidden_dim;
  std::vector<double> logits, features;
  logits.reserve(data.size() * K);
  features.reserve(data.size() * d);
  for (const auto& idx : sequential_batches(data.size(), batch_size)) {
    const Batch b = pad_batch(select(data.seqs, idx));
    const Tensor pooled = pooled_features(model, encode_sequence(model, b, false));
    const Tensor out = classify_pooled(model, pooled);
    logits.insert(logits.end(), out.data().begin(), out.data().end());
    features.insert(features.end(), pooled.data().begin(), pooled.data().end());
  }
  return {Tensor::from_data({data.size(), K}, std::move(logits)), Tensor::from_data({data.size(), d}, std::move(features))};
}

std::vector<int> predict_classes(const TransformerModel& model, const LabeledSequences& data) {
  if (data.size() == 0) return {};
  return argmax_rows(classify_all(model, data).first);
}

std::vector<double> train_classifier(TransformerModel& model, const LabeledSequences& data,
                                     const ClassifierTrainOptions& options) {
  if (data.size() == 0) throw DomainError("empty training set");
  Rng rng(options.seed);
  Rng dropout_rng = rng.fork(1);
  AdamState adam;
  adam.lr = options.learning_rate;
  const auto params = model.parameters();
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    double total = 0.0;
    const auto batches = minibatches(data.size(), options.batch_size, rng);
    for (const auto& idx : batches) {
      const Batch b = labeled_batch(data, idx);
      total += train_step(params, adam, [&] {
        return cross_entropy(classify(model, encode_sequence(model, b, true, &dropout_rng)), b.class_labels);
      });
    }
    losses.push_back(total / static_cast<double>(batches.size()));
    if (options.on_epoch) options.on_epoch(epoch, losses.back());
  }
  return losses;
}

}  // namespace easynlp
