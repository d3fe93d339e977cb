#include "easynlp/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "easynlp/errors.hpp"
#include "easynlp/rng.hpp"
#include "binio.hpp"

namespace easynlp {

namespace {

constexpr std::string_view kCacheMagic = "ENLPKD1";

Tensor constant_rows(const Tensor& t) { return t.requires_grad() ? t.detach() : t; }

void require_logits(const Tensor& student, const Tensor& teacher, std::size_t n_targets) {
  if (student.rank() != 2 || student.shape() != teacher.shape()) {
    throw DimensionError("student logits " + shape_to_string(student.shape()) + " and teacher logits " +
                         shape_to_string(teacher.shape()) + " differ");
  }
  if (student.dim(0) != n_targets) throw DimensionError("one hard target per row");
}

}  // namespace

void KDConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(feature_beta >= 0.0)) throw ConfigError("feature_beta must be non-negative");
}

std::vector<Record> augment_records(const std::vector<Record>& records, const std::vector<std::string>& text_columns,
                                    const Vocabulary& vocab, std::size_t n_aug, std::uint64_t seed) {
  std::vector<Record> out = records;
  if (n_aug == 0) return out;
  const std::size_t V = vocab.size();
  if (V <= kNumSpecialTokens) throw DomainError("vocabulary has no regular tokens to sample");
  Rng rng(seed);
  for (const auto& r : records) {
    for (std::size_t v = 0; v < n_aug; ++v) {
      Record variant = r;
      for (const auto& col : text_columns) {
        std::string text;
        for (const auto& w : split_words(r.text(col))) {
          const double u = rng.uniform();
          std::string word = w;
          if (u < 0.1) {
            word = vocab.token(kMaskId);
          } else if (u < 0.2) {
            word = vocab.token(static_cast<TokenId>(kNumSpecialTokens + rng.uniform_int(V - kNumSpecialTokens)));
          }
          if (!text.empty()) text += ' ';
          text += word;
        }
        variant.values[col] = {Scalar{text}};
      }
      out.push_back(std::move(variant));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Teacher cache
// ---------------------------------------------------------------------------

void TeacherCache::add(const std::string& id, TeacherEntry entry) {
  if (entries_.count(id)) throw CacheError("duplicate example id '" + id + "'");
  if (entries_.empty()) {
    num_classes_ = entry.logits.size();
    feature_dim_ = entry.feature.size();
  } else if (entry.logits.size() != num_classes_ || entry.feature.size() != feature_dim_) {
    throw CacheError("entry '" + id + "' has " + std::to_string(entry.logits.size()) + " logits and a " +
                     std::to_string(entry.feature.size()) + "-d feature, expected " + std::to_string(num_classes_) +
                     " and " + std::to_string(feature_dim_));
  }
  entries_.emplace(id, std::move(entry));
}

const TeacherEntry& TeacherCache::at(const std::string& id) const {
  const auto it = entries_.find(id);
  if (it == entries_.end()) throw CacheError("no teacher output for example '" + id + "'");
  return it->second;
}

void TeacherCache::save(const std::filesystem::path& path) const {
  std::string out(kCacheMagic);
  binio::put_string(out, teacher_hash_);
  binio::put_u32(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [id, e] : entries_) {
    binio::put_string(out, id);
    binio::put_u32(out, static_cast<std::uint32_t>(e.logits.size()));
    for (double v : e.logits) binio::put_f32(out, v);
    binio::put_u32(out, static_cast<std::uint32_t>(e.feature.size()));
    for (double v : e.feature) binio::put_f32(out, v);
  }
  write_file_atomic(path, out);
}

TeacherCache TeacherCache::load(const std::filesystem::path& path, const std::string& expected_hash) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const FormatError& e) {
    throw CacheError(e.what());
  }
  binio::Reader<CacheError> r(bytes, path.string() + " is truncated");
  if (r.take(kCacheMagic.size()) != kCacheMagic) throw CacheError(path.string() + " is not a teacher cache");
  TeacherCache cache(r.string());
  if (cache.teacher_hash_ != expected_hash) {
    throw CacheError("cache was built by teacher " + cache.teacher_hash_ + ", expected " + expected_hash);
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string id = r.string();
    TeacherEntry e;
    e.logits.resize(r.u32());
    for (double& v : e.logits) v = r.f32();
    e.feature.resize(r.u32());
    for (double& v : e.feature) v = r.f32();
    cache.add(id, std::move(e));
  }
  if (!r.done()) throw CacheError("trailing bytes in " + path.string());
  return cache;
}

TeacherCache extract_teacher_logits(const TransformerModel& teacher, const LabeledSequences& data,
                                    const std::vector<std::string>& ids, std::size_t batch_size) {
  if (ids.size() != data.size()) throw DimensionError("one id per example");
  const auto [logits, features] = classify_all(teacher, data, batch_size);
  const std::size_t K = logits.dim(1), d = features.dim(1);
  TeacherCache cache(model_fingerprint(teacher));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    TeacherEntry e;
    e.logits.assign(logits.data().begin() + static_cast<std::ptrdiff_t>(i * K),
                    logits.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * K));
    e.feature.assign(features.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                     features.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    cache.add(ids[i], std::move(e));
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor soft_kl(const Tensor& student_logits, const Tensor& teacher_logits, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  const std::size_t n = student_logits.dim(0);
  // teacher distribution as data: Σ p log p is a constant
  const Tensor p = softmax(scale(constant_rows(teacher_logits), 1.0 / temperature), 1).detach();
  double entropy_term = 0.0;
  for (double v : p.data())
    if (v > 0.0) entropy_term += v * std::log(v);
  const Tensor log_q = log_softmax(scale(student_logits, 1.0 / temperature), 1);
  const Tensor cross = sum(mul(log_q, p));
  const Tensor kl = scale(add_scalar(scale(cross, -1.0), entropy_term), 1.0 / static_cast<double>(n));
  return scale(kl, temperature * temperature);
}

Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, const std::vector<int>& hard_targets,
               const KDConfig& cfg) {
  cfg.validate();
  require_logits(student_logits, teacher_logits, hard_targets.size());
  return add(scale(cross_entropy(student_logits, hard_targets), cfg.alpha),
             scale(soft_kl(student_logits, teacher_logits, cfg.temperature), 1.0 - cfg.alpha));
}

Tensor meta_distill_loss(const Tensor& student_logits, const Tensor& student_features, const Tensor& teacher_logits,
                         const Tensor& teacher_features, const std::vector<int>& hard_targets, double t_d,
                         const KDConfig& cfg, const Tensor& proj) {
  cfg.validate();
  require_logits(student_logits, teacher_logits, hard_targets.size());
  if (!(t_d >= 0.0 && t_d <= 1.0)) throw DomainError("domain expertise must lie in [0, 1]");
  const std::size_t n = student_logits.dim(0);
  if (student_features.rank() != 2 || teacher_features.rank() != 2 || student_features.dim(0) != n ||
      teacher_features.dim(0) != n || proj.rank() != 2 || proj.dim(0) != student_features.dim(1) ||
      proj.dim(1) != teacher_features.dim(1)) {
    throw DimensionError("projection " + shape_to_string(proj.shape()) + " does not map student features " +
                         shape_to_string(student_features.shape()) + " onto teacher features " +
                         shape_to_string(teacher_features.shape()));
  }
  const Tensor diff = sub(matmul(student_features, proj), constant_rows(teacher_features));
  const Tensor mse = mean(mul(diff, diff));
  const Tensor gated = add(scale(soft_kl(student_logits, teacher_logits, cfg.temperature), 1.0 - cfg.alpha),
                           scale(mse, cfg.feature_beta));
  return add(cross_entropy(student_logits, hard_targets), scale(gated, t_d));
}

// ---------------------------------------------------------------------------
// MetaKD
// ---------------------------------------------------------------------------

Prototypes compute_class_prototypes(const std::vector<std::vector<double>>& features,
                                    const std::vector<std::size_t>& domains, const std::vector<int>& labels) {
  if (features.size() != domains.size() || features.size() != labels.size()) {
    throw DimensionError("features, domains and labels differ in length");
  }
  Prototypes sums;
  std::map<PrototypeKey, std::size_t> counts;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const PrototypeKey key{domains[i], labels[i]};
    auto& acc = sums[key];
    if (acc.empty()) acc.assign(features[i].size(), 0.0);
    if (acc.size() != features[i].size()) throw DimensionError("features differ in dimension");
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += features[i][k];
    ++counts[key];
  }
  for (auto& [key, acc] : sums)
    for (double& v : acc) v /= static_cast<double>(counts[key]);
  return sums;
}

double instance_transfer_weight(const std::vector<double>& feature, std::size_t own_domain, int cls,
                                const Prototypes& prototypes) {
  double total = 0.0;
  std::size_t others = 0;
  for (const auto& [key, proto] : prototypes) {
    if (key.first == own_domain || key.second != cls) continue;
    if (proto.size() != feature.size()) throw DimensionError("feature and prototype differ in dimension");
    double dot = 0.0, a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < feature.size(); ++k) {
      dot += feature[k] * proto[k];
      a += feature[k] * feature[k];
      b += proto[k] * proto[k];
    }
    const double cosine = a > 0.0 && b > 0.0 ? std::clamp(dot / std::sqrt(a * b), -1.0, 1.0) : 0.0;
    total += (cosine + 1.0) / 2.0;
    ++others;
  }
  if (others == 0) {
    throw DomainError("class " + std::to_string(cls) + " has no prototype outside domain " + std::to_string(own_domain));
  }
  return total / static_cast<double>(others);
}

std::vector<double> train_meta_teacher(TransformerModel& model, const LabeledSequences& data,
                                       const std::vector<double>& weights, const ClassifierTrainOptions& options) {
  if (weights.size() != data.size()) {
    throw StateError("instance weights cover " + std::to_string(weights.size()) + " of " +
                     std::to_string(data.size()) + " examples");
  }
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
      std::vector<double> w = select(weights, idx);
      const double mean_w = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
      for (double& v : w) v = mean_w > 0.0 ? v / mean_w : 0.0;
      const double inv_n = 1.0 / static_cast<double>(w.size());
      total += train_step(params, adam, [&] {
        const Tensor rows = cross_entropy_rows(classify(model, encode_sequence(model, b, true, &dropout_rng)),
                                               b.class_labels);
        return scale(sum(mul(rows, Tensor::from_data({w.size()}, w))), inv_n);
      });
    }
    losses.push_back(total / static_cast<double>(batches.size()));
    if (options.on_epoch) options.on_epoch(epoch, losses.back());
  }
  return losses;
}

double domain_expertise(const TransformerModel& meta_teacher, const LabeledSequences& held_out) {
  if (held_out.size() == 0) throw DomainError("empty held-out split");
  const Tensor probs = softmax(classify_all(meta_teacher, held_out).first, 1);
  const std::size_t K = probs.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < held_out.size(); ++i) total += probs[i * K + static_cast<std::size_t>(held_out.labels[i])];
  return total / static_cast<double>(held_out.size());
}

Tensor init_projection(std::size_t student_dim, std::size_t teacher_dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> data(student_dim * teacher_dim);
  for (double& v : data) v = rng.truncated_normal(0.02);
  return Tensor::from_data({student_dim, teacher_dim}, std::move(data), true);
}

std::vector<double> distill_student(TransformerModel& student, Tensor* proj, const LabeledSequences& data,
                                    const std::vector<std::string>& ids, const TeacherCache& cache,
                                    const DistillOptions& options) {
  options.kd.validate();
  if (ids.size() != data.size()) throw DimensionError("one id per example");
  if (data.size() == 0) throw DomainError("empty training set");
  if (cache.num_classes() != student.config().num_classes) {
    throw DimensionError("teacher has " + std::to_string(cache.num_classes()) + " classes, student " +
                         std::to_string(student.config().num_classes));
  }
  if (options.meta && proj == nullptr) throw StateError("meta-distillation needs a projection");
  const std::size_t K = cache.num_classes(), dt = cache.feature_dim();

  Rng rng(options.train.seed);
  Rng dropout_rng = rng.fork(1);
  AdamState adam;
  adam.lr = options.train.learning_rate;
  auto params = student.parameters();
  if (options.meta) params.push_back({"proj", *proj});
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < options.train.epochs; ++epoch) {
    double total = 0.0;
    const auto batches = minibatches(data.size(), options.train.batch_size, rng);
    for (const auto& idx : batches) {
      const Batch b = labeled_batch(data, idx);
      std::vector<double> t_logits, t_features;
      for (auto i : idx) {
        const auto& e = cache.at(ids[i]);
        t_logits.insert(t_logits.end(), e.logits.begin(), e.logits.end());
        t_features.insert(t_features.end(), e.feature.begin(), e.feature.end());
      }
      const Tensor teacher_logits = Tensor::from_data({idx.size(), K}, std::move(t_logits));
      const Tensor teacher_features = Tensor::from_data({idx.size(), dt}, std::move(t_features));
      total += train_step(params, adam, [&] {
        const Tensor pooled = pooled_features(student, encode_sequence(student, b, true, &dropout_rng));
        const Tensor logits = classify_pooled(student, pooled);
        if (!options.meta) return kd_loss(logits, teacher_logits, b.class_labels, options.kd);
        return meta_distill_loss(logits, pooled, teacher_logits, teacher_features, b.class_labels, options.expertise,
                                 options.kd, *proj);
      });
    }
    losses.push_back(total / static_cast<double>(batches.size()));
    if (options.train.on_epoch) options.train.on_epoch(epoch, losses.back());
  }
  return losses;
}

}  // namespace easynlp
