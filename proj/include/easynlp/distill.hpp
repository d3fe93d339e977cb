#pragma once

// Knowledge distillation: record augmentation, cached teacher outputs,
// temperature-softened KD, and MetaKD (a meta-teacher trained on several
// domains with instance weights, distilled into per-domain students with a
// domain-expertise gate).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "easynlp/data.hpp"
#include "easynlp/model.hpp"
#include "easynlp/train.hpp"

namespace easynlp {

struct KDConfig {
  double temperature = 2.0;
  double alpha = 0.3;         // weight of the hard-label term in kd_loss
  double feature_beta = 0.1;  // weight of feature matching in meta_distill_loss

  void validate() const;  // ConfigError
};

/// Keeps the originals first, then n_aug variants per record in order. In a
/// variant every word of `text_columns` independently becomes [MASK] with
/// probability 0.1, else a uniform random non-special vocabulary token with
/// probability 0.1. Other columns are copied.
std::vector<Record> augment_records(const std::vector<Record>& records, const std::vector<std::string>& text_columns,
                                    const Vocabulary& vocab, std::size_t n_aug, std::uint64_t seed);

struct TeacherEntry {
  std::vector<double> logits;
  std::vector<double> feature;  // pooled [CLS] vector

  bool operator==(const TeacherEntry&) const = default;
};

class TeacherCache {
 public:
  TeacherCache() = default;
  explicit TeacherCache(std::string teacher_hash) : teacher_hash_(std::move(teacher_hash)) {}

  /// CacheError on a repeated id or a logits/feature length that differs from
  /// earlier entries.
  void add(const std::string& id, TeacherEntry entry);
  const TeacherEntry& at(const std::string& id) const;  // CacheError if absent
  bool contains(const std::string& id) const { return entries_.count(id) > 0; }
  std::size_t size() const { return entries_.size(); }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t feature_dim() const { return feature_dim_; }
  const std::string& teacher_hash() const { return teacher_hash_; }
  const std::map<std::string, TeacherEntry>& entries() const { return entries_; }

  /// "ENLPKD1", hash, then per entry: id, K, logits, d, feature (f32 LE).
  void save(const std::filesystem::path& path) const;
  /// CacheError when the file is malformed or was built by another teacher.
  static TeacherCache load(const std::filesystem::path& path, const std::string& expected_hash);

  bool operator==(const TeacherCache&) const = default;

 private:
  std::string teacher_hash_;
  std::size_t num_classes_ = 0;
  std::size_t feature_dim_ = 0;
  std::map<std::string, TeacherEntry> entries_;
};

/// Keyed by ids[i]; the hash is the teacher's fingerprint.
TeacherCache extract_teacher_logits(const TransformerModel& teacher, const LabeledSequences& data,
                                    const std::vector<std::string>& ids, std::size_t batch_size = 64);

/// alpha · CE(student, y) + (1 − alpha) · T² · mean KL(softmax(t/T) ‖ softmax(s/T)).
/// The teacher side is a constant.
Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, const std::vector<int>& hard_targets,
               const KDConfig& cfg);

/// T² · mean KL(softmax(t/T) ‖ softmax(s/T)).
Tensor soft_kl(const Tensor& student_logits, const Tensor& teacher_logits, double temperature);

using PrototypeKey = std::pair<std::size_t, int>;  // (domain, class)
using Prototypes = std::map<PrototypeKey, std::vector<double>>;

/// Mean feature per (domain, class) cell; empty cells are absent.
Prototypes compute_class_prototypes(const std::vector<std::vector<double>>& features,
                                    const std::vector<std::size_t>& domains, const std::vector<int>& labels);

/// Mean over the other domains' prototypes of the class of (cos + 1) / 2.
/// DomainError when no other domain has one.
double instance_transfer_weight(const std::vector<double>& feature, std::size_t own_domain, int cls,
                                const Prototypes& prototypes);

/// Σ_i w_i · CE_i / n per batch with the batch's weights rescaled to mean 1
/// (a batch of zero weights contributes nothing). StateError unless there is
/// one weight per example. Returns per-epoch mean losses.
std::vector<double> train_meta_teacher(TransformerModel& model, const LabeledSequences& data,
                                       const std::vector<double>& weights, const ClassifierTrainOptions& options);

/// Mean probability the model gives the gold class. DomainError when empty.
double domain_expertise(const TransformerModel& meta_teacher, const LabeledSequences& held_out);

/// CE(student, y) + t_d · [(1 − alpha) · T² · KL + feature_beta · MSE(student_features · proj, teacher_features)].
/// proj is [d_s×d_t].
Tensor meta_distill_loss(const Tensor& student_logits, const Tensor& student_features, const Tensor& teacher_logits,
                         const Tensor& teacher_features, const std::vector<int>& hard_targets, double t_d,
                         const KDConfig& cfg, const Tensor& proj);

/// Student-side projection, truncated normal (std 0.02), trainable.
Tensor init_projection(std::size_t student_dim, std::size_t teacher_dim, std::uint64_t seed);

struct DistillOptions {
  ClassifierTrainOptions train;
  KDConfig kd;
  bool meta = false;     // meta_distill_loss instead of kd_loss
  double expertise = 1.0;  // t_d, used when meta
};

/// Trains the student against cached teacher outputs keyed by ids[i]. With
/// meta set, `proj` must be [d_s×d_t] and is trained alongside.
std::vector<double> distill_student(TransformerModel& student, Tensor* proj, const LabeledSequences& data,
                                    const std::vector<std::string>& ids, const TeacherCache& cache,
                                    const DistillOptions& options);

}  // namespace easynlp
