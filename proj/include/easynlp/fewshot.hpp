#pragma once

// Prompt-based few-shot classification: cloze templates with verbalizers
// (PET), trainable continuous prompt rows (P-Tuning) and a verbalizer-free
// contrastive objective with nearest-centroid prediction (CP-Tuning).

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "easynlp/model.hpp"
#include "easynlp/optim.hpp"
#include "easynlp/tokenizer.hpp"

namespace easynlp {

class Rng;

struct LiteralSegment {
  std::string text;
  bool operator==(const LiteralSegment&) const = default;
};
struct InputSegment {
  std::size_t index = 0;  // 0 first sequence, 1 second
  bool operator==(const InputSegment&) const = default;
};
struct MaskSegment {
  bool operator==(const MaskSegment&) const = default;
};
struct PromptSegment {
  std::size_t length = 1;
  bool operator==(const PromptSegment&) const = default;
};
using TemplateSegment = std::variant<LiteralSegment, InputSegment, MaskSegment, PromptSegment>;

class PromptTemplate {
 public:
  /// TemplateError unless there is exactly one mask slot, at least one input
  /// slot and every prompt slot has length >= 1.
  explicit PromptTemplate(std::vector<TemplateSegment> segments);

  /// `{input}`, `{input2}`, `{mask}` and `{p*k}` slots; anything else is
  /// literal text, e.g. "{input} . it was {mask} .".
  static PromptTemplate parse(std::string_view text);

  const std::vector<TemplateSegment>& segments() const { return segments_; }
  std::size_t prompt_length() const;  // total prompt tokens
  std::size_t input_count() const;    // 1 or 2
  std::string to_string() const;

 private:
  std::vector<TemplateSegment> segments_;
};

struct PromptedSequence {
  TokenSequence seq;
  std::size_t mask_pos = 0;
  std::vector<std::size_t> prompt_positions;  // in template order
};

/// Encodes [CLS] segments [SEP]. Prompt slots hold [UNK] placeholders that
/// the continuous prompt overrides at forward time. When the result would
/// exceed max_len, words are dropped from the end of the longest input.
PromptedSequence apply_template(const PromptTemplate& t, const std::vector<std::string>& inputs,
                                const Vocabulary& vocab, std::size_t max_len = 128);

/// Class id -> single vocabulary token.
class Verbalizer {
 public:
  /// TemplateError for out-of-vocabulary or repeated words.
  Verbalizer(const std::vector<std::string>& words, const Vocabulary& vocab);

  std::size_t size() const { return token_ids_.size(); }
  const std::vector<std::size_t>& token_ids() const { return token_ids_; }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::vector<std::size_t> token_ids_;
};

struct ContinuousPrompt {
  Tensor embeddings;  // [k×d], trainable

  /// Rows drawn like the token table (truncated normal, std 0.02).
  static ContinuousPrompt random(std::size_t k, std::size_t d, Rng& rng);
  /// Rows copied from the model's token embeddings.
  static ContinuousPrompt from_tokens(const TransformerModel& model, const std::vector<TokenId>& ids);

  std::size_t length() const { return embeddings.dim(0); }
};

struct PromptBatch {
  Batch batch;
  std::vector<std::size_t> mask_positions;    // flat row·L + pos, one per row
  std::vector<std::size_t> prompt_positions;  // flat, k per row
  std::vector<int> labels;                    // per row; empty when unlabeled
};

PromptBatch make_prompt_batch(const std::vector<PromptedSequence>& seqs, const std::vector<int>& labels = {});

/// Standard forward; with a prompt, the input embeddings at the batch's
/// prompt positions are the prompt rows (position embeddings still added).
/// DimensionError when the prompt positions are not k per row.
Tensor prompted_forward(const TransformerModel& model, const PromptBatch& pb, const ContinuousPrompt* prompt,
                        bool train_mode = false, Rng* dropout_rng = nullptr);

/// Hidden states at the mask positions, [n×d].
Tensor mask_hiddens(const TransformerModel& model, const PromptBatch& pb, const ContinuousPrompt* prompt,
                    bool train_mode = false, Rng* dropout_rng = nullptr);

/// MLM logits at the mask restricted to the verbalizer tokens, [n×K].
Tensor pet_class_logits(const TransformerModel& model, const Tensor& mask_hidden, const Verbalizer& verbalizer);

/// Cross-entropy over the verbalizer logits. Serves PET and P-Tuning.
Tensor pet_loss(const TransformerModel& model, const PromptBatch& pb, const Verbalizer& verbalizer,
                const ContinuousPrompt* prompt, bool train_mode = false, Rng* dropout_rng = nullptr);

std::vector<int> pet_predict(const TransformerModel& model, const PromptBatch& pb, const Verbalizer& verbalizer,
                             const ContinuousPrompt* prompt = nullptr);

struct CpTuningOptions {
  double margin_pos = 0.9;
  double margin_neg = 0.1;
  double cost = 2.0;
};

/// (1/n)·Σ_i [mean over positives p of max(0, m_pos − s(i,p))
///            + cost · mean over negatives q of max(0, s(i,q) − m_neg)]
/// with s the cosine similarity. DomainError for n < 2 or bad margins.
Tensor cp_tuning_loss(const Tensor& mask_hiddens, const std::vector<int>& labels, const CpTuningOptions& options = {});

struct ClassCentroids {
  std::vector<std::vector<double>> vectors;  // unit norm, one per class
};

/// Normalized mean of the normalized member vectors. DomainError for a class
/// without members.
ClassCentroids cp_fit_centroids(const Tensor& mask_hiddens, const std::vector<int>& labels, std::size_t num_classes);
/// Highest cosine; ties go to the lower class id.
std::vector<int> cp_predict(const ClassCentroids& centroids, const Tensor& mask_hiddens);

/// Model parameters plus the prompt ("prompt.embeddings"); backbone
/// parameters are left out when frozen.
ParameterList fewshot_parameters(const TransformerModel& model, const ContinuousPrompt* prompt,
                                 bool freeze_backbone = false);

}  // namespace easynlp
