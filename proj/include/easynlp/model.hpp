#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "easynlp/optim.hpp"
#include "easynlp/tensor.hpp"
#include "easynlp/tokenizer.hpp"

namespace easynlp {

class Rng;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 64;
  std::size_t max_position = 128;
  std::size_t num_classes = 2;
  std::size_t num_relations = 1;
  double dropout_prob = 0.0;
  double layer_norm_eps = 1e-5;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Named sizes for the bundled architectures ("bert-tiny-uncased",
/// "bert-small-uncased", "bert-base-uncased"). These carry no pretrained
/// weights; vocab_size, num_classes and num_relations are filled in by the
/// caller.
ModelConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

/// Name -> shape of every parameter for a config, in sorted name order.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg);

/// Closed form:
///   V·d + P·d                                  token + position embeddings
/// + L·(4d² + 4d + 2·d·f + f + d + 4d)          attention, FFN, two norms per layer
/// + 2d                                         final norm
/// + V                                          MLM bias (weights tied to tokens)
/// + d² + d + d·K + K                           pooler + classifier
/// + d·R + R                                    relation head
std::size_t parameter_count(const ModelConfig& cfg);

/// Pre-norm transformer encoder with tied MLM head, tanh pooler +
/// classifier and a relation-decoding head.
class TransformerModel {
 public:
  TransformerModel() = default;
  /// Adopts `params`; names and shapes must match parameter_shapes(cfg)
  /// exactly, otherwise FormatError lists the missing/extra names.
  TransformerModel(ModelConfig cfg, std::map<std::string, Tensor> params);

  const ModelConfig& config() const { return cfg_; }
  const Tensor& param(const std::string& name) const;
  ParameterList parameters() const;  // sorted by name
  std::size_t parameter_count() const;
  TransformerModel clone() const;
  void set_parameters_from(const TransformerModel& other);  // copies values

 private:
  ModelConfig cfg_;
  std::map<std::string, Tensor> params_;
};

/// Weights ~ truncated normal(0, 0.02), biases 0, norm gains 1.
TransformerModel init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Replaces the input embedding (before position embeddings are added) at
/// flat positions row * seq_len + pos by the rows of `values` [k×d].
struct EmbeddingOverride {
  std::vector<std::size_t> positions;
  Tensor values;
};

struct ForwardOptions {
  bool train = false;  // dropout only in train mode
  Rng* dropout_rng = nullptr;
  const EmbeddingOverride* overrides = nullptr;
  std::vector<Tensor>* attention_probs = nullptr;  // per layer [n·H×L×L]
};

/// Hidden states [n×L×d].
Tensor encode_sequence(const TransformerModel& m, const Batch& batch, const ForwardOptions& opts = {});
Tensor encode_sequence(const TransformerModel& m, const Batch& batch, bool train_mode, Rng* dropout_rng = nullptr);

/// [n×L×d] -> [n×L×V] or [N×d] -> [N×V].
Tensor mlm_logits(const TransformerModel& m, const Tensor& hidden);
/// MLM logits only for the given flat positions: [rows×V].
Tensor mlm_logits_at(const TransformerModel& m, const Tensor& hidden, std::span<const std::size_t> positions);

/// tanh(W_p h_[CLS] + b_p): [n×d].
Tensor pooled_features(const TransformerModel& m, const Tensor& hidden);
Tensor classify_pooled(const TransformerModel& m, const Tensor& pooled);
/// [n×L×d] -> [n×num_classes]
Tensor classify(const TransformerModel& m, const Tensor& hidden);
/// [G×d] -> [G×num_relations]
Tensor relation_logits(const TransformerModel& m, const Tensor& span_hidden);

/// Flattens [n×L×d] to [n·L×d].
Tensor flatten_tokens(const Tensor& hidden);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "ENLP1";

/// "ENLP1" | u32 len | config JSON | u32 count | per parameter (sorted by
/// name): u32 len | name | u32 rank | u32 dims... | f32 values. All integers
/// and floats little-endian.
std::string serialize_model(const TransformerModel& m);
TransformerModel deserialize_model(const std::string& bytes);

/// FNV-1a 64 of serialize_model, as 16 hex digits.
std::string model_fingerprint(const TransformerModel& m);

/// Writes config.json and model.bin (each via temp file + rename).
void save_checkpoint(const TransformerModel& m, const std::filesystem::path& dir);
/// Reads model.bin; checks config.json and, when present, vocab.txt
/// against it.
TransformerModel load_checkpoint(const std::filesystem::path& dir);

/// Writes `contents` to `path` through a temp file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace easynlp
