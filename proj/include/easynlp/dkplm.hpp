#pragma once

// Knowledge-enhanced pre-training: long-tail entities in the corpus are
// masked out and their input embeddings are replaced by a pseudo token built
// from knowledge-base triples with the model's own embedding table. A
// relation-decoding head must recover which relation was injected.

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "easynlp/data.hpp"
#include "easynlp/model.hpp"
#include "easynlp/toydata.hpp"

namespace easynlp {

struct LongTailPolicy {
  double tail_quantile = 0.5;
  std::size_t min_triples = 1;
};

/// Entities whose count is <= the nearest-rank tail_quantile of all counts
/// (rank ceil(q·N) in ascending order) and that head >= min_triples triples.
std::set<std::string> select_longtail_entities(const EntityStats& stats, const TripleStore& kb,
                                               const LongTailPolicy& policy);

/// Mean over the entity's triples of (mean relation-token embedding + mean
/// tail-token embedding), L2-normalized and rescaled to the mean row norm of
/// the token table. Relation names are split on '_'. Out-of-vocabulary words
/// use the [UNK] row. The result is a constant [d] tensor.
Tensor pseudo_token_embedding(const std::string& entity, const TripleStore& kb, const TransformerModel& model,
                              const Vocabulary& vocab);

struct InjectedSpan {
  std::size_t row = 0;
  std::size_t start = 0;  // half-open token range within the row
  std::size_t end = 0;
  std::string entity;
  Tensor embedding;  // [d]
  int relation_target = 0;
};

struct PretrainBatch {
  Batch batch;  // masked input_ids, attention_mask, mlm_labels
  std::vector<InjectedSpan> spans;
  double lambda_rel = 1.0;
};

/// MLM masking per row (one rng seeded by `seed`, rows in order), then every
/// span of a long-tail entity is set to [MASK] with the original tokens as
/// labels, its pseudo embedding recorded and one of its triples drawn
/// uniformly from the same rng as the relation target.
PretrainBatch build_pretrain_batch(const std::vector<TokenSequence>& seqs, const TripleStore& kb,
                                   const std::set<std::string>& longtail, const TransformerModel& model,
                                   const Vocabulary& vocab, double mask_prob, std::uint64_t seed,
                                   double lambda_rel = 1.0);

/// L_mlm + lambda_rel · L_rel. L_mlm is the mean cross-entropy over labeled
/// positions (0 when none are labeled); L_rel is the cross-entropy of the
/// relation head on the mean hidden state of each injected span.
Tensor pretrain_forward_loss(const TransformerModel& model, const PretrainBatch& batch, bool train_mode = false,
                             Rng* dropout_rng = nullptr);

struct ProbeReport {
  double p_at_1 = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t oov_gold = 0;
};

/// Fraction of probes whose top MLM prediction at the single [MASK] equals
/// the gold token; ties go to the lowest id. Gold tokens missing from the
/// vocabulary count as wrong (one warning on stderr per call).
ProbeReport knowledge_probe(const TransformerModel& model, const Vocabulary& vocab,
                            const std::vector<ClozeProbe>& probes, std::size_t max_len = 64);

/// P@1 of always answering the most common gold token.
double majority_baseline(const std::vector<ClozeProbe>& probes);

// ---------------------------------------------------------------------------
// Pre-training loop
// ---------------------------------------------------------------------------

struct DkplmCorpus {
  std::vector<TokenSequence> seqs;  // with entity spans for every kb head
  TripleStore kb;
  EntityStats stats;
  std::set<std::string> longtail;
};

DkplmCorpus prepare_dkplm_corpus(const Vocabulary& vocab, const std::vector<std::string>& sentences, TripleStore kb,
                                 const LongTailPolicy& policy, std::size_t max_len);

struct DkplmOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double mask_prob = 0.15;
  double lambda_rel = 1.0;
  bool inject = true;  // false: plain MLM on the same corpus
  std::uint64_t seed = 42;
  std::function<void(std::size_t epoch, double loss)> on_epoch;
};

/// Returns the mean training loss of each epoch.
std::vector<double> train_dkplm(TransformerModel& model, const DkplmCorpus& corpus, const Vocabulary& vocab,
                                const DkplmOptions& options);

}  // namespace easynlp
