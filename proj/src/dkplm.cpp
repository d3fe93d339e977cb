#include "easynlp/dkplm.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>

#include "easynlp/errors.hpp"
#include "easynlp/rng.hpp"
#include "easynlp/train.hpp"

namespace easynlp {

std::set<std::string> select_longtail_entities(const EntityStats& stats, const TripleStore& kb,
                                               const LongTailPolicy& policy) {
  if (!(policy.tail_quantile > 0.0 && policy.tail_quantile <= 1.0)) {
    throw DomainError("tail_quantile must lie in (0, 1]");
  }
  if (stats.counts.empty()) throw DomainError("entity statistics are empty");
  std::vector<std::size_t> counts;
  for (const auto& [name, c] : stats.counts) counts.push_back(c);
  std::sort(counts.begin(), counts.end());
  const double n = static_cast<double>(counts.size());
  auto rank = static_cast<std::size_t>(std::ceil(policy.tail_quantile * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, counts.size());
  const std::size_t threshold = counts[rank - 1];

  std::set<std::string> out;
  for (const auto& [name, c] : stats.counts)
    if (c <= threshold && kb.by_head(name).size() >= policy.min_triples) out.insert(name);
  return out;
}

namespace {

void add_mean_row(const std::vector<std::string>& words, const Vocabulary& vocab, std::span<const double> table,
                  std::size_t d, std::vector<double>& acc) {
  std::vector<TokenId> ids;
  for (const auto& w : words) ids.push_back(vocab.id(w));
  if (ids.empty()) ids.push_back(kUnkId);
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (TokenId id : ids) {
    const auto row = static_cast<std::size_t>(id);
    for (std::size_t k = 0; k < d; ++k) acc[k] += inv * table[row * d + k];
  }
}

}  // namespace

Tensor pseudo_token_embedding(const std::string& entity, const TripleStore& kb, const TransformerModel& model,
                              const Vocabulary& vocab) {
  const auto& ids = kb.by_head(entity);
  if (ids.empty()) throw DomainError("entity '" + entity + "' has no triples");
  const Tensor& table = model.param("embeddings.token");
  const std::size_t d = table.dim(1), V = table.dim(0);
  if (vocab.size() != V) throw ValidationError("vocabulary size does not match the embedding table");
  const auto data = table.data();

  std::vector<double> acc(d, 0.0);
  for (auto id : ids) {
    const auto& t = kb.triples()[id];
    std::string relation = t.relation;
    std::replace(relation.begin(), relation.end(), '_', ' ');
    std::vector<double> component(d, 0.0);
    add_mean_row(split_words(relation), vocab, data, d, component);
    add_mean_row(split_words(t.tail), vocab, data, d, component);
    for (std::size_t k = 0; k < d; ++k) acc[k] += component[k] / static_cast<double>(ids.size());
  }

  double mean_norm = 0.0;
  for (std::size_t r = 0; r < V; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += data[r * d + k] * data[r * d + k];
    mean_norm += std::sqrt(s);
  }
  mean_norm /= static_cast<double>(V);

  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& v : acc) v *= mean_norm / norm;
  return Tensor::from_data({d}, std::move(acc));
}

PretrainBatch build_pretrain_batch(const std::vector<TokenSequence>& seqs, const TripleStore& kb,
                                   const std::set<std::string>& longtail, const TransformerModel& model,
                                   const Vocabulary& vocab, double mask_prob, std::uint64_t seed, double lambda_rel) {
  Rng rng(seed);
  MaskingPolicy policy;
  policy.mask_prob = mask_prob;
  const auto V = model.config().vocab_size;

  std::vector<std::vector<TokenId>> ids;
  std::vector<std::vector<int>> labels;
  PretrainBatch out;
  out.lambda_rel = lambda_rel;
  std::map<std::string, Tensor> pseudo;
  for (std::size_t row = 0; row < seqs.size(); ++row) {
    const auto& seq = seqs[row];
    auto masked = apply_mlm_masking(seq.ids, V, policy, rng);
    for (const auto& span : seq.entity_spans) {
      if (!longtail.count(span.entity)) continue;
      const auto& triple_ids = kb.by_head(span.entity);
      if (triple_ids.empty()) continue;
      for (std::size_t p = span.start; p < span.end; ++p) {
        masked.ids[p] = kMaskId;
        masked.labels[p] = seq.ids[p];
      }
      auto it = pseudo.find(span.entity);
      if (it == pseudo.end()) it = pseudo.emplace(span.entity, pseudo_token_embedding(span.entity, kb, model, vocab)).first;
      const auto& triple = kb.triples()[triple_ids[rng.uniform_int(triple_ids.size())]];
      out.spans.push_back({row, span.start, span.end, span.entity, it->second, kb.relation_id(triple.relation)});
    }
    ids.push_back(std::move(masked.ids));
    labels.push_back(std::move(masked.labels));
  }
  out.batch = pad_batch(ids);
  out.batch.mlm_labels.assign(out.batch.batch_size * out.batch.seq_len, kIgnoreLabel);
  for (std::size_t row = 0; row < labels.size(); ++row)
    std::copy(labels[row].begin(), labels[row].end(), out.batch.mlm_labels.begin() + static_cast<std::ptrdiff_t>(row * out.batch.seq_len));
  return out;
}

Tensor pretrain_forward_loss(const TransformerModel& model, const PretrainBatch& pb, bool train_mode, Rng* dropout_rng) {
  const auto& batch = pb.batch;
  const std::size_t L = batch.seq_len, d = model.config().hidden_dim;

  EmbeddingOverride overrides;
  std::vector<double> values;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<int> relation_targets;
  for (const auto& s : pb.spans) {
    if (s.embedding.size() != d) throw DimensionError("pseudo embedding does not match hidden_dim");
    groups.emplace_back();
    for (std::size_t p = s.start; p < s.end; ++p) {
      overrides.positions.push_back(s.row * L + p);
      groups.back().push_back(s.row * L + p);
      values.insert(values.end(), s.embedding.data().begin(), s.embedding.data().end());
    }
    relation_targets.push_back(s.relation_target);
  }
  ForwardOptions opts;
  opts.train = train_mode;
  opts.dropout_rng = dropout_rng;
  if (!overrides.positions.empty()) {
    overrides.values = Tensor::from_data({overrides.positions.size(), d}, std::move(values));
    opts.overrides = &overrides;
  }
  const Tensor flat = flatten_tokens(encode_sequence(model, batch, opts));

  std::vector<std::size_t> positions;
  std::vector<int> targets;
  for (std::size_t i = 0; i < batch.mlm_labels.size(); ++i) {
    if (batch.mlm_labels[i] == kIgnoreLabel) continue;
    positions.push_back(i);
    targets.push_back(batch.mlm_labels[i]);
  }
  Tensor loss = positions.empty() ? Tensor::scalar(0.0) : cross_entropy(mlm_logits_at(model, flat, positions), targets);
  if (!groups.empty()) {
    const Tensor rel = cross_entropy(relation_logits(model, segment_mean(flat, groups)), relation_targets);
    loss = add(loss, scale(rel, pb.lambda_rel));
  }
  return loss;
}

ProbeReport knowledge_probe(const TransformerModel& model, const Vocabulary& vocab,
                            const std::vector<ClozeProbe>& probes, std::size_t max_len) {
  if (probes.empty()) throw DomainError("empty probe set");
  ProbeReport report;
  report.total = probes.size();
  std::vector<TokenSequence> seqs;
  std::vector<std::size_t> mask_pos;
  for (const auto& p : probes) {
    auto seq = encode(vocab, p.sentence, max_len);
    const auto n_masks = std::count(seq.ids.begin(), seq.ids.end(), kMaskId);
    if (n_masks != 1) {
      throw DomainError("probe '" + p.sentence + "' has " + std::to_string(n_masks) + " [MASK] tokens, expected 1");
    }
    mask_pos.push_back(static_cast<std::size_t>(std::find(seq.ids.begin(), seq.ids.end(), kMaskId) - seq.ids.begin()));
    seqs.push_back(std::move(seq));
  }
  constexpr std::size_t kChunk = 64;
  for (const auto& chunk : sequential_batches(probes.size(), kChunk)) {
    const auto batch = pad_batch(select(seqs, chunk));
    std::vector<std::size_t> flat_pos;
    for (std::size_t r = 0; r < chunk.size(); ++r) flat_pos.push_back(r * batch.seq_len + mask_pos[chunk[r]]);
    const auto predicted = argmax_rows(mlm_logits_at(model, encode_sequence(model, batch, false), flat_pos));
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto gold = vocab.find(probes[chunk[r]].gold);
      if (!gold) {
        ++report.oov_gold;
        continue;
      }
      report.correct += predicted[r] == *gold;
    }
  }
  if (report.oov_gold > 0) {
    std::cerr << "warning: " << report.oov_gold << " probe(s) have an out-of-vocabulary gold token; counted as wrong\n";
  }
  report.p_at_1 = static_cast<double>(report.correct) / static_cast<double>(report.total);
  return report;
}

double majority_baseline(const std::vector<ClozeProbe>& probes) {
  if (probes.empty()) throw DomainError("empty probe set");
  std::map<std::string, std::size_t> freq;
  std::size_t best = 0;
  for (const auto& p : probes) best = std::max(best, ++freq[p.gold]);
  return static_cast<double>(best) / static_cast<double>(probes.size());
}

DkplmCorpus prepare_dkplm_corpus(const Vocabulary& vocab, const std::vector<std::string>& sentences, TripleStore kb,
                                 const LongTailPolicy& policy, std::size_t max_len) {
  DkplmCorpus c;
  const auto heads = kb.heads();
  const EntityLexicon lexicon(vocab, heads);
  for (const auto& s : sentences) c.seqs.push_back(encode(vocab, s, max_len, lexicon));
  c.stats = entity_frequencies(c.seqs, vocab, heads);
  c.longtail = select_longtail_entities(c.stats, kb, policy);
  c.kb = std::move(kb);
  return c;
}

std::vector<double> train_dkplm(TransformerModel& model, const DkplmCorpus& corpus, const Vocabulary& vocab,
                                const DkplmOptions& options) {
  if (corpus.seqs.empty()) throw DomainError("empty pre-training corpus");
  Rng rng(options.seed);
  Rng dropout_rng = rng.fork(1);
  AdamState adam;
  adam.lr = options.learning_rate;
  const auto params = model.parameters();
  const std::set<std::string> none;
  const auto& longtail = options.inject ? corpus.longtail : none;
  std::vector<double> epoch_loss;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    double total = 0.0;
    const auto batches = minibatches(corpus.seqs.size(), options.batch_size, rng);
    for (const auto& idx : batches) {
      const auto pb = build_pretrain_batch(select(corpus.seqs, idx), corpus.kb, longtail, model, vocab,
                                           options.mask_prob, rng.next(), options.lambda_rel);
      total += train_step(params, adam, [&] { return pretrain_forward_loss(model, pb, true, &dropout_rng); });
    }
    epoch_loss.push_back(total / static_cast<double>(batches.size()));
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss.back());
  }
  return epoch_loss;
}

}  // namespace easynlp
