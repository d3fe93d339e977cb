#include "easynlp/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "easynlp/errors.hpp"
#include "easynlp/rng.hpp"
#include "easynlp/train.hpp"

namespace easynlp {

PromptTemplate::PromptTemplate(std::vector<TemplateSegment> segments) : segments_(std::move(segments)) {
  std::size_t masks = 0, inputs = 0;
  for (const auto& s : segments_) {
    if (std::holds_alternative<MaskSegment>(s)) ++masks;
    if (const auto* in = std::get_if<InputSegment>(&s)) {
      if (in->index > 1) throw TemplateError("only {input} and {input2} are supported");
      ++inputs;
    }
    if (const auto* p = std::get_if<PromptSegment>(&s); p != nullptr && p->length == 0) {
      throw TemplateError("prompt slot of length 0");
    }
  }
  if (masks != 1) throw TemplateError("template needs exactly one {mask}, found " + std::to_string(masks));
  if (inputs == 0) throw TemplateError("template has no {input} slot");
}

PromptTemplate PromptTemplate::parse(std::string_view text) {
  std::vector<TemplateSegment> out;
  std::string literal;
  auto flush = [&] {
    if (!literal.empty()) out.push_back(LiteralSegment{literal});
    literal.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '}') throw TemplateError("unbalanced '}' in \"" + std::string(text) + "\"");
    if (text[i] != '{') {
      literal += text[i];
      continue;
    }
    const auto close = text.find('}', i);
    if (close == std::string_view::npos) throw TemplateError("unbalanced '{' in \"" + std::string(text) + "\"");
    const std::string slot(text.substr(i + 1, close - i - 1));
    flush();
    if (slot == "input") {
      out.push_back(InputSegment{0});
    } else if (slot == "input2") {
      out.push_back(InputSegment{1});
    } else if (slot == "mask") {
      out.push_back(MaskSegment{});
    } else if (slot.starts_with("p*")) {
      std::size_t k = 0;
      const auto digits = slot.substr(2);
      if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw TemplateError("bad prompt slot {" + slot + "}");
      }
      k = std::stoul(digits);
      out.push_back(PromptSegment{k});
    } else {
      throw TemplateError("unknown slot {" + slot + "}");
    }
    i = close;
  }
  flush();
  return PromptTemplate(std::move(out));
}

std::size_t PromptTemplate::prompt_length() const {
  std::size_t k = 0;
  for (const auto& s : segments_)
    if (const auto* p = std::get_if<PromptSegment>(&s)) k += p->length;
  return k;
}

std::size_t PromptTemplate::input_count() const {
  std::size_t n = 0;
  for (const auto& s : segments_)
    if (const auto* in = std::get_if<InputSegment>(&s)) n = std::max(n, in->index + 1);
  return n;
}

std::string PromptTemplate::to_string() const {
  std::string out;
  for (const auto& s : segments_) {
    if (const auto* l = std::get_if<LiteralSegment>(&s)) out += l->text;
    if (const auto* in = std::get_if<InputSegment>(&s)) out += in->index == 0 ? "{input}" : "{input2}";
    if (std::holds_alternative<MaskSegment>(s)) out += "{mask}";
    if (const auto* p = std::get_if<PromptSegment>(&s)) out += "{p*" + std::to_string(p->length) + "}";
  }
  return out;
}

PromptedSequence apply_template(const PromptTemplate& t, const std::vector<std::string>& inputs,
                                const Vocabulary& vocab, std::size_t max_len) {
  if (inputs.size() < t.input_count()) {
    throw TemplateError("template \"" + t.to_string() + "\" needs " + std::to_string(t.input_count()) +
                        " input(s), got " + std::to_string(inputs.size()));
  }
  std::vector<std::vector<std::string>> words;
  for (const auto& s : inputs) words.push_back(split_words(s));

  std::size_t fixed = 2;
  for (const auto& s : t.segments()) {
    if (const auto* l = std::get_if<LiteralSegment>(&s)) fixed += split_words(l->text).size();
    if (std::holds_alternative<MaskSegment>(s)) ++fixed;
    if (const auto* p = std::get_if<PromptSegment>(&s)) fixed += p->length;
  }
  auto total = [&] {
    std::size_t n = fixed;
    for (const auto& s : t.segments())
      if (const auto* in = std::get_if<InputSegment>(&s)) n += words[in->index].size();
    return n;
  };
  while (total() > max_len) {
    std::size_t longest = 0;
    for (std::size_t i = 1; i < t.input_count(); ++i)
      if (words[i].size() > words[longest].size()) longest = i;
    if (words[longest].empty()) {
      throw TemplateError("template \"" + t.to_string() + "\" does not fit in " + std::to_string(max_len) + " tokens");
    }
    words[longest].pop_back();
  }

  PromptedSequence out;
  auto& ids = out.seq.ids;
  ids.push_back(kClsId);
  for (const auto& s : t.segments()) {
    if (const auto* l = std::get_if<LiteralSegment>(&s)) {
      for (const auto& w : split_words(l->text)) ids.push_back(vocab.id(w));
    } else if (const auto* in = std::get_if<InputSegment>(&s)) {
      for (const auto& w : words[in->index]) ids.push_back(vocab.id(w));
    } else if (std::holds_alternative<MaskSegment>(s)) {
      out.mask_pos = ids.size();
      ids.push_back(kMaskId);
    } else {
      for (std::size_t j = 0; j < std::get<PromptSegment>(s).length; ++j) {
        out.prompt_positions.push_back(ids.size());
        ids.push_back(kUnkId);
      }
    }
  }
  ids.push_back(kSepId);
  return out;
}

Verbalizer::Verbalizer(const std::vector<std::string>& words, const Vocabulary& vocab) : words_(words) {
  if (words.empty()) throw TemplateError("verbalizer has no label words");
  std::set<std::size_t> seen;
  for (const auto& w : words) {
    const auto id = vocab.find(w);
    if (!id) throw TemplateError("label word '" + w + "' is not in the vocabulary");
    if (!seen.insert(static_cast<std::size_t>(*id)).second) throw TemplateError("label word '" + w + "' is used twice");
    token_ids_.push_back(static_cast<std::size_t>(*id));
  }
}

ContinuousPrompt ContinuousPrompt::random(std::size_t k, std::size_t d, Rng& rng) {
  if (k == 0) throw TemplateError("continuous prompt length must be at least 1");
  std::vector<double> data(k * d);
  for (double& v : data) v = rng.truncated_normal(0.02);
  return {Tensor::from_data({k, d}, std::move(data), true)};
}

ContinuousPrompt ContinuousPrompt::from_tokens(const TransformerModel& model, const std::vector<TokenId>& ids) {
  if (ids.empty()) throw TemplateError("continuous prompt length must be at least 1");
  const auto& table = model.param("embeddings.token");
  const std::size_t d = table.dim(1);
  std::vector<double> data;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.dim(0)) throw IndexError("token id " + std::to_string(id));
    const auto row = table.data().subspan(static_cast<std::size_t>(id) * d, d);
    data.insert(data.end(), row.begin(), row.end());
  }
  return {Tensor::from_data({ids.size(), d}, std::move(data), true)};
}

PromptBatch make_prompt_batch(const std::vector<PromptedSequence>& seqs, const std::vector<int>& labels) {
  if (!labels.empty() && labels.size() != seqs.size()) throw DimensionError("one label per prompted sequence");
  PromptBatch pb;
  std::vector<std::vector<TokenId>> ids;
  for (const auto& s : seqs) ids.push_back(s.seq.ids);
  pb.batch = pad_batch(ids);
  const std::size_t L = pb.batch.seq_len;
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    pb.mask_positions.push_back(r * L + seqs[r].mask_pos);
    for (auto p : seqs[r].prompt_positions) pb.prompt_positions.push_back(r * L + p);
  }
  pb.labels = labels;
  pb.batch.class_labels = labels;
  return pb;
}

Tensor prompted_forward(const TransformerModel& model, const PromptBatch& pb, const ContinuousPrompt* prompt,
                        bool train_mode, Rng* dropout_rng) {
  ForwardOptions opts;
  opts.train = train_mode;
  opts.dropout_rng = dropout_rng;
  EmbeddingOverride overrides;
  if (prompt != nullptr) {
    const std::size_t k = prompt->length(), n = pb.batch.batch_size;
    if (pb.prompt_positions.size() != n * k) {
      throw DimensionError("batch has " + std::to_string(pb.prompt_positions.size()) + " prompt positions, expected " +
                           std::to_string(n) + "x" + std::to_string(k));
    }
    std::vector<std::size_t> rows(n * k);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i % k;
    overrides.positions = pb.prompt_positions;
    overrides.values = gather_rows(prompt->embeddings, rows);
    opts.overrides = &overrides;
  }
  return encode_sequence(model, pb.batch, opts);
}

Tensor mask_hiddens(const TransformerModel& model, const PromptBatch& pb, const ContinuousPrompt* prompt,
                    bool train_mode, Rng* dropout_rng) {
  return gather_rows(flatten_tokens(prompted_forward(model, pb, prompt, train_mode, dropout_rng)), pb.mask_positions);
}

Tensor pet_class_logits(const TransformerModel& model, const Tensor& mask_hidden, const Verbalizer& verbalizer) {
  std::vector<std::size_t> all(mask_hidden.dim(0));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return select_columns(mlm_logits_at(model, mask_hidden, all), verbalizer.token_ids());
}

Tensor pet_loss(const TransformerModel& model, const PromptBatch& pb, const Verbalizer& verbalizer,
                const ContinuousPrompt* prompt, bool train_mode, Rng* dropout_rng) {
  if (pb.labels.size() != pb.batch.batch_size) throw DimensionError("prompt batch has no labels");
  const auto h = mask_hiddens(model, pb, prompt, train_mode, dropout_rng);
  return cross_entropy(pet_class_logits(model, h, verbalizer), pb.labels);
}

std::vector<int> pet_predict(const TransformerModel& model, const PromptBatch& pb, const Verbalizer& verbalizer,
                             const ContinuousPrompt* prompt) {
  return argmax_rows(pet_class_logits(model, mask_hiddens(model, pb, prompt), verbalizer));
}

Tensor cp_tuning_loss(const Tensor& mask_hiddens, const std::vector<int>& labels, const CpTuningOptions& options) {
  if (mask_hiddens.rank() != 2 || mask_hiddens.dim(0) != labels.size()) {
    throw DimensionError("cp_tuning_loss expects [n×d] with n labels");
  }
  const std::size_t n = labels.size();
  if (n < 2) throw DomainError("cp_tuning_loss needs at least 2 examples");
  if (!(options.margin_neg >= 0.0 && options.margin_neg < options.margin_pos && options.margin_pos <= 1.0)) {
    throw DomainError("margins must satisfy 0 <= m_neg < m_pos <= 1");
  }
  if (!(options.cost >= 1.0)) throw DomainError("cost must be >= 1");

  std::vector<double> pos_w(n * n, 0.0), neg_w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t np = 0, nn = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      (labels[j] == labels[i] ? np : nn) += 1;
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        pos_w[i * n + j] = 1.0 / static_cast<double>(np);
      } else {
        neg_w[i * n + j] = options.cost / static_cast<double>(nn);
      }
    }
  }
  const Tensor unit = normalize_rows(mask_hiddens);
  const Tensor sim = matmul(unit, transpose(unit));
  const Tensor pos = relu(add_scalar(scale(sim, -1.0), options.margin_pos));
  const Tensor neg = relu(add_scalar(sim, -options.margin_neg));
  const Tensor total = add(sum(mul(pos, Tensor::from_data({n, n}, std::move(pos_w)))),
                           sum(mul(neg, Tensor::from_data({n, n}, std::move(neg_w)))));
  return scale(total, 1.0 / static_cast<double>(n));
}

ClassCentroids cp_fit_centroids(const Tensor& mask_hiddens, const std::vector<int>& labels, std::size_t num_classes) {
  if (mask_hiddens.rank() != 2 || mask_hiddens.dim(0) != labels.size()) {
    throw DimensionError("cp_fit_centroids expects [n×d] with n labels");
  }
  const std::size_t d = mask_hiddens.dim(1);
  ClassCentroids c;
  c.vectors.assign(num_classes, std::vector<double>(d, 0.0));
  std::vector<std::size_t> members(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw IndexError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += mask_hiddens[i * d + k] * mask_hiddens[i * d + k];
    norm = std::sqrt(norm);
    auto& v = c.vectors[static_cast<std::size_t>(labels[i])];
    for (std::size_t k = 0; k < d; ++k) v[k] += norm > 0.0 ? mask_hiddens[i * d + k] / norm : 0.0;
    ++members[static_cast<std::size_t>(labels[i])];
  }
  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    if (members[cls] == 0) throw DomainError("class " + std::to_string(cls) + " has no examples");
    double norm = 0.0;
    for (double x : c.vectors[cls]) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& x : c.vectors[cls]) x /= norm;
  }
  return c;
}

std::vector<int> cp_predict(const ClassCentroids& centroids, const Tensor& mask_hiddens) {
  if (centroids.vectors.empty()) throw DomainError("no centroids");
  const std::size_t d = mask_hiddens.dim(1), K = centroids.vectors.size();
  if (centroids.vectors[0].size() != d) throw DimensionError("centroid dimension does not match hidden states");
  std::vector<double> flat;
  for (const auto& v : centroids.vectors) flat.insert(flat.end(), v.begin(), v.end());
  // cosine up to the positive per-row norm, which does not change the argmax
  return argmax_rows(matmul(mask_hiddens.detach(), transpose(Tensor::from_data({K, d}, std::move(flat)))));
}

ParameterList fewshot_parameters(const TransformerModel& model, const ContinuousPrompt* prompt, bool freeze_backbone) {
  ParameterList out;
  if (!freeze_backbone) out = model.parameters();
  if (prompt != nullptr) out.push_back({"prompt.embeddings", prompt->embeddings});
  if (out.empty()) throw StateError("nothing to train: backbone frozen and no prompt");
  return out;
}

}  // namespace easynlp
