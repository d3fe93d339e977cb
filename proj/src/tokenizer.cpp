#include "easynlp/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "easynlp/errors.hpp"
#include "easynlp/rng.hpp"

namespace easynlp {

Vocabulary::Vocabulary() {
  for (auto s : kSpecialTokens) add(std::string(s));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < static_cast<std::size_t>(kNumSpecialTokens)) {
    throw ValidationError("vocabulary has fewer than the 5 special tokens");
  }
  for (std::size_t i = 0; i < static_cast<std::size_t>(kNumSpecialTokens); ++i) {
    if (tokens[i] != kSpecialTokens[i]) {
      throw ValidationError("vocabulary id " + std::to_string(i) + " must be " + std::string(kSpecialTokens[i]));
    }
  }
  Vocabulary v;
  for (std::size_t i = kNumSpecialTokens; i < tokens.size(); ++i) {
    if (v.find(tokens[i])) throw ValidationError("duplicate vocabulary token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

TokenId Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  return std::nullopt;
}

TokenId Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnkId); }

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '[') {
      bool matched = false;
      for (auto s : kSpecialTokens) {
        if (text.substr(i, s.size()) == s) {
          flush();
          words.emplace_back(s);
          i += s.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      words.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(c < 128 ? std::tolower(c) : c));
    }
    ++i;
  }
  flush();
  return words;
}

namespace {

bool is_special_word(const std::string& w) {
  return std::any_of(std::begin(kSpecialTokens), std::end(kSpecialTokens), [&](auto s) { return w == s; });
}

}  // namespace

Vocabulary build_vocab(const std::vector<std::string>& corpus, std::size_t min_freq) {
  if (corpus.empty()) throw DomainError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus)
    for (auto& w : split_words(line))
      if (!is_special_word(w)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [word, count] : ranked)
    if (count >= min_freq) v.add(word);
  return v;
}

EntityLexicon::EntityLexicon(const Vocabulary& vocab, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    Entry e{name, {}};
    bool known = true;
    for (const auto& w : split_words(name)) {
      const auto id = vocab.find(w);
      if (!id || *id < kNumSpecialTokens) {
        known = false;
        break;
      }
      e.ids.push_back(*id);
    }
    if (!known || e.ids.empty()) continue;
    by_first_[e.ids.front()].push_back(entries_.size());
    entries_.push_back(std::move(e));
  }
}

std::vector<EntitySpan> EntityLexicon::find(std::span<const TokenId> ids) const {
  std::vector<EntitySpan> spans;
  std::size_t i = 0;
  while (i < ids.size()) {
    const Entry* best = nullptr;
    if (auto it = by_first_.find(ids[i]); it != by_first_.end()) {
      for (std::size_t idx : it->second) {
        const auto& e = entries_[idx];
        if (i + e.ids.size() > ids.size()) continue;
        if (!std::equal(e.ids.begin(), e.ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(i))) continue;
        if (best == nullptr || e.ids.size() > best->ids.size()) best = &e;
      }
    }
    if (best != nullptr) {
      spans.push_back({i, i + best->ids.size(), best->name});
      i += best->ids.size();
    } else {
      ++i;
    }
  }
  return spans;
}

namespace {

TokenSequence encode_impl(const Vocabulary& vocab, std::string_view text, std::size_t max_len,
                          const EntityLexicon* lexicon) {
  if (max_len < 2) throw DomainError("max_len must be at least 2");
  TokenSequence seq;
  seq.ids.push_back(kClsId);
  for (const auto& w : split_words(text)) seq.ids.push_back(vocab.id(w));
  seq.ids.push_back(kSepId);
  if (lexicon != nullptr) seq.entity_spans = lexicon->find(seq.ids);
  if (seq.ids.size() > max_len) {
    seq.ids.resize(max_len);
    seq.ids.back() = kSepId;
    const std::size_t limit = max_len - 1;
    std::erase_if(seq.entity_spans, [limit](const EntitySpan& s) { return s.end > limit; });
  }
  return seq;
}

}  // namespace

TokenSequence encode(const Vocabulary& vocab, std::string_view text, std::size_t max_len) {
  return encode_impl(vocab, text, max_len, nullptr);
}

TokenSequence encode(const Vocabulary& vocab, std::string_view text, std::size_t max_len,
                     const EntityLexicon& lexicon) {
  return encode_impl(vocab, text, max_len, &lexicon);
}

std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) {
    if (id == kClsId || id == kSepId || id == kPadId) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

MaskedTokens apply_mlm_masking(std::span<const TokenId> ids, std::size_t vocab_size, const MaskingPolicy& policy,
                               Rng& rng) {
  if (policy.mask_prob < 0.0 || policy.mask_prob > 1.0) throw DomainError("mask_prob must lie in [0, 1]");
  MaskedTokens out{{ids.begin(), ids.end()}, std::vector<int>(ids.size(), kIgnoreLabel)};
  const auto non_special = vocab_size > static_cast<std::size_t>(kNumSpecialTokens)
                               ? vocab_size - static_cast<std::size_t>(kNumSpecialTokens)
                               : 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < kNumSpecialTokens) continue;
    if (rng.uniform() >= policy.mask_prob) continue;
    out.labels[i] = ids[i];
    const double branch = rng.uniform();
    if (branch < policy.mask_fraction) {
      out.ids[i] = kMaskId;
    } else if (branch < policy.mask_fraction + policy.random_fraction) {
      if (non_special > 0) out.ids[i] = kNumSpecialTokens + static_cast<TokenId>(rng.uniform_int(non_special));
    }
  }
  return out;
}

MaskedTokens apply_mlm_masking(const TokenSequence& seq, std::size_t vocab_size, double mask_prob,
                               std::uint64_t seed) {
  Rng rng(seed);
  MaskingPolicy policy;
  policy.mask_prob = mask_prob;
  return apply_mlm_masking(seq.ids, vocab_size, policy, rng);
}

Batch pad_batch(const std::vector<std::vector<TokenId>>& seqs, std::optional<std::size_t> pad_to) {
  if (seqs.empty()) throw DomainError("cannot pad an empty list of sequences");
  std::size_t longest = 0;
  for (const auto& s : seqs) longest = std::max(longest, s.size());
  const std::size_t len = pad_to.value_or(longest);
  if (longest > len) {
    throw DomainError("sequence of length " + std::to_string(longest) + " exceeds pad_to " + std::to_string(len));
  }
  Batch b;
  b.batch_size = seqs.size();
  b.seq_len = len;
  b.input_ids.assign(b.batch_size * len, kPadId);
  b.attention_mask.assign(b.batch_size * len, 0);
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    for (std::size_t j = 0; j < seqs[r].size(); ++j) {
      b.input_ids[r * len + j] = seqs[r][j];
      b.attention_mask[r * len + j] = seqs[r][j] != kPadId ? 1 : 0;
    }
  }
  return b;
}

Batch pad_batch(const std::vector<TokenSequence>& seqs, std::optional<std::size_t> pad_to) {
  std::vector<std::vector<TokenId>> ids;
  ids.reserve(seqs.size());
  for (const auto& s : seqs) ids.push_back(s.ids);
  return pad_batch(ids, pad_to);
}

}  // namespace easynlp
