#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace easynlp {

class Rng;

using TokenId = int;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr TokenId kNumSpecialTokens = 5;
inline constexpr int kIgnoreLabel = -100;

inline constexpr std::string_view kSpecialTokens[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

/// Token <-> id table. Ids 0-4 are always [PAD] [UNK] [CLS] [SEP] [MASK].
class Vocabulary {
 public:
  Vocabulary();

  /// Full token list, specials included; validates the special prefix and
  /// uniqueness.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  /// One token per line, line number = id.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  TokenId add(const std::string& token);  // returns the existing id if present
  TokenId id(std::string_view token) const;  // [UNK] for unknown tokens
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercases ASCII, splits on whitespace and isolates every ASCII
/// punctuation character. The literal special tokens ("[MASK]" etc., upper
/// case) survive as single words.
std::vector<std::string> split_words(std::string_view text);

/// Specials first, then tokens with count >= min_freq ordered by descending
/// count, ties lexicographic.
Vocabulary build_vocab(const std::vector<std::string>& corpus, std::size_t min_freq);

struct EntitySpan {
  std::size_t start = 0;  // half-open token range
  std::size_t end = 0;
  std::string entity;

  bool operator==(const EntitySpan&) const = default;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<EntitySpan> entity_spans;  // sorted, non-overlapping
};

/// Entity names pre-tokenized against a vocabulary. Names that are empty or
/// contain out-of-vocabulary words never match.
class EntityLexicon {
 public:
  EntityLexicon(const Vocabulary& vocab, const std::vector<std::string>& names);

  /// Left-to-right, longest match first, non-overlapping.
  std::vector<EntitySpan> find(std::span<const TokenId> ids) const;
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::string name;
    std::vector<TokenId> ids;
  };
  std::vector<Entry> entries_;
  std::unordered_map<TokenId, std::vector<std::size_t>> by_first_;
};

/// [CLS] words [SEP], truncated to max_len with the final [SEP] kept.
TokenSequence encode(const Vocabulary& vocab, std::string_view text, std::size_t max_len);
/// As above, and annotates entity spans before truncation. Spans that would
/// reach past the kept words are dropped.
TokenSequence encode(const Vocabulary& vocab, std::string_view text, std::size_t max_len,
                     const EntityLexicon& lexicon);

/// Space-joined tokens, without [CLS], [SEP] and [PAD].
std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids);

struct MaskingPolicy {
  double mask_prob = 0.15;
  // Of the selected positions: this fraction becomes [MASK], the next
  // `random_fraction` a random non-special token, the rest stay unchanged.
  double mask_fraction = 0.8;
  double random_fraction = 0.1;
};

struct MaskedTokens {
  std::vector<TokenId> ids;
  std::vector<int> labels;  // original id where selected, kIgnoreLabel elsewhere
};

/// BERT-style masking. Special-token positions are never selected. For each
/// other position in order: one uniform draw decides selection; a selected
/// position takes a second draw for the branch, and the random branch a
/// third for the replacement id in [5, vocab_size).
MaskedTokens apply_mlm_masking(std::span<const TokenId> ids, std::size_t vocab_size, const MaskingPolicy& policy,
                               Rng& rng);
MaskedTokens apply_mlm_masking(const TokenSequence& seq, std::size_t vocab_size, double mask_prob,
                               std::uint64_t seed);

struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> input_ids;     // batch_size * seq_len, row-major
  std::vector<int> attention_mask;    // 1 where input_ids != [PAD]
  std::vector<int> class_labels;      // per row; empty when unlabeled
  std::vector<int> mlm_labels;        // batch_size * seq_len; empty when unused

  TokenId id(std::size_t row, std::size_t pos) const { return input_ids[row * seq_len + pos]; }
};

/// Pads to the longest sequence, or to pad_to when given.
Batch pad_batch(const std::vector<TokenSequence>& seqs, std::optional<std::size_t> pad_to = std::nullopt);
Batch pad_batch(const std::vector<std::vector<TokenId>>& seqs, std::optional<std::size_t> pad_to = std::nullopt);

}  // namespace easynlp
