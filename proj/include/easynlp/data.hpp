#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "easynlp/tokenizer.hpp"

namespace easynlp {

// ---------------------------------------------------------------------------
// Schemas and records
// ---------------------------------------------------------------------------

enum class ColumnKind { str, integer, real };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::str;
  std::size_t arity = 1;

  bool operator==(const Column&) const = default;
};

struct DatasetSchema {
  std::vector<Column> columns;

  std::optional<std::size_t> index_of(std::string_view name) const;
  const Column& column(std::string_view name) const;  // SchemaError if absent
  /// "name:kind:arity,...", the inverse of parse_input_schema.
  std::string to_string() const;
  bool operator==(const DatasetSchema&) const = default;
};

/// "sent:str:1,label:str:1" -> two columns. Kinds: str, int, float.
DatasetSchema parse_input_schema(std::string_view spec);

using Scalar = std::variant<std::string, std::int64_t, double>;

struct Record {
  std::map<std::string, std::vector<Scalar>> values;

  /// Single-valued column rendered as text; SchemaError when the column is
  /// missing or multi-valued.
  std::string text(const std::string& column) const;
  bool operator==(const Record&) const = default;
};

std::string format_scalar(const Scalar& v);

/// Tab-separated, one record per line. Multi-valued fields hold their values
/// comma-separated.
std::vector<Record> read_table(const std::filesystem::path& path, const DatasetSchema& schema);
std::vector<Record> parse_table(std::string_view contents, const DatasetSchema& schema, const std::string& origin);
std::string format_table(const std::vector<Record>& records, const DatasetSchema& schema);
void write_table(const std::filesystem::path& path, const std::vector<Record>& records, const DatasetSchema& schema);

// ---------------------------------------------------------------------------
// Bundled datasets
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<Record> records;
  DatasetSchema schema;
};

/// Sorted registry names.
std::vector<std::string> dataset_names();
std::vector<std::string> dataset_splits(const std::string& name);

/// Bundled synthetic dataset. When EASYNLP_TOY_DATA_DIR is set and holds
/// <dir>/<name>/<split>.tsv, that file is read instead.
Dataset load_dataset(const std::string& name, const std::string& split = "train");

// ---------------------------------------------------------------------------
// Model inputs
// ---------------------------------------------------------------------------

enum class TaskKind { text_classify, text_match, language_modeling };

/// Ordered label strings; position = class id.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::string> labels);  // UsageError on duplicates
  /// "0,1" -> {"0", "1"}
  static LabelMap parse(std::string_view comma_list);

  int id(const std::string& label) const;  // LabelError naming the label
  const std::string& label(int id) const;
  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  bool operator==(const LabelMap&) const = default;

 private:
  std::vector<std::string> labels_;
};

struct InputSpec {
  std::string first_sequence;
  std::string second_sequence;  // text_match only
  std::string label_name;       // empty: unlabeled
  std::size_t max_len = 128;
};

/// [CLS] a [SEP] b [SEP]. Tokens are dropped from the end of the longer
/// segment until the pair fits.
TokenSequence encode_pair(const Vocabulary& vocab, std::string_view a, std::string_view b, std::size_t max_len);

/// Encodes one record per the task.
TokenSequence encode_record(const Record& r, const Vocabulary& vocab, TaskKind task, const InputSpec& spec);

Batch to_model_input(const std::vector<Record>& records, const DatasetSchema& schema, const Vocabulary& vocab,
                     TaskKind task, const LabelMap& labels, const InputSpec& spec);

// ---------------------------------------------------------------------------
// Knowledge base
// ---------------------------------------------------------------------------

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;

  auto operator<=>(const Triple&) const = default;
};

class TripleStore {
 public:
  TripleStore() = default;
  /// Drops exact duplicates (first occurrence kept); relation ids in
  /// first-seen order.
  explicit TripleStore(const std::vector<Triple>& triples);

  const std::vector<Triple>& triples() const { return triples_; }
  const std::vector<std::size_t>& by_head(const std::string& head) const;  // empty when unknown
  std::size_t relation_count() const { return relation_names_.size(); }
  int relation_id(const std::string& relation) const;  // IndexError if unknown
  const std::vector<std::string>& relation_names() const { return relation_names_; }
  std::vector<std::string> heads() const;  // sorted

 private:
  std::vector<Triple> triples_;
  std::map<std::string, std::vector<std::size_t>> by_head_;
  std::map<std::string, int> relation_ids_;
  std::vector<std::string> relation_names_;
};

/// JSONL, one {"head", "relation", "tail"} object per line.
TripleStore load_triples(const std::filesystem::path& path);
TripleStore parse_triples(std::string_view contents, const std::string& origin);
std::string format_triples(const std::vector<Triple>& triples);

struct EntityStats {
  std::map<std::string, std::size_t> counts;
};

/// Whole-token, case-folded occurrences of each entity, counted left to
/// right without overlap. Entities with out-of-vocabulary words count 0.
EntityStats entity_frequencies(const std::vector<TokenSequence>& corpus, const Vocabulary& vocab,
                               const std::vector<std::string>& entities);

}  // namespace easynlp
