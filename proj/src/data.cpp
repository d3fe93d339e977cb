#include "easynlp/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "easynlp/errors.hpp"
#include "easynlp/toydata.hpp"

namespace easynlp {

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string_view kind_name(ColumnKind k) {
  switch (k) {
    case ColumnKind::str: return "str";
    case ColumnKind::integer: return "int";
    case ColumnKind::real: return "float";
  }
  return "str";
}

std::string read_whole_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

std::optional<std::size_t> DatasetSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].name == name) return i;
  return std::nullopt;
}

const Column& DatasetSchema::column(std::string_view name) const {
  const auto i = index_of(name);
  if (!i) throw SchemaError("schema has no column '" + std::string(name) + "' (schema: " + to_string() + ")");
  return columns[*i];
}

std::string DatasetSchema::to_string() const {
  std::string out;
  for (const auto& c : columns) {
    if (!out.empty()) out += ',';
    out += c.name + ":" + std::string(kind_name(c.kind)) + ":" + std::to_string(c.arity);
  }
  return out;
}

DatasetSchema parse_input_schema(std::string_view spec) {
  DatasetSchema schema;
  for (auto segment : split(spec, ',')) {
    const auto parts = split(segment, ':');
    if (parts.size() != 3 || parts[0].empty()) {
      throw ParseError("malformed schema segment '" + std::string(segment) + "', expected name:kind:arity");
    }
    Column c;
    c.name = std::string(parts[0]);
    if (parts[1] == "str") {
      c.kind = ColumnKind::str;
    } else if (parts[1] == "int") {
      c.kind = ColumnKind::integer;
    } else if (parts[1] == "float") {
      c.kind = ColumnKind::real;
    } else {
      throw ParseError("unknown column kind in schema segment '" + std::string(segment) + "'");
    }
    const auto [ptr, ec] = std::from_chars(parts[2].data(), parts[2].data() + parts[2].size(), c.arity);
    if (ec != std::errc() || ptr != parts[2].data() + parts[2].size() || c.arity == 0) {
      throw ParseError("bad arity in schema segment '" + std::string(segment) + "'");
    }
    if (schema.index_of(c.name)) throw SchemaError("duplicate column name '" + c.name + "'");
    schema.columns.push_back(std::move(c));
  }
  return schema;
}

// ---------------------------------------------------------------------------
// Records and tables
// ---------------------------------------------------------------------------

std::string format_scalar(const Scalar& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, std::get<double>(v));
  return std::string(buf, ptr);
}

std::string Record::text(const std::string& column) const {
  auto it = values.find(column);
  if (it == values.end()) throw SchemaError("record has no column '" + column + "'");
  if (it->second.size() != 1) throw SchemaError("column '" + column + "' is multi-valued and cannot be used as text");
  return format_scalar(it->second.front());
}

namespace {

Scalar parse_scalar(std::string_view field, ColumnKind kind, const std::string& where) {
  if (kind == ColumnKind::str) return std::string(field);
  if (kind == ColumnKind::integer) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
      throw ParseError(where + ": '" + std::string(field) + "' is not an integer");
    }
    return v;
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(where + ": '" + std::string(field) + "' is not a number");
  }
  return v;
}

}  // namespace

std::vector<Record> parse_table(std::string_view contents, const DatasetSchema& schema, const std::string& origin) {
  std::vector<Record> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < contents.size()) {
    auto end = contents.find('\n', start);
    if (end == std::string_view::npos) end = contents.size();
    auto line = contents.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    const auto fields = split(line, '\t');
    if (fields.size() != schema.columns.size()) {
      throw ParseError(where + ": expected " + std::to_string(schema.columns.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    Record r;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto& col = schema.columns[i];
      std::vector<Scalar> vals;
      if (col.arity == 1) {
        vals.push_back(parse_scalar(fields[i], col.kind, where));
      } else {
        const auto parts = split(fields[i], ',');
        if (parts.size() != col.arity) {
          throw ParseError(where + ": column '" + col.name + "' expects " + std::to_string(col.arity) + " values");
        }
        for (auto p : parts) vals.push_back(parse_scalar(p, col.kind, where));
      }
      r.values.emplace(col.name, std::move(vals));
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<Record> read_table(const std::filesystem::path& path, const DatasetSchema& schema) {
  return parse_table(read_whole_file(path), schema, path.string());
}

std::string format_table(const std::vector<Record>& records, const DatasetSchema& schema) {
  std::string out;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < schema.columns.size(); ++i) {
      const auto& col = schema.columns[i];
      auto it = r.values.find(col.name);
      if (it == r.values.end() || it->second.size() != col.arity) {
        throw SchemaError("record does not fit column '" + col.name + "'");
      }
      if (i > 0) out += '\t';
      for (std::size_t k = 0; k < it->second.size(); ++k) {
        const auto s = format_scalar(it->second[k]);
        if (s.find_first_of("\t\n") != std::string::npos) {
          throw SchemaError("value in column '" + col.name + "' contains a tab or newline");
        }
        if (k > 0) out += ',';
        out += s;
      }
    }
    out += '\n';
  }
  return out;
}

void write_table(const std::filesystem::path& path, const std::vector<Record>& records, const DatasetSchema& schema) {
  const auto text = format_table(records, schema);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

namespace {

struct RegistryEntry {
  const char* name;
  const char* schema;
  std::vector<std::string> splits;
};

const std::vector<RegistryEntry>& registry() {
  static const std::vector<RegistryEntry> entries = {
      {"toy-corpus", "text:str:1", {"train"}},
      {"toy-kb", "head:str:1,relation:str:1,tail:str:1", {"train"}},
      {"toy-match", "s1:str:1,s2:str:1,label:str:1", {"train", "dev"}},
      {"toy-multidomain", "sent:str:1,label:str:1,domain:int:1", {"train", "dev"}},
      {"toy-probe", "masked_sentence:str:1,gold_token:str:1", {"test"}},
      {"toy-tnews", "sent:str:1,label:str:1", {"train", "dev"}},
  };
  return entries;
}

const RegistryEntry& find_entry(const std::string& name) {
  for (const auto& e : registry())
    if (name == e.name) return e;
  std::string known;
  for (const auto& n : dataset_names()) known += (known.empty() ? "" : ", ") + n;
  throw RegistryError("unknown dataset '" + name + "' (available: " + known + ")");
}

std::vector<Record> generate(const std::string& name, const std::string& split) {
  const bool train = split == "train";
  if (name == "toy-tnews") return make_topic_records(train ? 101 : 202, train ? 32 : 32);
  if (name == "toy-match") return make_match_records(train ? 303 : 404, train ? 48 : 32);
  if (name == "toy-multidomain") return make_multidomain_records(train ? 505 : 606, train ? 48 : 32, train ? 16 : 32);
  const auto world = make_knowledge_world(kToyWorldSeed, 2000);
  std::vector<Record> out;
  if (name == "toy-corpus") {
    for (const auto& s : world.corpus) out.push_back(Record{{{"text", {s}}}});
  } else if (name == "toy-kb") {
    for (const auto& t : world.triples) out.push_back(Record{{{"head", {t.head}}, {"relation", {t.relation}}, {"tail", {t.tail}}}});
  } else if (name == "toy-probe") {
    for (const auto& p : world.probes) out.push_back(Record{{{"masked_sentence", {p.sentence}}, {"gold_token", {p.gold}}}});
  }
  return out;
}

}  // namespace

std::vector<std::string> dataset_names() {
  std::vector<std::string> names;
  for (const auto& e : registry()) names.emplace_back(e.name);
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<std::string> dataset_splits(const std::string& name) { return find_entry(name).splits; }

Dataset load_dataset(const std::string& name, const std::string& split) {
  const auto& entry = find_entry(name);
  if (std::find(entry.splits.begin(), entry.splits.end(), split) == entry.splits.end()) {
    throw RegistryError("dataset '" + name + "' has no split '" + split + "'");
  }
  Dataset ds;
  ds.schema = parse_input_schema(entry.schema);
  if (const char* dir = std::getenv("EASYNLP_TOY_DATA_DIR"); dir != nullptr && *dir != '\0') {
    const auto path = std::filesystem::path(dir) / name / (split + ".tsv");
    if (std::filesystem::exists(path)) {
      ds.records = read_table(path, ds.schema);
      return ds;
    }
  }
  ds.records = generate(name, split);
  return ds;
}

// ---------------------------------------------------------------------------
// Labels and model inputs
// ---------------------------------------------------------------------------

LabelMap::LabelMap(std::vector<std::string> labels) : labels_(std::move(labels)) {
  std::set<std::string> seen;
  for (const auto& l : labels_) {
    if (l.empty()) throw UsageError("empty label value");
    if (!seen.insert(l).second) throw UsageError("duplicate label value '" + l + "'");
  }
}

LabelMap LabelMap::parse(std::string_view comma_list) {
  std::vector<std::string> labels;
  if (!comma_list.empty())
    for (auto p : split(comma_list, ',')) labels.emplace_back(p);
  return LabelMap(std::move(labels));
}

int LabelMap::id(const std::string& label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] == label) return static_cast<int>(i);
  std::string known;
  for (const auto& l : labels_) known += (known.empty() ? "" : ",") + l;
  throw LabelError("label '" + label + "' is not in the label map {" + known + "}");
}

const std::string& LabelMap::label(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= labels_.size()) {
    throw IndexError("class id " + std::to_string(id) + " outside label map of size " + std::to_string(size()));
  }
  return labels_[static_cast<std::size_t>(id)];
}

TokenSequence encode_pair(const Vocabulary& vocab, std::string_view a, std::string_view b, std::size_t max_len) {
  if (max_len < 3) throw DomainError("max_len must be at least 3 for a sentence pair");
  std::vector<TokenId> ia, ib;
  for (const auto& w : split_words(a)) ia.push_back(vocab.id(w));
  for (const auto& w : split_words(b)) ib.push_back(vocab.id(w));
  while (ia.size() + ib.size() + 3 > max_len) {
    if (ia.size() >= ib.size()) {
      ia.pop_back();
    } else {
      ib.pop_back();
    }
  }
  TokenSequence s;
  s.ids.push_back(kClsId);
  s.ids.insert(s.ids.end(), ia.begin(), ia.end());
  s.ids.push_back(kSepId);
  s.ids.insert(s.ids.end(), ib.begin(), ib.end());
  s.ids.push_back(kSepId);
  return s;
}

TokenSequence encode_record(const Record& r, const Vocabulary& vocab, TaskKind task, const InputSpec& spec) {
  if (task == TaskKind::text_match) {
    if (spec.second_sequence.empty()) throw UsageError("text_match needs a second_sequence column");
    return encode_pair(vocab, r.text(spec.first_sequence), r.text(spec.second_sequence), spec.max_len);
  }
  return encode(vocab, r.text(spec.first_sequence), spec.max_len);
}

Batch to_model_input(const std::vector<Record>& records, const DatasetSchema& schema, const Vocabulary& vocab,
                     TaskKind task, const LabelMap& labels, const InputSpec& spec) {
  auto require_text = [&](const std::string& name) {
    const auto& col = schema.column(name);
    if (col.arity != 1) throw SchemaError("column '" + name + "' has arity " + std::to_string(col.arity) + "; only 1 is supported");
  };
  require_text(spec.first_sequence);
  if (task == TaskKind::text_match) require_text(spec.second_sequence);
  const bool labeled = task != TaskKind::language_modeling && !spec.label_name.empty();
  if (labeled) require_text(spec.label_name);

  std::vector<TokenSequence> seqs;
  std::vector<int> class_labels;
  for (const auto& r : records) {
    seqs.push_back(encode_record(r, vocab, task, spec));
    if (labeled) class_labels.push_back(labels.id(r.text(spec.label_name)));
  }
  auto batch = pad_batch(seqs);
  batch.class_labels = std::move(class_labels);
  return batch;
}

// ---------------------------------------------------------------------------
// Triples
// ---------------------------------------------------------------------------

TripleStore::TripleStore(const std::vector<Triple>& triples) {
  std::set<Triple> seen;
  for (const auto& t : triples) {
    if (t.head.empty() || t.relation.empty() || t.tail.empty()) throw ParseError("triple with an empty field");
    if (!seen.insert(t).second) continue;
    if (!relation_ids_.count(t.relation)) {
      relation_ids_.emplace(t.relation, static_cast<int>(relation_names_.size()));
      relation_names_.push_back(t.relation);
    }
    by_head_[t.head].push_back(triples_.size());
    triples_.push_back(t);
  }
}

const std::vector<std::size_t>& TripleStore::by_head(const std::string& head) const {
  static const std::vector<std::size_t> none;
  auto it = by_head_.find(head);
  return it == by_head_.end() ? none : it->second;
}

int TripleStore::relation_id(const std::string& relation) const {
  auto it = relation_ids_.find(relation);
  if (it == relation_ids_.end()) throw IndexError("unknown relation '" + relation + "'");
  return it->second;
}

std::vector<std::string> TripleStore::heads() const {
  std::vector<std::string> out;
  for (const auto& [h, ids] : by_head_) out.push_back(h);
  return out;
}

TripleStore parse_triples(std::string_view contents, const std::string& origin) {
  std::vector<Triple> triples;
  std::size_t line_no = 0, start = 0;
  while (start < contents.size()) {
    auto end = contents.find('\n', start);
    if (end == std::string_view::npos) end = contents.size();
    const auto line = contents.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    Triple t;
    for (auto [key, field] : {std::pair{"head", &t.head}, std::pair{"relation", &t.relation}, std::pair{"tail", &t.tail}}) {
      if (!j.is_object() || !j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
        throw ParseError(where + ": missing or empty \"" + key + "\"");
      }
      *field = j[key].get<std::string>();
    }
    triples.push_back(std::move(t));
  }
  return TripleStore(triples);
}

TripleStore load_triples(const std::filesystem::path& path) {
  return parse_triples(read_whole_file(path), path.string());
}

std::string format_triples(const std::vector<Triple>& triples) {
  std::string out;
  for (const auto& t : triples) {
    nlohmann::json j = {{"head", t.head}, {"relation", t.relation}, {"tail", t.tail}};
    out += j.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Entity statistics
// ---------------------------------------------------------------------------

EntityStats entity_frequencies(const std::vector<TokenSequence>& corpus, const Vocabulary& vocab,
                               const std::vector<std::string>& entities) {
  EntityStats stats;
  for (const auto& name : entities) {
    std::vector<TokenId> pattern;
    bool known = true;
    for (const auto& w : split_words(name)) {
      const auto id = vocab.find(w);
      if (!id || *id < kNumSpecialTokens) {
        known = false;
        break;
      }
      pattern.push_back(*id);
    }
    std::size_t count = 0;
    if (known && !pattern.empty()) {
      for (const auto& seq : corpus) {
        std::size_t i = 0;
        while (i + pattern.size() <= seq.ids.size()) {
          if (std::equal(pattern.begin(), pattern.end(), seq.ids.begin() + static_cast<std::ptrdiff_t>(i))) {
            ++count;
            i += pattern.size();
          } else {
            ++i;
          }
        }
      }
    }
    stats.counts[name] = count;
  }
  return stats;
}

}  // namespace easynlp
