#include "easynlp/appzoo.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "easynlp/distill.hpp"
#include "easynlp/dkplm.hpp"
#include "easynlp/errors.hpp"
#include "easynlp/fewshot.hpp"
#include "easynlp/model.hpp"
#include "easynlp/rng.hpp"
#include "easynlp/train.hpp"

namespace easynlp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDefaultBackbone = "bert-small-uncased";
constexpr const char* kDefaultStudent = "bert-tiny-uncased";
constexpr std::uint64_t kEvalMaskSeed = 1000003;
constexpr double kEvalMaskProb = 0.15;
constexpr double kCentroidScale = 10.0;  // cosine -> logit for fewshot_cp probabilities

// Runs f; an easynlp error escaping it gets `where` as context unless a
// deeper call already set one.
template <typename F>
auto in_context(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (Error& e) {
    if (e.context().empty()) e.set_context(where);
    throw;
  }
}

template <typename E>
[[noreturn]] void raise(E e, const std::string& where) {
  e.set_context(where);
  throw e;
}

std::vector<std::string> split_list(const std::string& text, const std::string& flag) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = text.find(',', start);
    out.push_back(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (out.back().empty()) throw UsageError(flag + ": empty entry in '" + text + "'");
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flags
// ---------------------------------------------------------------------------

struct RawFlags {
  std::string mode;
  std::string worker_gpu;
  std::string tables;
  std::string label_values;
  std::string user_params;
};

void define_flags(CLI::App& app, CliConfig& c, RawFlags& raw) {
  app.add_option("--mode", raw.mode, "train, evaluate or predict")
      ->check(CLI::IsMember({"train", "evaluate", "predict"}));
  app.add_option("--worker_gpu", raw.worker_gpu, "accepted and ignored (CPU only)");
  app.add_option("--tables", raw.tables, "train,dev for training; one table otherwise");
  app.add_option("--input_schema", c.input_schema, "name:type:arity,...");
  app.add_option("--first_sequence", c.first_sequence, "text column");
  app.add_option("--second_sequence", c.second_sequence, "second text column (text_match)");
  app.add_option("--label_name", c.label_name, "label column");
  app.add_option("--label_enumerate_values", raw.label_values, "comma separated label values");
  app.add_option("--checkpoint_dir", c.checkpoint_dir, "checkpoint directory");
  app.add_option("--epoch_num", c.epoch_num, "training epochs");
  app.add_option("--sequence_length", c.sequence_length, "maximum tokens per example");
  app.add_option("--learning_rate", c.learning_rate, "Adam learning rate");
  app.add_option("--batch_size", c.batch_size, "examples per batch");
  app.add_option("--seed", c.seed, "random seed");
  app.add_option("--app_name", c.app_name, "application")->check([](const std::string& v) -> std::string {
    for (const auto& a : app_registry())
      if (a.name == v) return {};
    return "unknown app '" + v + "'";
  });
  app.add_option("--outputs", c.outputs, "predict: output table");
  app.add_option("--user_defined_parameters", raw.user_params, "space separated key=value pairs");
}

std::string help_text() {
  CliConfig c;
  RawFlags raw;
  CLI::App app("easynlp: train, evaluate and run text models", "easynlp");
  define_flags(app, c, raw);
  return app.help();
}

bool is_flag(const std::string& a) { return a.rfind("--", 0) == 0; }

std::optional<std::string> user_param(const CliConfig& c, const std::string& key) {
  const auto it = c.user_defined_parameters.find(key);
  if (it == c.user_defined_parameters.end()) return std::nullopt;
  return it->second;
}

std::string param_or(const CliConfig& c, const std::string& key, const std::string& fallback) {
  return user_param(c, key).value_or(fallback);
}

template <typename T>
T numeric_param(const CliConfig& c, const std::string& key, T fallback) {
  const auto v = user_param(c, key);
  if (!v) return fallback;
  T out{};
  const auto* end = v->data() + v->size();
  const auto [ptr, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw UsageError("--user_defined_parameters: " + key + "=" + *v + " is not a valid number");
  }
  return out;
}

bool bool_param(const CliConfig& c, const std::string& key, bool fallback) {
  const auto v = user_param(c, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw UsageError("--user_defined_parameters: " + key + "=" + *v + " must be true or false");
}

const std::set<std::string>& known_user_params() {
  static const std::set<std::string> keys = {
      "pretrain_model_name_or_path", "kb", "tail_quantile", "mask_prob", "lambda_rel", "verbalizer",
      "prompt_length", "freeze_backbone", "margin_pos", "margin_neg", "cp_cost", "teacher", "teacher_cache",
      "n_aug", "temperature", "alpha", "feature_beta", "domain_column", "target_domain"};
  return keys;
}

}  // namespace

std::map<std::string, std::string> parse_user_parameters(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string item;
  while (in >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError("--user_defined_parameters: expected key=value, got '" + item + "'");
    }
    const auto key = item.substr(0, eq);
    if (!out.emplace(key, item.substr(eq + 1)).second) {
      throw UsageError("--user_defined_parameters: '" + key + "' given twice");
    }
  }
  return out;
}

CliConfig parse_cli(const std::vector<std::string>& args) {
  // The user parameters are often written as `--user_defined_parameters=`
  // followed by the quoted pairs as the next word.
  std::vector<std::string> joined;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--user_defined_parameters=" && i + 1 < args.size() && !is_flag(args[i + 1])) {
      joined.push_back(args[i] + args[i + 1]);
      ++i;
    } else {
      joined.push_back(args[i]);
    }
  }

  CliConfig c;
  RawFlags raw;
  CLI::App app("easynlp", "easynlp");
  define_flags(app, c, raw);
  std::vector<std::string> reversed(joined.rbegin(), joined.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  if (raw.mode.empty()) throw UsageError("--mode is required");
  c.mode = raw.mode == "train" ? RunMode::train : raw.mode == "evaluate" ? RunMode::evaluate : RunMode::predict;

  if (app.count("--worker_gpu")) {
    c.worker_gpu = raw.worker_gpu;
    c.warnings.push_back("--worker_gpu=" + raw.worker_gpu + " ignored: running on CPU");
  }
  if (!raw.tables.empty()) c.tables = split_list(raw.tables, "--tables");
  if (!raw.label_values.empty()) {
    c.label_enumerate_values = split_list(raw.label_values, "--label_enumerate_values");
    std::set<std::string> seen;
    for (const auto& v : c.label_enumerate_values)
      if (!seen.insert(v).second) throw UsageError("--label_enumerate_values: '" + v + "' listed twice");
  }
  c.user_defined_parameters = parse_user_parameters(raw.user_params);
  for (const auto& [k, v] : c.user_defined_parameters)
    if (!known_user_params().count(k)) c.warnings.push_back("--user_defined_parameters: unknown key '" + k + "' ignored");

  const bool train = c.mode == RunMode::train;
  auto require = [](bool ok, const std::string& flag, const std::string& why) {
    if (!ok) throw UsageError(flag + " " + why);
  };
  require(!c.checkpoint_dir.empty(), "--checkpoint_dir", "is required");
  require(!c.input_schema.empty(), "--input_schema", "is required");
  if (train) {
    require(c.tables.size() == 2, "--tables", "needs train,dev for --mode=train");
    require(!c.app_name.empty(), "--app_name", "is required for --mode=train");
    require(!c.first_sequence.empty(), "--first_sequence", "is required for --mode=train");
    require(c.epoch_num > 0, "--epoch_num", "must be at least 1");
    const auto& app_info = find_app(c.app_name);
    if (app_info.labeled) {
      require(!c.label_name.empty(), "--label_name", "is required for " + c.app_name);
      require(c.label_enumerate_values.size() >= 2, "--label_enumerate_values", "needs at least two labels");
    }
    if (c.app_name == "text_match") require(!c.second_sequence.empty(), "--second_sequence", "is required for text_match");
  } else {
    require(c.tables.size() == 1, "--tables", "takes exactly one table for --mode=" + raw.mode);
  }
  if (c.mode == RunMode::predict) require(!c.outputs.empty(), "--outputs", "is required for --mode=predict");
  require(c.sequence_length >= 3, "--sequence_length", "must be at least 3");
  require(c.batch_size >= 1, "--batch_size", "must be at least 1");
  require(c.learning_rate > 0.0 && std::isfinite(c.learning_rate), "--learning_rate", "must be positive");
  if (c.batch_size != 8 && c.batch_size != 16 && c.batch_size != 32 && c.batch_size != 48) {
    c.warnings.push_back("--batch_size=" + std::to_string(c.batch_size) + " is outside the usual {8,16,32,48}");
  }
  return c;
}

CliConfig parse_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return parse_cli(args);
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

const std::vector<AppInfo>& app_registry() {
  static const std::vector<AppInfo> apps = {
      {"text_classify", AppKind::classify, true, "sentence classification with cross-entropy"},
      {"text_match", AppKind::classify, true, "sentence-pair classification"},
      {"language_modeling", AppKind::language_model, false, "masked language model pre-training"},
      {"dkplm_pretrain", AppKind::language_model, false, "knowledge-injected pre-training (kb=<triples.jsonl>)"},
      {"fewshot_pet", AppKind::prompt, true, "cloze template + verbalizer"},
      {"fewshot_ptuning", AppKind::prompt, true, "continuous prompt + verbalizer"},
      {"fewshot_cp", AppKind::contrastive_prompt, true, "contrastive prompt tuning, no verbalizer"},
      {"distill_kd", AppKind::distill, true, "distil a teacher checkpoint into a smaller student"},
      {"distill_metakd", AppKind::distill, true, "meta-teacher distillation with domain expertise"},
  };
  return apps;
}

const AppInfo& find_app(const std::string& name) {
  for (const auto& a : app_registry())
    if (a.name == name) return a;
  std::string known;
  for (const auto& a : app_registry()) known += (known.empty() ? "" : ", ") + a.name;
  throw UsageError("--app_name: unknown app '" + name + "' (available: " + known + ")");
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

json TrainReport::to_json() const {
  json epochs_json = json::array();
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    epochs_json.push_back({{"epoch", i + 1}, {"train_loss", epochs[i].train_loss}, {"dev_accuracy", epochs[i].dev_accuracy}});
  }
  const auto& app = find_app(app_name);
  return {{"app_name", app_name},
          {"metric", app.labeled ? "accuracy" : "masked_token_accuracy"},
          {"train_examples", train_examples},
          {"dev_examples", dev_examples},
          {"epochs", epochs_json},
          {"best_epoch", best_epoch},
          {"best_dev_accuracy", best_dev_accuracy}};
}

json EvalReport::to_json() const {
  json j = {{"app_name", app_name}, {"metric", metric}, {"accuracy", accuracy}, {"examples", examples}};
  if (macro_f1) j["macro_f1"] = *macro_f1;
  return j;
}

DatasetSchema predict_output_schema(const DatasetSchema& input, const std::vector<std::string>& labels) {
  DatasetSchema out = input;
  out.columns.push_back({"prediction", ColumnKind::str, 1});
  for (const auto& l : labels) out.columns.push_back({"prob_" + l, ColumnKind::real, 1});
  return out;
}

// ---------------------------------------------------------------------------
// Application state
// ---------------------------------------------------------------------------

namespace {

struct AppState {
  std::string app_name;
  TransformerModel model;
  Vocabulary vocab;
  LabelMap labels;
  std::string first_sequence;
  std::string second_sequence;
  std::size_t sequence_length = 128;
  std::string template_text;
  std::vector<std::string> verbalizer;
  std::optional<ContinuousPrompt> prompt;
  std::optional<ClassCentroids> centroids;

  AppState snapshot() const {
    AppState s = *this;
    s.model = model.clone();
    if (prompt) s.prompt = ContinuousPrompt{prompt->embeddings.clone()};
    return s;
  }
  const ContinuousPrompt* prompt_ptr() const { return prompt ? &*prompt : nullptr; }
  const AppInfo& app() const { return find_app(app_name); }
};

std::vector<std::vector<double>> matrix_rows(const Tensor& t) {
  std::vector<std::vector<double>> rows(t.dim(0));
  const std::size_t c = t.dim(1);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].assign(t.data().begin() + i * c, t.data().begin() + (i + 1) * c);
  return rows;
}

// label_map.json: the labels plus whatever else predicting needs.
json state_json(const AppState& s) {
  json j = {{"labels", s.labels.labels()},
            {"app_name", s.app_name},
            {"first_sequence", s.first_sequence},
            {"second_sequence", s.second_sequence},
            {"sequence_length", s.sequence_length}};
  if (!s.template_text.empty()) j["template"] = s.template_text;
  if (!s.verbalizer.empty()) j["verbalizer"] = s.verbalizer;
  if (s.prompt) j["prompt_embeddings"] = matrix_rows(s.prompt->embeddings);
  if (s.centroids) j["centroids"] = s.centroids->vectors;
  return j;
}

AppState load_state(const fs::path& dir) {
  AppState s;
  s.model = load_checkpoint(dir);
  s.vocab = Vocabulary::load(dir / "vocab.txt");
  json j;
  try {
    j = json::parse(read_file(dir / "label_map.json"));
    s.labels = LabelMap(j.at("labels").get<std::vector<std::string>>());
    s.app_name = j.at("app_name").get<std::string>();
    s.first_sequence = j.at("first_sequence").get<std::string>();
    s.second_sequence = j.at("second_sequence").get<std::string>();
    s.sequence_length = j.at("sequence_length").get<std::size_t>();
    if (j.contains("template")) s.template_text = j["template"].get<std::string>();
    if (j.contains("verbalizer")) s.verbalizer = j["verbalizer"].get<std::vector<std::string>>();
    if (j.contains("prompt_embeddings")) {
      const auto rows = j["prompt_embeddings"].get<std::vector<std::vector<double>>>();
      if (rows.empty() || rows[0].size() != s.model.config().hidden_dim) throw FormatError("prompt width mismatch");
      std::vector<double> flat;
      for (const auto& r : rows) {
        if (r.size() != rows[0].size()) throw FormatError("ragged prompt_embeddings");
        flat.insert(flat.end(), r.begin(), r.end());
      }
      s.prompt = ContinuousPrompt{Tensor::from_data({rows.size(), rows[0].size()}, std::move(flat))};
    }
    if (j.contains("centroids")) s.centroids = ClassCentroids{j["centroids"].get<std::vector<std::vector<double>>>()};
  } catch (const json::exception& e) {
    throw FormatError((dir / "label_map.json").string() + ": " + e.what());
  }
  find_app(s.app_name);
  return s;
}

void write_checkpoint_dir(const AppState& s, const TrainReport& report, const fs::path& dir) {
  fs::path staging = dir;
  staging += ".partial";
  fs::path old = dir;
  old += ".old";
  try {
    fs::remove_all(staging);
    fs::create_directories(staging);
    save_checkpoint(s.model, staging);
    s.vocab.save(staging / "vocab.txt");
    write_file_atomic(staging / "label_map.json", state_json(s).dump(2) + "\n");
    write_file_atomic(staging / "eval_report.json", report.to_json().dump(2) + "\n");
    if (fs::exists(dir)) {
      fs::remove_all(old);
      fs::rename(dir, old);
      fs::rename(staging, dir);
      fs::remove_all(old);
    } else {
      fs::rename(staging, dir);
    }
  } catch (const fs::filesystem_error& e) {
    throw FormatError(std::string("cannot write checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Backbones
// ---------------------------------------------------------------------------

struct Backbone {
  TransformerModel model;
  Vocabulary vocab;
};

/// `spec` names a preset (fresh weights) or a checkpoint directory (warm
/// start). Heads whose size changes are re-initialised.
Backbone make_backbone(const std::string& spec, const std::vector<std::string>& vocab_texts,
                       const Vocabulary* fixed_vocab, std::size_t num_classes, std::size_t num_relations,
                       std::size_t seq_len, std::uint64_t seed) {
  return in_context("pretrain_model_name_or_path=" + spec, [&] {
    const auto presets = preset_names();
    const std::size_t K = num_classes > 0 ? num_classes : 2;
    const std::size_t R = num_relations > 0 ? num_relations : 1;
    if (std::find(presets.begin(), presets.end(), spec) != presets.end()) {
      Backbone b;
      b.vocab = fixed_vocab ? *fixed_vocab : build_vocab(vocab_texts, 1);
      auto cfg = preset_config(spec);
      cfg.vocab_size = b.vocab.size();
      cfg.num_classes = K;
      cfg.num_relations = R;
      cfg.max_position = std::max(cfg.max_position, seq_len);
      b.model = init_model(cfg, seed);
      return b;
    }
    if (!fs::exists(fs::path(spec) / "model.bin")) {
      throw ConfigError("'" + spec + "' is neither a model preset nor a checkpoint directory");
    }
    Backbone b;
    auto loaded = load_checkpoint(spec);
    b.vocab = Vocabulary::load(fs::path(spec) / "vocab.txt");
    if (fixed_vocab && !(*fixed_vocab == b.vocab)) throw ValidationError("vocabulary differs from the teacher's");
    auto cfg = loaded.config();
    if (seq_len > cfg.max_position) {
      throw ConfigError("--sequence_length=" + std::to_string(seq_len) + " exceeds the checkpoint's max_position " +
                        std::to_string(cfg.max_position));
    }
    if ((num_classes == 0 || cfg.num_classes == K) && (num_relations == 0 || cfg.num_relations == R)) {
      b.model = std::move(loaded);
      return b;
    }
    if (num_classes > 0) cfg.num_classes = K;
    if (num_relations > 0) cfg.num_relations = R;
    const auto fresh = init_model(cfg, seed);
    std::map<std::string, Tensor> params;
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
      const auto& old = loaded.param(name);
      params[name] = old.shape() == shape ? old.clone() : fresh.param(name).clone();
    }
    b.model = TransformerModel(cfg, std::move(params));
    return b;
  });
}

// ---------------------------------------------------------------------------
// Encoding and scoring
// ---------------------------------------------------------------------------

void require_text_column(const DatasetSchema& schema, const std::string& name, const std::string& flag) {
  in_context(flag, [&] {
    const auto& col = schema.column(name);
    if (col.arity != 1) throw SchemaError("column '" + name + "' must have arity 1");
  });
}

std::vector<std::string> column_texts(const std::vector<Record>& records, const std::string& column) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.text(column));
  return out;
}

std::vector<TokenSequence> encode_plain(const AppState& s, const std::vector<Record>& records) {
  const InputSpec spec{s.first_sequence, s.second_sequence, "", s.sequence_length};
  const auto task = s.second_sequence.empty() ? TaskKind::text_classify : TaskKind::text_match;
  std::vector<TokenSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_record(r, s.vocab, task, spec));
  return out;
}

std::vector<PromptedSequence> encode_prompted(const AppState& s, const std::vector<Record>& records) {
  const auto tpl = PromptTemplate::parse(s.template_text);
  std::vector<PromptedSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    std::vector<std::string> inputs{r.text(s.first_sequence)};
    if (!s.second_sequence.empty()) inputs.push_back(r.text(s.second_sequence));
    out.push_back(apply_template(tpl, inputs, s.vocab, s.sequence_length));
  }
  return out;
}

std::vector<int> gold_labels(const LabelMap& labels, const std::vector<Record>& records, const std::string& column) {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(labels.id(r.text(column)));
  return out;
}

Tensor stack_rows(std::vector<double> data, std::size_t rows) {
  const std::size_t cols = rows == 0 ? 0 : data.size() / rows;
  return Tensor::from_data({rows, cols}, std::move(data));
}

// Mask-position hidden states for every sequence, eval mode.
Tensor all_mask_hiddens(const AppState& s, const std::vector<PromptedSequence>& seqs) {
  std::vector<double> out;
  for (const auto& idx : sequential_batches(seqs.size(), 64)) {
    const auto pb = make_prompt_batch(select(seqs, idx));
    const Tensor h = mask_hiddens(s.model, pb, s.prompt_ptr());
    out.insert(out.end(), h.data().begin(), h.data().end());
  }
  return stack_rows(std::move(out), seqs.size());
}

Tensor centroid_scores(const ClassCentroids& c, const Tensor& hiddens) {
  std::vector<double> flat;
  for (const auto& v : c.vectors) flat.insert(flat.end(), v.begin(), v.end());
  const Tensor C = Tensor::from_data({c.vectors.size(), hiddens.dim(1)}, std::move(flat));
  return scale(matmul(normalize_rows(hiddens), transpose(C)), kCentroidScale);
}

// Class logits [n×K] for the records under the app's prediction rule.
Tensor class_scores(const AppState& s, const std::vector<Record>& records) {
  switch (s.app().kind) {
    case AppKind::classify:
    case AppKind::distill: {
      LabeledSequences data;
      data.seqs = encode_plain(s, records);
      data.labels.assign(data.seqs.size(), 0);
      return classify_all(s.model, data).first;
    }
    case AppKind::prompt: {
      const Verbalizer verb(s.verbalizer, s.vocab);
      const auto seqs = encode_prompted(s, records);
      std::vector<double> out;
      for (const auto& idx : sequential_batches(seqs.size(), 64)) {
        const auto pb = make_prompt_batch(select(seqs, idx));
        const Tensor logits = pet_class_logits(s.model, mask_hiddens(s.model, pb, s.prompt_ptr()), verb);
        out.insert(out.end(), logits.data().begin(), logits.data().end());
      }
      return stack_rows(std::move(out), seqs.size());
    }
    case AppKind::contrastive_prompt:
      if (!s.centroids) throw StateError("fewshot_cp state has no class centroids");
      return centroid_scores(*s.centroids, all_mask_hiddens(s, encode_prompted(s, records)));
    case AppKind::language_model:
      break;
  }
  throw UsageError("--app_name: " + s.app_name + " is a language model and has no classes");
}

double masked_token_accuracy(const TransformerModel& model, const std::vector<TokenSequence>& seqs) {
  std::size_t correct = 0, total = 0;
  const std::size_t V = model.config().vocab_size;
  for (const auto& idx : sequential_batches(seqs.size(), 64)) {
    std::vector<std::vector<TokenId>> ids;
    std::vector<std::vector<int>> labels;
    for (auto i : idx) {
      auto m = apply_mlm_masking(seqs[i], V, kEvalMaskProb, kEvalMaskSeed + i);
      ids.push_back(std::move(m.ids));
      labels.push_back(std::move(m.labels));
    }
    const Batch b = pad_batch(ids);
    std::vector<std::size_t> positions;
    std::vector<int> gold;
    for (std::size_t r = 0; r < labels.size(); ++r)
      for (std::size_t p = 0; p < labels[r].size(); ++p)
        if (labels[r][p] != kIgnoreLabel) {
          positions.push_back(r * b.seq_len + p);
          gold.push_back(labels[r][p]);
        }
    if (positions.empty()) continue;
    const auto pred = argmax_rows(mlm_logits_at(model, encode_sequence(model, b, false), positions));
    for (std::size_t k = 0; k < pred.size(); ++k) correct += pred[k] == gold[k] ? 1 : 0;
    total += pred.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct Tracker {
  TrainReport report;
  std::optional<AppState> best;
  std::ostream* log = nullptr;
  std::size_t total_epochs = 0;

  void record(std::size_t epoch, double loss, double dev_accuracy, const AppState& s) {
    report.epochs.push_back({loss, dev_accuracy});
    *log << "epoch " << epoch + 1 << "/" << total_epochs << "  train_loss " << std::fixed << std::setprecision(6)
         << loss << "  dev_accuracy " << dev_accuracy << std::defaultfloat << "\n";
    if (!best || dev_accuracy > report.best_dev_accuracy) {
      best = s.snapshot();
      report.best_epoch = epoch + 1;
      report.best_dev_accuracy = dev_accuracy;
    }
  }
};

struct TrainInputs {
  const CliConfig& cfg;
  const DatasetSchema& schema;
  std::vector<Record> train;
  std::vector<Record> dev;
};

std::vector<std::string> text_values(const AppState& s, const std::vector<Record>& records) {
  auto out = column_texts(records, s.first_sequence);
  if (!s.second_sequence.empty()) {
    auto more = column_texts(records, s.second_sequence);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

LabeledSequences labeled_data(const AppState& s, const std::vector<Record>& records, const std::string& label_name) {
  LabeledSequences d;
  d.seqs = encode_plain(s, records);
  d.labels = in_context("--label_name", [&] { return gold_labels(s.labels, records, label_name); });
  return d;
}

ClassifierTrainOptions train_options(const CliConfig& cfg) {
  ClassifierTrainOptions o;
  o.epochs = cfg.epoch_num;
  o.batch_size = cfg.batch_size;
  o.learning_rate = cfg.learning_rate;
  o.seed = cfg.seed;
  return o;
}

std::vector<double> meta_instance_weights(const TransformerModel& model, const LabeledSequences& data,
                                          const std::vector<Record>& records, const std::string& domain_column,
                                          std::ostream& log) {
  return in_context("domain_column=" + domain_column, [&] {
    std::map<std::string, std::size_t> ids;
    std::vector<std::size_t> domains;
    for (const auto& r : records) domains.push_back(ids.emplace(r.text(domain_column), ids.size()).first->second);
    const auto features = matrix_rows(classify_all(model, data).second);
    const auto protos = compute_class_prototypes(features, domains, data.labels);
    std::vector<double> w;
    for (std::size_t i = 0; i < features.size(); ++i)
      w.push_back(instance_transfer_weight(features[i], domains[i], data.labels[i], protos));
    log << "meta-teacher: " << ids.size() << " domains, instance weights in ["
        << *std::min_element(w.begin(), w.end()) << ", " << *std::max_element(w.begin(), w.end()) << "]\n";
    return w;
  });
}

void train_classify(const TrainInputs& in, AppState& s, Tracker& tracker) {
  const auto& cfg = in.cfg;
  auto bb = make_backbone(param_or(cfg, "pretrain_model_name_or_path", kDefaultBackbone), text_values(s, in.train),
                          nullptr, s.labels.size(), 0, s.sequence_length, cfg.seed);
  s.model = std::move(bb.model);
  s.vocab = std::move(bb.vocab);
  const auto train = labeled_data(s, in.train, cfg.label_name);
  const auto dev = labeled_data(s, in.dev, cfg.label_name);
  auto o = train_options(cfg);
  o.on_epoch = [&](std::size_t e, double loss) {
    tracker.record(e, loss, accuracy(predict_classes(s.model, dev), dev.labels), s);
  };
  if (const auto dc = user_param(cfg, "domain_column")) {
    require_text_column(in.schema, *dc, "domain_column=" + *dc);
    const auto w = meta_instance_weights(s.model, train, in.train, *dc, *tracker.log);
    train_meta_teacher(s.model, train, w, o);
  } else {
    train_classifier(s.model, train, o);
  }
}

void train_language_model(const TrainInputs& in, AppState& s, Tracker& tracker, bool inject) {
  const auto& cfg = in.cfg;
  const auto sentences = column_texts(in.train, s.first_sequence);
  auto texts = sentences;
  TripleStore kb;
  if (inject) {
    const auto path = user_param(cfg, "kb");
    if (!path) throw UsageError("--user_defined_parameters: dkplm_pretrain needs kb=<triples.jsonl>");
    kb = in_context("kb=" + *path, [&] { return load_triples(*path); });
    if (kb.triples().empty()) throw DomainError("kb=" + *path + " holds no triples");
    for (const auto& t : kb.triples()) {
      auto rel = t.relation;
      std::replace(rel.begin(), rel.end(), '_', ' ');
      texts.push_back(t.head + " " + rel + " " + t.tail);
    }
  }
  auto bb = make_backbone(param_or(cfg, "pretrain_model_name_or_path", kDefaultBackbone), texts, nullptr, 0,
                          kb.relation_count(), s.sequence_length, cfg.seed);
  s.model = std::move(bb.model);
  s.vocab = std::move(bb.vocab);

  DkplmCorpus corpus;
  if (inject) {
    LongTailPolicy policy;
    policy.tail_quantile = numeric_param(cfg, "tail_quantile", policy.tail_quantile);
    corpus = in_context("tail_quantile", [&] {
      return prepare_dkplm_corpus(s.vocab, sentences, kb, policy, s.sequence_length);
    });
    *tracker.log << "knowledge injection: " << corpus.longtail.size() << " long-tail entities of "
                 << kb.heads().size() << "\n";
  } else {
    for (const auto& text : sentences) corpus.seqs.push_back(encode(s.vocab, text, s.sequence_length));
  }
  std::vector<TokenSequence> dev;
  for (const auto& text : column_texts(in.dev, s.first_sequence)) dev.push_back(encode(s.vocab, text, s.sequence_length));

  DkplmOptions o;
  o.epochs = cfg.epoch_num;
  o.batch_size = cfg.batch_size;
  o.learning_rate = cfg.learning_rate;
  o.mask_prob = numeric_param(cfg, "mask_prob", o.mask_prob);
  o.lambda_rel = numeric_param(cfg, "lambda_rel", o.lambda_rel);
  o.inject = inject;
  o.seed = cfg.seed;
  if (!(o.mask_prob > 0.0 && o.mask_prob <= 1.0)) throw UsageError("--user_defined_parameters: mask_prob must be in (0, 1]");
  o.on_epoch = [&](std::size_t e, double loss) { tracker.record(e, loss, masked_token_accuracy(s.model, dev), s); };
  train_dkplm(s.model, corpus, s.vocab, o);
}

std::string default_template(const std::string& app, bool pair, std::size_t prompt_length) {
  const std::string p = "{p*" + std::to_string(prompt_length) + "}";
  if (app == "fewshot_pet") return pair ? "{input} ? {mask} , {input2}" : "{input} . it was {mask} .";
  if (app == "fewshot_ptuning") return pair ? "{input} " + p + " {mask} {input2}" : "{input} " + p + " {mask} .";
  return pair ? "{input} " + p + " {mask} {input2}" : "{input} " + p + " {mask}";
}

void train_prompt(const TrainInputs& in, AppState& s, Tracker& tracker) {
  const auto& cfg = in.cfg;
  const bool contrastive = s.app().kind == AppKind::contrastive_prompt;
  const auto k = numeric_param<std::size_t>(cfg, "prompt_length", 4);
  s.template_text = default_template(s.app_name, !s.second_sequence.empty(), k);
  if (!contrastive) {
    const auto v = user_param(cfg, "verbalizer");
    if (!v) throw UsageError("--user_defined_parameters: " + s.app_name + " needs verbalizer=<word per label>");
    s.verbalizer = split_list(*v, "verbalizer");
    if (s.verbalizer.size() != s.labels.size()) {
      throw UsageError("--user_defined_parameters: verbalizer has " + std::to_string(s.verbalizer.size()) +
                       " words for " + std::to_string(s.labels.size()) + " labels");
    }
  }
  auto texts = text_values(s, in.train);
  texts.push_back(s.template_text);
  for (const auto& w : s.verbalizer) texts.push_back(w);
  auto bb = make_backbone(param_or(cfg, "pretrain_model_name_or_path", kDefaultBackbone), texts, nullptr,
                          s.labels.size(), 0, s.sequence_length, cfg.seed);
  s.model = std::move(bb.model);
  s.vocab = std::move(bb.vocab);

  const auto tpl = PromptTemplate::parse(s.template_text);
  std::optional<Verbalizer> verb;
  if (!contrastive) verb = in_context("verbalizer", [&] { return Verbalizer(s.verbalizer, s.vocab); });
  Rng rng(cfg.seed);
  Rng dropout_rng = rng.fork(1);
  if (tpl.prompt_length() > 0) {
    Rng prompt_rng = rng.fork(2);
    s.prompt = ContinuousPrompt::random(tpl.prompt_length(), s.model.config().hidden_dim, prompt_rng);
  }
  const auto train = in_context("--first_sequence", [&] { return encode_prompted(s, in.train); });
  const auto train_labels = in_context("--label_name", [&] { return gold_labels(s.labels, in.train, cfg.label_name); });
  const auto dev_labels = in_context("--label_name", [&] { return gold_labels(s.labels, in.dev, cfg.label_name); });
  CpTuningOptions cp;
  cp.margin_pos = numeric_param(cfg, "margin_pos", cp.margin_pos);
  cp.margin_neg = numeric_param(cfg, "margin_neg", cp.margin_neg);
  cp.cost = numeric_param(cfg, "cp_cost", cp.cost);

  const auto params = fewshot_parameters(s.model, s.prompt_ptr(), bool_param(cfg, "freeze_backbone", false));
  AdamState adam;
  adam.lr = cfg.learning_rate;
  for (std::size_t epoch = 0; epoch < cfg.epoch_num; ++epoch) {
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto& idx : minibatches(train.size(), cfg.batch_size, rng)) {
      if (contrastive && idx.size() < 2) continue;  // the pairwise loss needs two rows
      const auto pb = make_prompt_batch(select(train, idx), select(train_labels, idx));
      total += train_step(params, adam, [&] {
        if (!contrastive) return pet_loss(s.model, pb, *verb, s.prompt_ptr(), true, &dropout_rng);
        return cp_tuning_loss(mask_hiddens(s.model, pb, s.prompt_ptr(), true, &dropout_rng), pb.labels, cp);
      });
      ++steps;
    }
    if (contrastive) s.centroids = cp_fit_centroids(all_mask_hiddens(s, train), train_labels, s.labels.size());
    const double acc = accuracy(argmax_rows(class_scores(s, in.dev)), dev_labels);
    tracker.record(epoch, steps == 0 ? 0.0 : total / static_cast<double>(steps), acc, s);
  }
}

void train_distill(const TrainInputs& in, AppState& s, Tracker& tracker) {
  const auto& cfg = in.cfg;
  const bool meta = s.app_name == "distill_metakd";
  const auto teacher_dir = user_param(cfg, "teacher");
  if (!teacher_dir) throw UsageError("--user_defined_parameters: " + s.app_name + " needs teacher=<checkpoint dir>");
  const auto teacher = in_context("teacher=" + *teacher_dir, [&] { return load_checkpoint(*teacher_dir); });
  const auto teacher_vocab = in_context("teacher=" + *teacher_dir, [&] {
    return Vocabulary::load(fs::path(*teacher_dir) / "vocab.txt");
  });
  if (teacher.config().num_classes != s.labels.size()) {
    raise(ValidationError("teacher has " + std::to_string(teacher.config().num_classes) + " classes, " +
                          "--label_enumerate_values lists " + std::to_string(s.labels.size())),
          "teacher=" + *teacher_dir);
  }

  auto train_records = in.train;
  auto dev_records = in.dev;
  if (meta) {
    const auto dc = param_or(cfg, "domain_column", "domain");
    require_text_column(in.schema, dc, "domain_column=" + dc);
    if (const auto target = user_param(cfg, "target_domain")) {
      auto keep = [&](std::vector<Record>& rs) {
        std::erase_if(rs, [&](const Record& r) { return r.text(dc) != *target; });
      };
      keep(train_records);
      keep(dev_records);
      if (train_records.empty() || dev_records.empty()) {
        throw DomainError("target_domain=" + *target + " selects no training or no dev rows");
      }
      tracker.report.train_examples = train_records.size();
      tracker.report.dev_examples = dev_records.size();
      *tracker.log << "target_domain=" << *target << ": " << train_records.size() << " training rows, "
                   << dev_records.size() << " dev rows\n";
    }
  }

  auto bb = make_backbone(param_or(cfg, "pretrain_model_name_or_path", kDefaultStudent), {}, &teacher_vocab,
                          s.labels.size(), 0, s.sequence_length, cfg.seed);
  s.model = std::move(bb.model);
  s.vocab = std::move(bb.vocab);
  *tracker.log << "teacher " << teacher.parameter_count() << " parameters, student " << s.model.parameter_count()
               << "\n";

  std::vector<std::string> text_columns{s.first_sequence};
  if (!s.second_sequence.empty()) text_columns.push_back(s.second_sequence);
  const auto n_aug = numeric_param<std::size_t>(cfg, "n_aug", 0);
  const auto augmented = augment_records(train_records, text_columns, s.vocab, n_aug, cfg.seed);
  const auto train = labeled_data(s, augmented, cfg.label_name);
  const auto dev = labeled_data(s, dev_records, cfg.label_name);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < train.size(); ++i) ids.push_back("row" + std::to_string(i));

  TeacherCache cache;
  const auto cache_path = user_param(cfg, "teacher_cache");
  if (cache_path && fs::exists(*cache_path)) {
    cache = in_context("teacher_cache=" + *cache_path, [&] {
      auto c = TeacherCache::load(*cache_path, model_fingerprint(teacher));
      for (const auto& id : ids)
        if (!c.contains(id)) throw CacheError("no entry for " + id + "; delete the file to rebuild it");
      return c;
    });
  } else {
    cache = extract_teacher_logits(teacher, train, ids);
    if (cache_path) {
      // reload so this run sees the stored f32 values, like later runs will
      in_context("teacher_cache=" + *cache_path, [&] {
        cache.save(*cache_path);
        cache = TeacherCache::load(*cache_path, cache.teacher_hash());
      });
    }
  }

  DistillOptions o;
  o.train = train_options(cfg);
  o.kd.temperature = numeric_param(cfg, "temperature", o.kd.temperature);
  o.kd.alpha = numeric_param(cfg, "alpha", o.kd.alpha);
  o.kd.feature_beta = numeric_param(cfg, "feature_beta", o.kd.feature_beta);
  in_context("--user_defined_parameters", [&] { o.kd.validate(); });
  Tensor proj;
  if (meta) {
    o.meta = true;
    o.expertise = domain_expertise(teacher, labeled_data(s, train_records, cfg.label_name));
    proj = init_projection(s.model.config().hidden_dim, teacher.config().hidden_dim, cfg.seed);
    *tracker.log << "teacher domain expertise " << o.expertise << "\n";
  }
  o.train.on_epoch = [&](std::size_t e, double loss) {
    tracker.record(e, loss, accuracy(predict_classes(s.model, dev), dev.labels), s);
  };
  distill_student(s.model, meta ? &proj : nullptr, train, ids, cache, o);
}

std::vector<Record> read_input_table(const std::string& path, const DatasetSchema& schema) {
  return in_context("--tables=" + path, [&] { return read_table(path, schema); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

TrainReport run_train(const CliConfig& cfg, std::ostream& log) {
  if (cfg.mode != RunMode::train) throw UsageError("--mode must be train");
  if (cfg.epoch_num == 0) throw UsageError("--epoch_num must be at least 1");
  if (cfg.tables.size() != 2) throw UsageError("--tables needs train,dev for --mode=train");
  if (cfg.checkpoint_dir.empty()) throw UsageError("--checkpoint_dir is required");
  const auto& app = find_app(cfg.app_name);
  const auto start = std::chrono::steady_clock::now();

  const auto schema = in_context("--input_schema", [&] { return parse_input_schema(cfg.input_schema); });
  TrainInputs in{cfg, schema, read_input_table(cfg.tables[0], schema), read_input_table(cfg.tables[1], schema)};
  if (in.train.empty()) raise(DomainError("training table is empty"), "--tables=" + cfg.tables[0]);
  if (in.dev.empty()) raise(DomainError("dev table is empty"), "--tables=" + cfg.tables[1]);

  AppState s;
  s.app_name = app.name;
  s.first_sequence = cfg.first_sequence;
  s.second_sequence = cfg.second_sequence;
  s.sequence_length = cfg.sequence_length;
  require_text_column(schema, cfg.first_sequence, "--first_sequence");
  if (!cfg.second_sequence.empty()) require_text_column(schema, cfg.second_sequence, "--second_sequence");
  if (app.labeled) {
    if (cfg.label_name.empty()) throw UsageError("--label_name is required for " + app.name);
    require_text_column(schema, cfg.label_name, "--label_name");
    s.labels = in_context("--label_enumerate_values", [&] { return LabelMap(cfg.label_enumerate_values); });
    if (s.labels.size() < 2) throw UsageError("--label_enumerate_values needs at least two labels");
  }

  Tracker tracker;
  tracker.log = &log;
  tracker.total_epochs = cfg.epoch_num;
  tracker.report.train_examples = in.train.size();
  tracker.report.dev_examples = in.dev.size();
  log << app.name << ": " << in.train.size() << " training rows, " << in.dev.size() << " dev rows\n";
  switch (app.kind) {
    case AppKind::classify:
      train_classify(in, s, tracker);
      break;
    case AppKind::language_model:
      train_language_model(in, s, tracker, app.name == "dkplm_pretrain");
      break;
    case AppKind::prompt:
    case AppKind::contrastive_prompt:
      train_prompt(in, s, tracker);
      break;
    case AppKind::distill:
      train_distill(in, s, tracker);
      break;
  }
  if (!tracker.best) throw StateError("training produced no epochs");

  auto& report = tracker.report;
  report.app_name = app.name;
  report.checkpoint = cfg.checkpoint_dir;
  in_context("--checkpoint_dir=" + cfg.checkpoint_dir, [&] { write_checkpoint_dir(*tracker.best, report, cfg.checkpoint_dir); });
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

EvalReport run_evaluate(const CliConfig& cfg, std::ostream& log) {
  if (cfg.tables.size() != 1) throw UsageError("--tables takes exactly one table for --mode=evaluate");
  auto s = in_context("--checkpoint_dir=" + cfg.checkpoint_dir, [&] { return load_state(cfg.checkpoint_dir); });
  if (!cfg.app_name.empty() && cfg.app_name != s.app_name) {
    throw UsageError("--app_name=" + cfg.app_name + " but the checkpoint was trained with " + s.app_name);
  }
  if (!cfg.first_sequence.empty()) s.first_sequence = cfg.first_sequence;
  if (!cfg.second_sequence.empty()) s.second_sequence = cfg.second_sequence;
  const auto schema = in_context("--input_schema", [&] { return parse_input_schema(cfg.input_schema); });
  require_text_column(schema, s.first_sequence, "--first_sequence");
  if (!s.second_sequence.empty()) require_text_column(schema, s.second_sequence, "--second_sequence");
  const auto records = read_input_table(cfg.tables[0], schema);
  if (records.empty()) raise(DomainError("table is empty"), "--tables=" + cfg.tables[0]);

  EvalReport r;
  r.app_name = s.app_name;
  r.examples = records.size();
  if (s.app().labeled) {
    if (cfg.label_name.empty()) throw UsageError("--label_name is required to evaluate " + s.app_name);
    require_text_column(schema, cfg.label_name, "--label_name");
    const auto gold = in_context("--label_name", [&] { return gold_labels(s.labels, records, cfg.label_name); });
    const auto pred = argmax_rows(class_scores(s, records));
    r.metric = "accuracy";
    r.accuracy = accuracy(pred, gold);
    r.macro_f1 = macro_f1(pred, gold, s.labels.size());
  } else {
    std::vector<TokenSequence> seqs;
    for (const auto& text : column_texts(records, s.first_sequence)) seqs.push_back(encode(s.vocab, text, s.sequence_length));
    r.metric = "masked_token_accuracy";
    r.accuracy = masked_token_accuracy(s.model, seqs);
  }
  const fs::path out = cfg.outputs.empty() ? fs::path(cfg.checkpoint_dir) / "eval_results.json" : fs::path(cfg.outputs);
  in_context("--outputs", [&] { write_file_atomic(out, r.to_json().dump(2) + "\n"); });
  log << r.metric << ": " << std::fixed << std::setprecision(6) << r.accuracy;
  if (r.macro_f1) log << "  macro_f1: " << *r.macro_f1;
  log << std::defaultfloat << "  (" << r.examples << " rows)\n";
  return r;
}

fs::path run_predict(const CliConfig& cfg, std::ostream& log) {
  if (cfg.tables.size() != 1) throw UsageError("--tables takes exactly one table for --mode=predict");
  if (cfg.outputs.empty()) throw UsageError("--outputs is required for --mode=predict");
  auto s = in_context("--checkpoint_dir=" + cfg.checkpoint_dir, [&] { return load_state(cfg.checkpoint_dir); });
  if (!cfg.app_name.empty() && cfg.app_name != s.app_name) {
    throw UsageError("--app_name=" + cfg.app_name + " but the checkpoint was trained with " + s.app_name);
  }
  if (!s.app().labeled) throw UsageError("--mode=predict needs a classification checkpoint, not " + s.app_name);
  if (!cfg.first_sequence.empty()) s.first_sequence = cfg.first_sequence;
  if (!cfg.second_sequence.empty()) s.second_sequence = cfg.second_sequence;
  const auto schema = in_context("--input_schema", [&] { return parse_input_schema(cfg.input_schema); });
  require_text_column(schema, s.first_sequence, "--first_sequence");
  if (!s.second_sequence.empty()) require_text_column(schema, s.second_sequence, "--second_sequence");
  const auto records = read_input_table(cfg.tables[0], schema);
  if (records.empty()) raise(DomainError("table is empty"), "--tables=" + cfg.tables[0]);

  const Tensor probs = softmax(class_scores(s, records), 1);
  const std::size_t K = s.labels.size();
  const auto pred = argmax_rows(probs);
  std::vector<Record> out;
  out.reserve(records.size());
  char buf[32];
  for (std::size_t i = 0; i < records.size(); ++i) {
    Record r = records[i];
    r.values["prediction"] = {s.labels.label(pred[i])};
    for (std::size_t k = 0; k < K; ++k) {
      std::snprintf(buf, sizeof buf, "%.6f", probs[i * K + k]);
      r.values["prob_" + s.labels.label(static_cast<int>(k))] = {std::string(buf)};
    }
    out.push_back(std::move(r));
  }
  const auto out_schema = predict_output_schema(schema, s.labels.labels());
  in_context("--outputs=" + cfg.outputs, [&] { write_file_atomic(cfg.outputs, format_table(out, out_schema)); });
  log << "wrote " << out.size() << " predictions to " << cfg.outputs << "\n";
  return cfg.outputs;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  for (const auto& a : args) {
    if (a == "--help" || a == "-h") {
      out << help_text() << "\napps:\n";
      for (const auto& app : app_registry()) out << "  " << std::left << std::setw(18) << app.name << app.description << "\n";
      return 0;
    }
  }
  try {
    const auto cfg = parse_cli(args);
    for (const auto& w : cfg.warnings) err << "warning: " << w << "\n";
    switch (cfg.mode) {
      case RunMode::train: {
        const auto report = run_train(cfg, out);
        out << "best epoch " << report.best_epoch << "  dev accuracy " << std::fixed << std::setprecision(6)
            << report.best_dev_accuracy << std::defaultfloat << "\n"
            << "checkpoint written to " << report.checkpoint.string() << " (" << std::setprecision(3)
            << report.wall_seconds << " s)\n";
        break;
      }
      case RunMode::evaluate:
        run_evaluate(cfg, out);
        break;
      case RunMode::predict:
        run_predict(cfg, out);
        break;
    }
    return 0;
  } catch (const Error& e) {
    err << "error: ";
    if (!e.context().empty()) err << "[" << e.context() << "] ";
    err << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::usage:
        err << "run with --help for the flag list\n";
        return 2;
      case ErrorKind::data:
        return 3;
      case ErrorKind::model:
        return 4;
      case ErrorKind::internal:
        return 1;
    }
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace easynlp
