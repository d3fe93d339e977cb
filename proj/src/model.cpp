#include "easynlp/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "easynlp/errors.hpp"
#include "easynlp/rng.hpp"
#include "binio.hpp"

namespace easynlp {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kNumSpecialTokens)) {
    throw ConfigError("vocab_size must exceed the 5 special tokens, got " + std::to_string(vocab_size));
  }
  if (hidden_dim == 0 || num_heads == 0 || hidden_dim % num_heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (num_layers == 0 || ffn_dim == 0 || max_position < 2) throw ConfigError("layer sizes must be positive");
  if (num_classes == 0 || num_relations == 0) throw ConfigError("num_classes and num_relations must be >= 1");
  if (dropout_prob < 0.0 || dropout_prob >= 1.0) throw ConfigError("dropout_prob must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},       {"hidden_dim", hidden_dim},     {"num_layers", num_layers},
          {"num_heads", num_heads},         {"ffn_dim", ffn_dim},           {"max_position", max_position},
          {"num_classes", num_classes},     {"num_relations", num_relations}, {"dropout_prob", dropout_prob},
          {"layer_norm_eps", layer_norm_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.max_position = j.at("max_position").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.num_relations = j.at("num_relations").get<std::size_t>();
    c.dropout_prob = j.at("dropout_prob").get<double>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
}

ModelConfig preset_config(const std::string& name) {
  ModelConfig c;
  if (name == "bert-tiny-uncased") {
    c.hidden_dim = 16;
    c.num_layers = 2;
    c.num_heads = 2;
    c.ffn_dim = 32;
  } else if (name == "bert-small-uncased") {
    c.hidden_dim = 32;
    c.num_layers = 2;
    c.num_heads = 2;
    c.ffn_dim = 64;
  } else if (name == "bert-base-uncased") {
    c.hidden_dim = 64;
    c.num_layers = 4;
    c.num_heads = 4;
    c.ffn_dim = 128;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown model '" + name + "' (available: " + known + ")");
  }
  c.max_position = 128;
  return c;
}

std::vector<std::string> preset_names() { return {"bert-base-uncased", "bert-small-uncased", "bert-tiny-uncased"}; }

std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg) {
  const std::size_t d = cfg.hidden_dim, f = cfg.ffn_dim;
  std::map<std::string, Shape> s;
  s["embeddings.token"] = {cfg.vocab_size, d};
  s["embeddings.position"] = {cfg.max_position, d};
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    for (const char* proj : {"query", "key", "value", "output"}) {
      s[p + "attention." + proj + ".weight"] = {d, d};
      s[p + "attention." + proj + ".bias"] = {d};
    }
    s[p + "attention_norm.gamma"] = {d};
    s[p + "attention_norm.beta"] = {d};
    s[p + "ffn.in.weight"] = {d, f};
    s[p + "ffn.in.bias"] = {f};
    s[p + "ffn.out.weight"] = {f, d};
    s[p + "ffn.out.bias"] = {d};
    s[p + "ffn_norm.gamma"] = {d};
    s[p + "ffn_norm.beta"] = {d};
  }
  s["final_norm.gamma"] = {d};
  s["final_norm.beta"] = {d};
  s["mlm_head.bias"] = {cfg.vocab_size};
  s["pooler.weight"] = {d, d};
  s["pooler.bias"] = {d};
  s["classifier.weight"] = {d, cfg.num_classes};
  s["classifier.bias"] = {cfg.num_classes};
  s["relation_head.weight"] = {d, cfg.num_relations};
  s["relation_head.bias"] = {cfg.num_relations};
  return s;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_shapes(cfg)) total += shape_size(shape);
  return total;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

TransformerModel::TransformerModel(ModelConfig cfg, std::map<std::string, Tensor> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  const auto expected = parameter_shapes(cfg_);
  std::string missing, extra;
  for (const auto& [name, shape] : expected)
    if (!params_.count(name)) missing += (missing.empty() ? "" : ", ") + name;
  for (const auto& [name, t] : params_)
    if (!expected.count(name)) extra += (extra.empty() ? "" : ", ") + name;
  if (!missing.empty() || !extra.empty()) {
    throw FormatError("parameter set does not match config; missing: [" + missing + "] extra: [" + extra + "]");
  }
  for (auto& [name, t] : params_) {
    if (t.shape() != expected.at(name)) {
      throw FormatError("parameter '" + name + "' has shape " + shape_to_string(t.shape()) + ", expected " +
                        shape_to_string(expected.at(name)));
    }
    t.set_requires_grad(true);
  }
}

const Tensor& TransformerModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw IndexError("no parameter named '" + name + "'");
  return it->second;
}

ParameterList TransformerModel::parameters() const {
  ParameterList out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back({name, t});
  return out;
}

std::size_t TransformerModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : params_) total += t.size();
  return total;
}

TransformerModel TransformerModel::clone() const {
  std::map<std::string, Tensor> copy;
  for (const auto& [name, t] : params_) copy.emplace(name, t.clone());
  return TransformerModel(cfg_, std::move(copy));
}

void TransformerModel::set_parameters_from(const TransformerModel& other) {
  if (!(other.cfg_ == cfg_)) throw ConfigError("cannot copy parameters between different configs");
  for (auto& [name, t] : params_) {
    const auto src = other.param(name).data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

TransformerModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  std::map<std::string, Tensor> params;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    std::vector<double> data(shape_size(shape), 0.0);
    if (ends_with(".gamma")) {
      std::fill(data.begin(), data.end(), 1.0);
    } else if (shape.size() == 2) {
      for (double& v : data) v = rng.truncated_normal(0.02);
    }
    params.emplace(name, Tensor::from_data(shape, std::move(data), true));
  }
  return TransformerModel(cfg, std::move(params));
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

Tensor linear(const Tensor& x, const TransformerModel& m, const std::string& prefix) {
  return add_bias(matmul(x, m.param(prefix + ".weight")), m.param(prefix + ".bias"));
}

Tensor maybe_dropout(const Tensor& x, const ForwardOptions& opts, double p) {
  if (!opts.train || p == 0.0) return x;
  if (opts.dropout_rng == nullptr) throw StateError("train-mode forward with dropout needs an rng");
  return dropout(x, p, *opts.dropout_rng);
}

}  // namespace

Tensor flatten_tokens(const Tensor& hidden) {
  if (hidden.rank() == 2) return hidden;
  if (hidden.rank() != 3) throw DimensionError("expected hidden states [n×L×d], got " + shape_to_string(hidden.shape()));
  return reshape(hidden, {hidden.dim(0) * hidden.dim(1), hidden.dim(2)});
}

Tensor encode_sequence(const TransformerModel& m, const Batch& batch, const ForwardOptions& opts) {
  const auto& cfg = m.config();
  const std::size_t n = batch.batch_size, L = batch.seq_len, N = n * L;
  const std::size_t d = cfg.hidden_dim, H = cfg.num_heads, dh = d / H;
  if (L > cfg.max_position) {
    throw DomainError("sequence length " + std::to_string(L) + " exceeds max_position " +
                      std::to_string(cfg.max_position));
  }
  if (batch.input_ids.size() != N || batch.attention_mask.size() != N) {
    throw DimensionError("batch arrays do not match " + std::to_string(n) + "x" + std::to_string(L));
  }

  Tensor x = embedding_lookup(m.param("embeddings.token"), batch.input_ids);
  if (opts.overrides != nullptr && !opts.overrides->positions.empty()) {
    x = scatter_rows(x, opts.overrides->positions, opts.overrides->values);
  }
  std::vector<std::size_t> positions(N);
  for (std::size_t i = 0; i < N; ++i) positions[i] = i % L;
  x = add(x, gather_rows(m.param("embeddings.position"), positions));
  x = maybe_dropout(x, opts, cfg.dropout_prob);

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  auto split_heads = [&](const Tensor& t) { return reshape(swap_middle_axes(reshape(t, {n, L, H, dh})), {n * H, L, dh}); };

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Tensor h = layer_norm(x, m.param(p + "attention_norm.gamma"), m.param(p + "attention_norm.beta"),
                          cfg.layer_norm_eps);
    Tensor q = split_heads(linear(h, m, p + "attention.query"));
    Tensor k = split_heads(linear(h, m, p + "attention.key"));
    Tensor v = split_heads(linear(h, m, p + "attention.value"));
    Tensor scores = mask_keys(scale(batched_matmul(q, k, true), inv_sqrt_dh), batch.attention_mask, H);
    Tensor probs = softmax(scores, 2);
    if (opts.attention_probs != nullptr) opts.attention_probs->push_back(probs);
    Tensor ctx = reshape(swap_middle_axes(reshape(batched_matmul(probs, v), {n, H, L, dh})), {N, d});
    x = add(x, maybe_dropout(linear(ctx, m, p + "attention.output"), opts, cfg.dropout_prob));

    Tensor h2 = layer_norm(x, m.param(p + "ffn_norm.gamma"), m.param(p + "ffn_norm.beta"), cfg.layer_norm_eps);
    Tensor f = linear(gelu(linear(h2, m, p + "ffn.in")), m, p + "ffn.out");
    x = add(x, maybe_dropout(f, opts, cfg.dropout_prob));
  }
  x = layer_norm(x, m.param("final_norm.gamma"), m.param("final_norm.beta"), cfg.layer_norm_eps);
  return reshape(x, {n, L, d});
}

Tensor encode_sequence(const TransformerModel& m, const Batch& batch, bool train_mode, Rng* dropout_rng) {
  ForwardOptions opts;
  opts.train = train_mode;
  opts.dropout_rng = dropout_rng;
  return encode_sequence(m, batch, opts);
}

namespace {

void require_hidden_dim(const TransformerModel& m, const Tensor& h) {
  if (h.rank() < 2 || h.shape().back() != m.config().hidden_dim) {
    throw DimensionError("hidden states " + shape_to_string(h.shape()) + " do not end in hidden_dim " +
                         std::to_string(m.config().hidden_dim));
  }
}

Tensor tied_projection(const TransformerModel& m, const Tensor& rows) {
  return add_bias(matmul(rows, transpose(m.param("embeddings.token"))), m.param("mlm_head.bias"));
}

}  // namespace

Tensor mlm_logits(const TransformerModel& m, const Tensor& hidden) {
  require_hidden_dim(m, hidden);
  Tensor logits = tied_projection(m, flatten_tokens(hidden));
  if (hidden.rank() == 3) return reshape(logits, {hidden.dim(0), hidden.dim(1), m.config().vocab_size});
  return logits;
}

Tensor mlm_logits_at(const TransformerModel& m, const Tensor& hidden, std::span<const std::size_t> positions) {
  require_hidden_dim(m, hidden);
  return tied_projection(m, gather_rows(flatten_tokens(hidden), positions));
}

Tensor pooled_features(const TransformerModel& m, const Tensor& hidden) {
  require_hidden_dim(m, hidden);
  if (hidden.rank() != 3) throw DimensionError("pooling needs hidden states [n×L×d]");
  const std::size_t n = hidden.dim(0), L = hidden.dim(1);
  std::vector<std::size_t> cls(n);
  for (std::size_t i = 0; i < n; ++i) cls[i] = i * L;
  return tanh_activation(linear(gather_rows(flatten_tokens(hidden), cls), m, "pooler"));
}

Tensor classify_pooled(const TransformerModel& m, const Tensor& pooled) {
  require_hidden_dim(m, pooled);
  return linear(pooled, m, "classifier");
}

Tensor classify(const TransformerModel& m, const Tensor& hidden) {
  return classify_pooled(m, pooled_features(m, hidden));
}

Tensor relation_logits(const TransformerModel& m, const Tensor& span_hidden) {
  require_hidden_dim(m, span_hidden);
  return linear(span_hidden, m, "relation_head");
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

using binio::put_f32;
using binio::put_u32;

std::string serialize_model(const TransformerModel& m) {
  std::string out(kCheckpointMagic);
  const std::string cfg = m.config().to_json().dump();
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  const auto params = m.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto dim : p.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(dim));
    for (double v : p.tensor.data()) put_f32(out, v);
  }
  return out;
}

TransformerModel deserialize_model(const std::string& bytes) {
  binio::Reader<FormatError> r(bytes, "model.bin is truncated");
  if (r.take(kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("bad magic, not an ENLP1 checkpoint");
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(r.take(r.u32()));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("config JSON in model.bin: ") + e.what());
  }
  const auto cfg = ModelConfig::from_json(cfg_json);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("stored config is invalid: ") + e.what());
  }
  const auto count = r.u32();
  std::map<std::string, Tensor> params;
  std::string previous;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.take(r.u32());
    if (i > 0 && name <= previous) throw FormatError("parameter names are not unique and sorted at '" + name + "'");
    Shape shape(r.u32());
    for (auto& dim : shape) dim = r.u32();
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = r.f32();
    previous = name;
    params.emplace(std::move(name), Tensor::from_data(std::move(shape), std::move(data), true));
  }
  if (!r.done()) throw FormatError("trailing bytes after the last parameter");
  return TransformerModel(cfg, std::move(params));
}

std::string model_fingerprint(const TransformerModel& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_model(m)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const TransformerModel& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "config.json", m.config().to_json().dump(2) + "\n");
  write_file_atomic(dir / "model.bin", serialize_model(m));
}

TransformerModel load_checkpoint(const std::filesystem::path& dir) {
  auto model = deserialize_model(read_file(dir / "model.bin"));
  if (std::filesystem::exists(dir / "config.json")) {
    ModelConfig side;
    try {
      side = ModelConfig::from_json(nlohmann::json::parse(read_file(dir / "config.json")));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("config.json: ") + e.what());
    }
    if (!(side == model.config())) throw ValidationError("config.json disagrees with model.bin");
  }
  if (std::filesystem::exists(dir / "vocab.txt")) {
    const auto vocab = Vocabulary::load(dir / "vocab.txt");
    if (vocab.size() != model.config().vocab_size) {
      throw ValidationError("vocab.txt has " + std::to_string(vocab.size()) + " tokens but the model expects " +
                            std::to_string(model.config().vocab_size));
    }
  }
  return model;
}

}  // namespace easynlp
