// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "easynlp/appzoo.hpp"
#include "easynlp/data.hpp"
#include "easynlp/distill.hpp"
#include "easynlp/dkplm.hpp"
#include "easynlp/errors.hpp"
#include "easynlp/fewshot.hpp"
#include "easynlp/model.hpp"
#include "easynlp/rng.hpp"
#include "easynlp/toydata.hpp"
#include "easynlp/train.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace easynlp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string strf(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + strf("%.3f", x);
  return "[" + s + "]";
}

// Scratch directory, removed on exit.
struct Scratch {
  fs::path root;
  Scratch() {
    root = fs::temp_directory_path() / ("easynlp_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
};

Scratch& scratch() {
  static Scratch s;
  return s;
}

// Runs f with the working directory set to dir.
template <typename F>
auto in_directory(const fs::path& dir, F f) {
  const auto prev = fs::current_path();
  fs::create_directories(dir);
  fs::current_path(dir);
  struct Restore {
    fs::path p;
    ~Restore() { fs::current_path(p); }
  } restore{prev};
  return f();
}

void export_split(const std::string& name, const std::string& split, const fs::path& to) {
  const auto ds = load_dataset(name, split);
  write_table(to, ds.records, ds.schema);
}

int cli(const std::vector<std::string>& args, std::string* log = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (log) *log = out.str() + err.str();
  return code;
}

double eval_accuracy(const fs::path& json) {
  return nlohmann::json::parse(read_file(json)).at("accuracy").get<double>();
}

std::string file_bytes(const fs::path& p) { return read_file(p); }

TransformerModel perturbed(const ModelConfig& cfg, std::uint64_t seed, double noise = 0.3) {
  auto m = init_model(cfg, seed);
  Rng rng(seed + 100);
  for (auto& p : m.parameters())
    for (double& v : p.tensor.mutable_data()) v += noise * rng.normal();
  return m;
}

ModelConfig small_config(std::size_t vocab, std::size_t classes = 2, std::size_t relations = 2) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.hidden_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.ffn_dim = 12;
  c.max_position = 24;
  c.num_classes = classes;
  c.num_relations = relations;
  return c;
}

Vocabulary kb_vocab() {
  return Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "born", "in", "paris", "works", "as",
                                  "teacher", "new", "york", "ann", "bob", "zed", "lee", ".", "a", "was"});
}

Vocabulary review_vocab() {
  return Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "great", "movie", ".", "it", "was",
                                  "terrible", "plot", "and", "acting", "good", "bad"});
}

// ---------------------------------------------------------------------------
// Straight-line reference forward, plain doubles, no tensors.
// ---------------------------------------------------------------------------

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Vec values_of(const TransformerModel& m, const std::string& name) {
  const auto d = m.param(name).data();
  return {d.begin(), d.end()};
}

Mat matrix_of(const TransformerModel& m, const std::string& name) {
  const auto& t = m.param(name);
  Mat out(t.dim(0), Vec(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) out[i][j] = t[i * t.dim(1) + j];
  return out;
}

// row · W + b
Vec affine(const Vec& x, const Mat& W, const Vec& b) {
  Vec y = b;
  for (std::size_t j = 0; j < y.size(); ++j)
    for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * W[i][j];
  return y;
}

Vec affine(const Vec& x, const TransformerModel& m, const std::string& prefix) {
  return affine(x, matrix_of(m, prefix + ".weight"), values_of(m, prefix + ".bias"));
}

Vec norm(const Vec& x, const Vec& g, const Vec& b, double eps) {
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + eps) * g[i] + b[i];
  return y;
}

double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

double log_sum_exp(const Vec& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double x : v) z += std::exp(x - mx);
  return mx + std::log(z);
}

Vec softmax_ref(const Vec& v) {
  const double lse = log_sum_exp(v);
  Vec p(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) p[i] = std::exp(v[i] - lse);
  return p;
}

// One unpadded sequence; overrides replace the token embedding at a position.
Mat reference_encode(const TransformerModel& m, const std::vector<TokenId>& ids, const std::map<std::size_t, Vec>& overrides) {
  const auto& c = m.config();
  const std::size_t L = ids.size(), d = c.hidden_dim, H = c.num_heads, dh = d / H;
  const Mat E = matrix_of(m, "embeddings.token"), P = matrix_of(m, "embeddings.position");
  Mat x(L, Vec(d));
  for (std::size_t t = 0; t < L; ++t) {
    const auto it = overrides.find(t);
    const Vec& base = it != overrides.end() ? it->second : E[static_cast<std::size_t>(ids[t])];
    for (std::size_t k = 0; k < d; ++k) x[t][k] = base[k] + P[t][k];
  }
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Mat q(L), k(L), v(L);
    for (std::size_t t = 0; t < L; ++t) {
      const Vec h = norm(x[t], values_of(m, p + "attention_norm.gamma"), values_of(m, p + "attention_norm.beta"),
                         c.layer_norm_eps);
      q[t] = affine(h, m, p + "attention.query");
      k[t] = affine(h, m, p + "attention.key");
      v[t] = affine(h, m, p + "attention.value");
    }
    Mat ctx(L, Vec(d, 0.0));
    for (std::size_t head = 0; head < H; ++head) {
      for (std::size_t i = 0; i < L; ++i) {
        Vec scores(L);
        for (std::size_t j = 0; j < L; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += q[i][head * dh + e] * k[j][head * dh + e];
          scores[j] = s / std::sqrt(static_cast<double>(dh));
        }
        const Vec a = softmax_ref(scores);
        for (std::size_t j = 0; j < L; ++j)
          for (std::size_t e = 0; e < dh; ++e) ctx[i][head * dh + e] += a[j] * v[j][head * dh + e];
      }
    }
    for (std::size_t t = 0; t < L; ++t) {
      const Vec o = affine(ctx[t], m, p + "attention.output");
      for (std::size_t e = 0; e < d; ++e) x[t][e] += o[e];
      const Vec h2 = norm(x[t], values_of(m, p + "ffn_norm.gamma"), values_of(m, p + "ffn_norm.beta"), c.layer_norm_eps);
      Vec f = affine(h2, m, p + "ffn.in");
      for (double& z : f) z = gelu_ref(z);
      const Vec out = affine(f, m, p + "ffn.out");
      for (std::size_t e = 0; e < d; ++e) x[t][e] += out[e];
    }
  }
  for (auto& row : x) row = norm(row, values_of(m, "final_norm.gamma"), values_of(m, "final_norm.beta"), c.layer_norm_eps);
  return x;
}

double reference_pretrain_loss(const TransformerModel& m, const PretrainBatch& pb) {
  const auto& b = pb.batch;
  std::map<std::size_t, Vec> overrides;
  for (const auto& s : pb.spans)
    for (std::size_t t = s.start; t < s.end; ++t) overrides[t] = Vec(s.embedding.data().begin(), s.embedding.data().end());
  const Mat h = reference_encode(m, b.input_ids, overrides);
  const Mat E = matrix_of(m, "embeddings.token");
  const Vec bias = values_of(m, "mlm_head.bias");

  double mlm = 0.0;
  std::size_t labeled = 0;
  for (std::size_t t = 0; t < b.seq_len; ++t) {
    if (b.mlm_labels[t] == kIgnoreLabel) continue;
    Vec logits(E.size());
    for (std::size_t w = 0; w < E.size(); ++w) {
      logits[w] = bias[w];
      for (std::size_t e = 0; e < h[t].size(); ++e) logits[w] += h[t][e] * E[w][e];
    }
    mlm += log_sum_exp(logits) - logits[static_cast<std::size_t>(b.mlm_labels[t])];
    ++labeled;
  }
  if (labeled > 0) mlm /= static_cast<double>(labeled);

  double rel = 0.0;
  for (const auto& s : pb.spans) {
    Vec avg(h[0].size(), 0.0);
    for (std::size_t t = s.start; t < s.end; ++t)
      for (std::size_t e = 0; e < avg.size(); ++e) avg[e] += h[t][e] / static_cast<double>(s.end - s.start);
    const Vec logits = affine(avg, m, "relation_head");
    rel += log_sum_exp(logits) - logits[static_cast<std::size_t>(s.relation_target)];
  }
  if (!pb.spans.empty()) rel /= static_cast<double>(pb.spans.size());
  return mlm + pb.lambda_rel * rel;
}

// ---------------------------------------------------------------------------
// 1. gradient suite
// ---------------------------------------------------------------------------

struct GradCase {
  std::string name;
  std::function<Tensor()> loss;
  ParameterList params;
};

std::vector<GradCase> op_cases(Rng& rng) {
  auto a = gradcheck::random_tensor({4, 3}, rng);
  auto b = gradcheck::random_tensor({3, 5}, rng);
  auto c = gradcheck::random_tensor({4, 3}, rng);
  auto bias = gradcheck::random_tensor({3}, rng);
  auto gamma = gradcheck::random_tensor({3}, rng);
  auto beta = gradcheck::random_tensor({3}, rng);
  auto q = gradcheck::random_tensor({4, 3, 2}, rng);
  auto k = gradcheck::random_tensor({4, 3, 2}, rng);
  auto four = gradcheck::random_tensor({2, 3, 2, 2}, rng);
  auto w = gradcheck::random_tensor({4, 5}, rng, 1.0, false);
  auto p = gradcheck::random_tensor({4, 3}, rng, 1.0, false);
  std::vector<int> targets(4), ids(4), mask{1, 1, 0, 1, 1, 1};
  for (auto& t : targets) t = static_cast<int>(rng.uniform_int(5));
  for (auto& i : ids) i = static_cast<int>(rng.uniform_int(4));
  std::vector<int> ignore_targets = targets;
  ignore_targets[rng.uniform_int(4)] = kIgnoreLabel;
  const std::vector<std::size_t> rows{rng.uniform_int(4), rng.uniform_int(4), 1};
  const std::vector<std::size_t> scatter_at{2, 0};
  const std::vector<std::size_t> cols{4, 0, 2};
  const std::vector<std::size_t> rows2{3, 1};
  const std::vector<std::vector<std::size_t>> groups{{0, 1}, {3}, {1, 2, 3}};
  const Tensor row_weights = Tensor::from_data({4}, {1.0, 2.0, 0.5, 3.0});

  return {
      {"add", [=] { return sum(mul(add(a, c), p)); }, {{"a", a}, {"c", c}}},
      {"sub", [=] { return sum(mul(sub(a, c), p)); }, {{"a", a}, {"c", c}}},
      {"mul", [=] { return sum(mul(mul(a, c), p)); }, {{"a", a}, {"c", c}}},
      {"scale", [=] { return sum(mul(scale(a, -1.7), p)); }, {{"a", a}}},
      {"add_scalar", [=] { return sum(mul(add_scalar(a, 0.7), add_scalar(c, -0.2))); }, {{"a", a}, {"c", c}}},
      {"add_bias", [=] { return sum(mul(add_bias(a, bias), p)); }, {{"a", a}, {"bias", bias}}},
      {"matmul", [=] { return sum(mul(matmul(a, b), w)); }, {{"a", a}, {"b", b}}},
      {"transpose", [=] { return sum(mul(transpose(matmul(a, b)), transpose(w))); }, {{"a", a}, {"b", b}}},
      {"batched_matmul", [=] { return sum(gelu(batched_matmul(q, reshape(k, {4, 2, 3})))); }, {{"q", q}, {"k", k}}},
      {"batched_matmul_t", [=] { return sum(mul(batched_matmul(q, k, true), batched_matmul(q, k, true))); },
       {{"q", q}, {"k", k}}},
      {"reshape", [=] { return sum(mul(reshape(a, {3, 4}), reshape(c, {3, 4}))); }, {{"a", a}}},
      {"swap_middle_axes", [=] { return sum(mul(swap_middle_axes(four), reshape(four, {2, 2, 3, 2}))); }, {{"four", four}}},
      {"softmax", [=] { return sum(mul(softmax(matmul(a, b), 1), w)); }, {{"a", a}, {"b", b}}},
      {"softmax_axis0", [=] { return sum(mul(softmax(matmul(a, b), 0), w)); }, {{"a", a}, {"b", b}}},
      {"log_softmax", [=] { return sum(mul(log_softmax(matmul(a, b), 1), w)); }, {{"a", a}, {"b", b}}},
      {"layer_norm", [=] { return sum(mul(layer_norm(a, gamma, beta, 1e-5), p)); },
       {{"a", a}, {"gamma", gamma}, {"beta", beta}}},
      {"gelu", [=] { return sum(mul(gelu(a), p)); }, {{"a", a}}},
      {"tanh", [=] { return sum(mul(tanh_activation(a), p)); }, {{"a", a}}},
      {"relu", [=] { return sum(mul(relu(a), p)); }, {{"a", a}}},
      {"sum", [=] { return mul(sum(mul(a, a)), sum(c)); }, {{"a", a}, {"c", c}}},
      {"mean", [=] { return mean(mul(a, c)); }, {{"a", a}, {"c", c}}},
      {"embedding_lookup", [=] { return sum(mul(embedding_lookup(a, ids), embedding_lookup(c, ids))); },
       {{"a", a}, {"c", c}}},
      {"gather_rows", [=] { return sum(tanh_activation(gather_rows(a, rows))); }, {{"a", a}}},
      {"scatter_rows", [=] { return sum(mul(scatter_rows(a, scatter_at, gather_rows(c, rows2)), p)); },
       {{"a", a}, {"c", c}}},
      {"segment_mean", [=] { return sum(gelu(segment_mean(a, groups))); }, {{"a", a}}},
      {"select_columns", [=] { return sum(gelu(select_columns(matmul(a, b), cols))); }, {{"a", a}, {"b", b}}},
      {"normalize_rows", [=] { return sum(mul(normalize_rows(a), p)); }, {{"a", a}}},
      {"mask_keys",
       [=] {
         auto scores = batched_matmul(q, k, true);
         return sum(mul(softmax(mask_keys(scores, mask, 2), 2), softmax(scores, 2)));
       },
       {{"q", q}, {"k", k}}},
      {"cross_entropy", [=] { return cross_entropy(matmul(a, b), targets); }, {{"a", a}, {"b", b}}},
      {"cross_entropy_rows", [=] { return sum(mul(cross_entropy_rows(matmul(a, b), ignore_targets), row_weights)); },
       {{"a", a}, {"b", b}}},
  };
}

std::vector<GradCase> composite_cases(std::uint64_t seed) {
  std::vector<GradCase> out;
  Rng rng(seed * 7919);

  {  // classification CE through the full encoder
    const auto vocab = review_vocab();
    const auto m = perturbed(small_config(vocab.size(), 3), seed);
    const std::vector<TokenSequence> seqs{encode(vocab, "great movie and good acting", 16),
                                          encode(vocab, "terrible plot", 16), encode(vocab, "it was bad .", 16)};
    auto batch = pad_batch(seqs);
    std::vector<int> labels{0, 1, 2};
    shuffle(labels.begin(), labels.end(), rng);
    out.push_back({"classification_ce", [=] { return cross_entropy(classify(m, encode_sequence(m, batch, false)), labels); },
                   m.parameters()});
  }
  {  // masked LM
    const auto vocab = kb_vocab();
    const auto m = perturbed(small_config(vocab.size()), seed + 1);
    const std::vector<TokenSequence> seqs{encode(vocab, "ann works as a teacher .", 16),
                                          encode(vocab, "bob was born in paris .", 16)};
    Batch batch = pad_batch(seqs);
    std::vector<std::size_t> positions;
    std::vector<int> targets;
    for (std::size_t i = 0; i < batch.input_ids.size(); ++i) {
      if (batch.input_ids[i] < kNumSpecialTokens || rng.uniform() < 0.5) continue;
      positions.push_back(i);
      targets.push_back(batch.input_ids[i]);
      batch.input_ids[i] = kMaskId;
    }
    out.push_back({"mlm",
                   [=] { return cross_entropy(mlm_logits_at(m, flatten_tokens(encode_sequence(m, batch, false)), positions), targets); },
                   m.parameters()});
  }
  {  // DKPLM joint objective with injected spans
    const auto vocab = kb_vocab();
    const auto m = perturbed(small_config(vocab.size()), seed + 2);
    const TripleStore kb({{"new york", "born_in", "paris"}, {"ann", "works_as", "teacher"}, {"ann", "born_in", "paris"}});
    const EntityLexicon lexicon(vocab, kb.heads());
    const std::vector<TokenSequence> seqs{encode(vocab, "ann works as a teacher .", 16, lexicon),
                                          encode(vocab, "zed was born in new york .", 16, lexicon)};
    const auto pb = build_pretrain_batch(seqs, kb, {"ann", "new york"}, m, vocab, 0.3, seed, 0.7);
    out.push_back({"dkplm_joint", [=] { return pretrain_forward_loss(m, pb); }, m.parameters()});
  }

  const auto vocab = review_vocab();
  const std::vector<std::string> texts{"great movie", "terrible plot", "good acting", "bad movie"};
  const std::vector<int> labels{0, 1, 0, 1};
  const Verbalizer verbalizer({"good", "bad"}, vocab);
  {  // PET
    const auto m = perturbed(small_config(vocab.size()), seed + 3);
    const auto t = PromptTemplate::parse("{input} . it was {mask} .");
    std::vector<PromptedSequence> ps;
    for (const auto& s : texts) ps.push_back(apply_template(t, {s}, vocab));
    const auto pb = make_prompt_batch(ps, labels);
    out.push_back({"pet", [=] { return pet_loss(m, pb, verbalizer, nullptr); }, m.parameters()});
  }
  {  // P-Tuning: backbone and prompt rows
    const auto m = perturbed(small_config(vocab.size()), seed + 4);
    const auto t = PromptTemplate::parse("{input} {p*3} {mask} .");
    std::vector<PromptedSequence> ps;
    for (const auto& s : texts) ps.push_back(apply_template(t, {s}, vocab));
    const auto pb = make_prompt_batch(ps, labels);
    auto prompt = std::make_shared<ContinuousPrompt>(ContinuousPrompt::random(3, 8, rng));
    for (double& x : prompt->embeddings.mutable_data()) x *= 20.0;
    out.push_back({"ptuning", [=] { return pet_loss(m, pb, verbalizer, prompt.get()); }, fewshot_parameters(m, prompt.get())});
  }
  {  // CP-Tuning
    const auto m = perturbed(small_config(vocab.size()), seed + 5);
    const auto t = PromptTemplate::parse("{input} {p*2} {mask}");
    std::vector<PromptedSequence> ps;
    for (const auto& s : texts) ps.push_back(apply_template(t, {s}, vocab));
    const auto pb = make_prompt_batch(ps, labels);
    auto prompt = std::make_shared<ContinuousPrompt>(ContinuousPrompt::random(2, 8, rng));
    for (double& x : prompt->embeddings.mutable_data()) x *= 20.0;
    CpTuningOptions o;
    o.margin_pos = 1.0;  // positive hinges always active
    o.margin_neg = 0.0;
    out.push_back({"cp_tuning", [=] { return cp_tuning_loss(mask_hiddens(m, pb, prompt.get()), labels, o); },
                   fewshot_parameters(m, prompt.get())});
  }

  const std::vector<TokenSequence> seqs{encode(vocab, "great movie and good acting", 16), encode(vocab, "terrible plot", 16),
                                        encode(vocab, "it was bad .", 16)};
  const auto batch = pad_batch(seqs);
  const std::vector<int> hard{0, 1, 1};
  {  // kd_loss
    const auto m = perturbed(small_config(vocab.size()), seed + 6);
    const auto teacher = gradcheck::random_tensor({3, 2}, rng, 2.0, false);
    KDConfig cfg;
    cfg.temperature = 1.0 + 3.0 * rng.uniform();
    cfg.alpha = rng.uniform();
    out.push_back({"kd_loss", [=] { return kd_loss(classify(m, encode_sequence(m, batch, false)), teacher, hard, cfg); },
                   m.parameters()});
  }
  {  // meta_distill_loss, projection included
    const auto m = perturbed(small_config(vocab.size()), seed + 7);
    const auto teacher = gradcheck::random_tensor({3, 2}, rng, 2.0, false);
    const auto teacher_feat = gradcheck::random_tensor({3, 12}, rng, 0.5, false);
    const auto proj = gradcheck::random_tensor({8, 12}, rng, 0.3);
    KDConfig cfg;
    cfg.temperature = 1.0 + 3.0 * rng.uniform();
    cfg.alpha = rng.uniform();
    cfg.feature_beta = 0.5;
    const double t_d = 0.2 + 0.8 * rng.uniform();
    auto params = m.parameters();
    params.push_back({"proj", proj});
    out.push_back({"meta_distill_loss",
                   [=] {
                     const auto pooled = pooled_features(m, encode_sequence(m, batch, false));
                     return meta_distill_loss(classify_pooled(m, pooled), pooled, teacher, teacher_feat, hard, t_d, cfg, proj);
                   },
                   params});
  }
  return out;
}

Outcome criterion1() {
  std::map<std::string, std::pair<double, int>> worst;  // name -> (worst error, instances)
  Rng rng(20240);
  for (int instance = 0; instance < 5; ++instance) {
    auto cases = op_cases(rng);
    auto composite = composite_cases(static_cast<std::uint64_t>(instance + 1));
    cases.insert(cases.end(), composite.begin(), composite.end());
    for (const auto& c : cases) {
      const auto r = gradcheck::check(c.loss, c.params);
      auto& slot = worst[c.name];
      slot.first = std::max(slot.first, r.worst_relative_error);
      ++slot.second;
    }
  }
  double overall = 0.0;
  std::string worst_name, failing;
  int min_instances = 1 << 30;
  for (const auto& [name, v] : worst) {
    if (v.first >= overall) {
      overall = v.first;
      worst_name = name;
    }
    if (!(v.first < 1e-6)) failing += " " + name;
    min_instances = std::min(min_instances, v.second);
  }
  Outcome o;
  o.pass = failing.empty() && min_instances >= 5;
  o.detail = strf("%zu checks x %d instances, worst relative error %.2e (%s)", worst.size(), min_instances, overall,
                  worst_name.c_str());
  if (!failing.empty()) o.detail += "; over 1e-6:" + failing;
  return o;
}

// ---------------------------------------------------------------------------
// 2. straight-line oracles
// ---------------------------------------------------------------------------

Outcome criterion2() {
  double worst_pretrain = 0.0, worst_meta = 0.0;
  std::size_t spans = 0, labeled = 0;
  const auto vocab = kb_vocab();
  const TripleStore kb({{"new york", "born_in", "paris"}, {"new york", "works_as", "teacher"}, {"ann", "born_in", "paris"}});
  const EntityLexicon lexicon(vocab, kb.heads());
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ModelConfig cfg = small_config(vocab.size());
    cfg.num_layers = 2;
    const auto m = perturbed(cfg, seed);
    const std::vector<TokenSequence> seqs{encode(vocab, "zed was born in new york and ann works as a teacher .", 24, lexicon)};
    const auto pb = build_pretrain_batch(seqs, kb, {"new york", "ann"}, m, vocab, 0.3, seed, 0.3 + 0.2 * static_cast<double>(seed));
    spans += pb.spans.size();
    for (int l : pb.batch.mlm_labels) labeled += l != kIgnoreLabel;
    worst_pretrain = std::max(worst_pretrain, std::abs(pretrain_forward_loss(m, pb).item() - reference_pretrain_loss(m, pb)));
  }

  const auto rv = review_vocab();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed + 50);
    const auto m = perturbed(small_config(rv.size(), 3), seed + 10);
    const auto seq = encode(rv, "great movie and good acting .", 24);
    const auto teacher = gradcheck::random_tensor({1, 3}, rng, 2.0, false);
    const auto teacher_feat = gradcheck::random_tensor({1, 12}, rng, 0.5, false);
    const auto proj = gradcheck::random_tensor({8, 12}, rng, 0.3, false);
    KDConfig kd;
    kd.temperature = 1.0 + 3.0 * rng.uniform();
    kd.alpha = rng.uniform();
    kd.feature_beta = rng.uniform();
    const double t_d = rng.uniform();
    const int y = static_cast<int>(rng.uniform_int(3));

    const auto pooled = pooled_features(m, encode_sequence(m, pad_batch({seq}), false));
    const double got = meta_distill_loss(classify_pooled(m, pooled), pooled, teacher, teacher_feat, {y}, t_d, kd, proj).item();

    const Mat h = reference_encode(m, seq.ids, {});
    Vec feat = affine(h[0], m, "pooler");
    for (double& v : feat) v = std::tanh(v);
    const Vec s = affine(feat, m, "classifier");
    const Vec t(teacher.data().begin(), teacher.data().end());
    const double ce = log_sum_exp(s) - s[static_cast<std::size_t>(y)];
    Vec st(3), tt(3);
    for (std::size_t i = 0; i < 3; ++i) {
      st[i] = s[i] / kd.temperature;
      tt[i] = t[i] / kd.temperature;
    }
    const Vec pt = softmax_ref(tt);
    double kl = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      kl += pt[i] * ((tt[i] - log_sum_exp(tt)) - (st[i] - log_sum_exp(st)));
    kl *= kd.temperature * kd.temperature;
    double mse = 0.0;
    for (std::size_t j = 0; j < 12; ++j) {
      double z = -teacher_feat[j];
      for (std::size_t i = 0; i < 8; ++i) z += feat[i] * proj[i * 12 + j];
      mse += z * z / 12.0;
    }
    const double want = ce + t_d * ((1.0 - kd.alpha) * kl + kd.feature_beta * mse);
    worst_meta = std::max(worst_meta, std::abs(got - want));
  }

  Outcome o;
  o.pass = worst_pretrain <= 1e-10 && worst_meta <= 1e-10 && spans == 10 && labeled > spans;
  o.detail = strf("pretrain_forward_loss max |diff| %.2e (5 fixtures, %zu injected spans), meta_distill_loss max |diff| %.2e",
                  worst_pretrain, spans, worst_meta);
  return o;
}

// ---------------------------------------------------------------------------
// 3. overfit through the reference command
// ---------------------------------------------------------------------------

Outcome criterion3() {
  const fs::path dir = scratch().root / "reference";
  return in_directory(dir, [] {
    export_split("toy-tnews", "train", "train.tsv");
    export_split("toy-tnews", "dev", "dev.tsv");
    // the reference command, epoch_num raised to the budget
    const std::vector<std::string> args{
        "--mode=train",
        "--worker_gpu=1",
        "--tables=train.tsv,dev.tsv",
        "--input_schema=sent:str:1,label:str:1",
        "--first_sequence=sent",
        "--label_name=label",
        "--label_enumerate_values=0,1",
        "--checkpoint_dir=./classification_model",
        "--epoch_num=200",
        "--sequence_length=128",
        "--app_name=text_classify",
        "--user_defined_parameters=pretrain_model_name_or_path=bert-small-uncased",
    };
    Outcome o;
    std::string log;
    const int train_code = cli(args, &log);
    if (train_code != 0) {
      o.detail = strf("train exited %d: ", train_code) + log.substr(0, 200);
      return o;
    }
    const auto cfg = load_checkpoint("classification_model").config();
    const int eval_code = cli({"--mode=evaluate", "--tables=train.tsv", "--input_schema=sent:str:1,label:str:1",
                               "--first_sequence=sent", "--label_name=label", "--checkpoint_dir=./classification_model",
                               "--outputs=train_eval.json"});
    if (eval_code != 0) {
      o.detail = strf("evaluate exited %d", eval_code);
      return o;
    }
    const double acc = eval_accuracy("train_eval.json");
    const auto n = load_dataset("toy-tnews", "train").records.size();
    o.pass = acc == 1.0 && n == 32 && cfg.num_layers == 2 && cfg.hidden_dim == 32;
    o.detail = strf("%zu train examples, %zu layers d=%zu, train accuracy %.4f", n, cfg.num_layers, cfg.hidden_dim, acc);
    return o;
  });
}

// ---------------------------------------------------------------------------
// 4. knowledge injection on a synthetic world
// ---------------------------------------------------------------------------

struct ProbeRun {
  double injected = 0.0;
  double ablation = 0.0;
  double majority = 0.0;
};

ProbeRun dkplm_run(std::uint64_t seed) {
  const auto world = make_knowledge_world(kToyWorldSeed, 2000);
  std::vector<std::string> texts = world.corpus;
  for (const auto& t : world.triples) texts.push_back(t.head + " " + t.relation + " " + t.tail);
  Vocabulary vocab = build_vocab(texts, 1);
  for (const auto& t : world.triples)
    for (const auto& w : split_words(t.relation)) vocab.add(w);
  const TripleStore kb(world.triples);
  // every KB head is rare here
  LongTailPolicy policy;
  policy.tail_quantile = 1.0;
  const auto corpus = prepare_dkplm_corpus(vocab, world.corpus, kb, policy, 24);

  ModelConfig cfg = preset_config("bert-small-uncased");
  cfg.vocab_size = vocab.size();
  cfg.num_relations = kb.relation_count();

  DkplmOptions opts;
  opts.epochs = 60;
  opts.learning_rate = 2e-3;
  opts.batch_size = 32;
  opts.seed = seed;

  ProbeRun r;
  r.majority = majority_baseline(world.probes);
  auto injected = init_model(cfg, seed);
  train_dkplm(injected, corpus, vocab, opts);
  r.injected = knowledge_probe(injected, vocab, world.probes).p_at_1;

  auto plain = init_model(cfg, seed);
  opts.inject = false;
  train_dkplm(plain, corpus, vocab, opts);
  r.ablation = knowledge_probe(plain, vocab, world.probes).p_at_1;
  return r;
}

Outcome criterion4() {
  std::vector<double> inj, abl;
  double majority = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = dkplm_run(seed);
    inj.push_back(r.injected);
    abl.push_back(r.ablation);
    majority = r.majority;
  }
  const double mi = median(inj), ma = median(abl);
  Outcome o;
  o.pass = mi >= 5.0 * majority && mi >= 1.5 * ma;
  o.detail = strf("P@1 median injected %.3f %s, ablation %.3f %s, majority %.3f", mi, list(inj).c_str(), ma,
                  list(abl).c_str(), majority);
  return o;
}

// ---------------------------------------------------------------------------
// 5. injection adds no parameters
// ---------------------------------------------------------------------------

std::map<std::string, Shape> manifest(const TransformerModel& m) {
  std::map<std::string, Shape> out;
  for (const auto& p : m.parameters()) out[p.name] = p.tensor.shape();
  return out;
}

Outcome criterion5() {
  const auto world = make_knowledge_world(kToyWorldSeed, 400);
  Vocabulary vocab = build_vocab(world.corpus, 1);
  for (const auto& t : world.triples) {
    for (const auto& w : split_words(t.tail)) vocab.add(w);
    for (const auto& w : split_words(t.relation)) vocab.add(w);
  }
  const TripleStore kb(world.triples);
  const auto corpus = prepare_dkplm_corpus(vocab, world.corpus, kb, LongTailPolicy{}, 24);
  ModelConfig cfg = preset_config("bert-tiny-uncased");
  cfg.vocab_size = vocab.size();
  cfg.num_relations = kb.relation_count();

  DkplmOptions opts;
  opts.epochs = 1;
  auto dk = init_model(cfg, 5);
  train_dkplm(dk, corpus, vocab, opts);
  opts.inject = false;
  auto plain = init_model(cfg, 5);
  train_dkplm(plain, corpus, vocab, opts);

  Outcome o;
  const bool same_manifest = manifest(dk) == manifest(plain) && manifest(dk) == parameter_shapes(cfg) &&
                             dk.parameter_count() == plain.parameter_count();

  // Fine-tuning path: checkpoint dir as the warm start of text_classify.
  const fs::path dir = scratch().root / "identity";
  const fs::path ckpt = dir / "dkplm";
  save_checkpoint(dk, ckpt);
  vocab.save(ckpt / "vocab.txt");
  const bool round_trip = serialize_model(load_checkpoint(ckpt)) == serialize_model(dk);

  std::vector<Record> rows;
  for (std::size_t i = 0; i < 16; ++i) {
    const auto& sentence = world.corpus[i];
    rows.push_back(Record{{{"sent", {sentence}}, {"label", {std::string(sentence.find(" born ") != std::string::npos ? "1" : "0")}}}});
  }
  const auto schema = parse_input_schema("sent:str:1,label:str:1");
  write_table(dir / "train.tsv", rows, schema);
  std::string log;
  const int code = cli({"--mode=train", "--tables=" + (dir / "train.tsv").string() + "," + (dir / "train.tsv").string(),
                        "--input_schema=sent:str:1,label:str:1", "--first_sequence=sent", "--label_name=label",
                        "--label_enumerate_values=0,1", "--checkpoint_dir=" + (dir / "ft").string(), "--epoch_num=2",
                        "--sequence_length=24", "--app_name=text_classify",
                        "--user_defined_parameters=pretrain_model_name_or_path=" + ckpt.string()},
                       &log);
  bool ft_ok = code == 0;
  if (ft_ok) {
    const auto ft = load_checkpoint(dir / "ft");
    ft_ok = manifest(ft) == manifest(dk) && ft.config() == dk.config();
  }
  o.pass = same_manifest && round_trip && ft_ok;
  o.detail = strf("%zu tensors, %zu parameters each; manifests %s; checkpoint reload %s; warm-start fine-tune exit %d%s",
                  manifest(dk).size(), dk.parameter_count(), same_manifest ? "identical" : "DIFFER",
                  round_trip ? "byte-identical" : "DIFFERS", code, ft_ok ? ", same manifest" : "");
  if (code != 0) o.detail += ": " + log.substr(0, 200);
  return o;
}

// ---------------------------------------------------------------------------
// 6. few-shot: fine-tuning vs PET vs CP-Tuning
// ---------------------------------------------------------------------------

struct FewShotWorld {
  Vocabulary vocab;
  TransformerModel backbone;
};

const std::string kPetTemplate = "{input} . it was {mask} .";
const std::string kCpTemplate = "{input} {p*4} {mask}";
const std::vector<std::string> kTopicWords = {"team", "market"};

// MLM pre-training on unlabeled headlines, shared by every seed.
const FewShotWorld& fewshot_world() {
  static const FewShotWorld w = [] {
    std::vector<std::string> texts;
    for (const auto& r : make_topic_records(77, 2000)) texts.push_back(r.text("sent"));
    std::vector<std::string> vocab_texts = texts;
    vocab_texts.push_back("it was");
    Vocabulary vocab = build_vocab(vocab_texts, 1);
    ModelConfig cfg = preset_config("bert-small-uncased");
    cfg.vocab_size = vocab.size();
    auto model = init_model(cfg, 7);
    DkplmCorpus corpus;
    for (const auto& t : texts) corpus.seqs.push_back(encode(vocab, t, 16));
    DkplmOptions opts;
    opts.epochs = 4;
    opts.batch_size = 32;
    opts.learning_rate = 2e-3;
    opts.inject = false;
    opts.seed = 7;
    train_dkplm(model, corpus, vocab, opts);
    return FewShotWorld{std::move(vocab), std::move(model)};
  }();
  return w;
}

struct FewShotData {
  std::vector<std::string> train_text, test_text;
  std::vector<int> train_labels, test_labels;
};

FewShotData fewshot_data(std::uint64_t seed) {
  FewShotData d;
  int per_class[2] = {0, 0};
  for (const auto& r : make_topic_records(1000 + seed, 200)) {
    const int y = std::stoi(r.text("label"));
    if (per_class[y] == 16) continue;
    ++per_class[y];
    d.train_text.push_back(r.text("sent"));
    d.train_labels.push_back(y);
  }
  for (const auto& r : make_topic_records(5000 + seed, 400)) {
    d.test_text.push_back(r.text("sent"));
    d.test_labels.push_back(std::stoi(r.text("label")));
  }
  return d;
}

PromptBatch prompt_rows(const PromptTemplate& t, const std::vector<std::string>& texts, const std::vector<int>& labels,
                        const Vocabulary& vocab, const std::vector<std::size_t>& idx) {
  std::vector<PromptedSequence> ps;
  std::vector<int> ys;
  for (auto i : idx) {
    ps.push_back(apply_template(t, {texts[i]}, vocab, 32));
    if (!labels.empty()) ys.push_back(labels[i]);
  }
  return make_prompt_batch(ps, ys);
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

constexpr std::size_t kFewShotEpochs = 30;
constexpr double kFewShotLr = 1e-3;

double run_finetune(const FewShotData& d, std::uint64_t seed) {
  const auto& w = fewshot_world();
  auto m = w.backbone.clone();
  LabeledSequences train, test;
  for (std::size_t i = 0; i < d.train_text.size(); ++i) train.seqs.push_back(encode(w.vocab, d.train_text[i], 32));
  train.labels = d.train_labels;
  for (std::size_t i = 0; i < d.test_text.size(); ++i) test.seqs.push_back(encode(w.vocab, d.test_text[i], 32));
  test.labels = d.test_labels;
  ClassifierTrainOptions o;
  o.epochs = kFewShotEpochs;
  o.batch_size = 8;
  o.learning_rate = kFewShotLr;
  o.seed = seed;
  train_classifier(m, train, o);
  return accuracy(predict_classes(m, test), test.labels);
}

double run_pet(const FewShotData& d, std::uint64_t seed) {
  const auto& w = fewshot_world();
  auto m = w.backbone.clone();
  const auto t = PromptTemplate::parse(kPetTemplate);
  const Verbalizer v(kTopicWords, w.vocab);
  const auto params = fewshot_parameters(m, nullptr);
  AdamState adam;
  adam.lr = kFewShotLr;
  Rng rng(seed);
  for (std::size_t e = 0; e < kFewShotEpochs; ++e) {
    for (const auto& idx : minibatches(d.train_text.size(), 8, rng)) {
      const auto pb = prompt_rows(t, d.train_text, d.train_labels, w.vocab, idx);
      train_step(params, adam, [&] { return pet_loss(m, pb, v, nullptr); });
    }
  }
  const auto pb = prompt_rows(t, d.test_text, {}, w.vocab, all_rows(d.test_text.size()));
  return accuracy(pet_predict(m, pb, v), d.test_labels);
}

double run_cp(const FewShotData& d, std::uint64_t seed) {
  const auto& w = fewshot_world();
  auto m = w.backbone.clone();
  const auto t = PromptTemplate::parse(kCpTemplate);
  Rng rng(seed);
  auto prompt = ContinuousPrompt::random(t.prompt_length(), m.config().hidden_dim, rng);
  const auto params = fewshot_parameters(m, &prompt);
  AdamState adam;
  adam.lr = kFewShotLr;
  for (std::size_t e = 0; e < kFewShotEpochs; ++e) {
    for (const auto& idx : minibatches(d.train_text.size(), 8, rng)) {
      const auto pb = prompt_rows(t, d.train_text, d.train_labels, w.vocab, idx);
      train_step(params, adam, [&] { return cp_tuning_loss(mask_hiddens(m, pb, &prompt), pb.labels); });
    }
  }
  const auto train_pb = prompt_rows(t, d.train_text, d.train_labels, w.vocab, all_rows(d.train_text.size()));
  const auto centroids = cp_fit_centroids(mask_hiddens(m, train_pb, &prompt), d.train_labels, 2);
  const auto test_pb = prompt_rows(t, d.test_text, {}, w.vocab, all_rows(d.test_text.size()));
  return accuracy(cp_predict(centroids, mask_hiddens(m, test_pb, &prompt)), d.test_labels);
}

Outcome criterion6() {
  std::vector<double> ft, pet, cp;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto d = fewshot_data(seed);
    ft.push_back(run_finetune(d, seed));
    pet.push_back(run_pet(d, seed));
    cp.push_back(run_cp(d, seed));
  }
  const double mf = median(ft), mp = median(pet), mc = median(cp);
  Outcome o;
  o.pass = mc >= mp && mp >= mf - 0.05 && mc >= 0.90;
  o.detail = strf("16-shot medians: CP-Tuning %.3f %s, PET %.3f %s, fine-tuning %.3f %s", mc, list(cp).c_str(), mp,
                  list(pet).c_str(), mf, list(ft).c_str());
  return o;
}

// ---------------------------------------------------------------------------
// 7. MetaKD vs single-domain teacher distillation
// ---------------------------------------------------------------------------

constexpr std::size_t kDomain0Train = 48, kDomain1Train = 16, kTestPerDomain = 200;
constexpr std::size_t kTeacherPretrainEpochs = 3, kStudentPretrainEpochs = 6;

struct DistillWorld {
  Vocabulary vocab;
  LabeledSequences train;
  std::vector<LabeledSequences> test;  // per domain
};

LabeledSequences to_sequences(const std::vector<Record>& rows, const Vocabulary& vocab) {
  LabeledSequences out;
  for (const auto& r : rows) {
    out.seqs.push_back(encode(vocab, r.text("sent"), 24));
    out.labels.push_back(std::stoi(r.text("label")));
    out.domains.push_back(static_cast<std::size_t>(std::get<std::int64_t>(r.values.at("domain").at(0))));
  }
  return out;
}

LabeledSequences domain_subset(const LabeledSequences& all, std::size_t domain) {
  LabeledSequences out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all.domains[i] != domain) continue;
    out.seqs.push_back(all.seqs[i]);
    out.labels.push_back(all.labels[i]);
    out.domains.push_back(domain);
  }
  return out;
}

// Unlabeled reviews from both domains, the vocabulary and MLM-pretrained
// teacher and student backbones, shared by every seed.
struct ReviewBackbones {
  Vocabulary vocab;
  TransformerModel teacher, student;
};

ModelConfig distill_config(const std::string& preset, const Vocabulary& vocab) {
  ModelConfig c = preset_config(preset);
  c.vocab_size = vocab.size();
  c.max_position = 32;
  return c;
}

const ReviewBackbones& review_backbones() {
  static const ReviewBackbones b = [] {
    std::vector<std::string> texts;
    for (const auto& r : make_multidomain_records(1, 1000, 1000)) texts.push_back(r.text("sent"));
    Vocabulary vocab = build_vocab(texts, 1);
    DkplmCorpus corpus;
    for (const auto& t : texts) corpus.seqs.push_back(encode(vocab, t, 24));
    DkplmOptions o;
    o.batch_size = 32;
    o.learning_rate = 1e-3;
    o.inject = false;
    o.seed = 11;
    auto teacher = init_model(distill_config("bert-base-uncased", vocab), 11);
    o.epochs = kTeacherPretrainEpochs;
    train_dkplm(teacher, corpus, vocab, o);
    auto student = init_model(distill_config("bert-small-uncased", vocab), 12);
    o.epochs = kStudentPretrainEpochs;
    train_dkplm(student, corpus, vocab, o);
    return ReviewBackbones{std::move(vocab), std::move(teacher), std::move(student)};
  }();
  return b;
}

DistillWorld distill_world(std::uint64_t seed) {
  const auto train_rows = make_multidomain_records(300 + seed, kDomain0Train, kDomain1Train);
  const auto test_rows = make_multidomain_records(700 + seed, kTestPerDomain, kTestPerDomain);
  DistillWorld w{review_backbones().vocab, {}, {}};
  w.train = to_sequences(train_rows, w.vocab);
  const auto test = to_sequences(test_rows, w.vocab);
  w.test = {domain_subset(test, 0), domain_subset(test, 1)};
  return w;
}

ClassifierTrainOptions teacher_options(std::uint64_t seed) {
  ClassifierTrainOptions o;
  o.epochs = 30;
  o.batch_size = 16;
  o.learning_rate = 1e-3;
  o.seed = seed;
  return o;
}

// Student for one domain; augmented copies of the domain's training rows
// carry the teacher's signal.
double distill_domain(const DistillWorld& w, const TransformerModel& teacher, std::size_t domain, bool meta,
                      double expertise, std::uint64_t seed) {
  const auto own = domain_subset(w.train, domain);
  std::vector<Record> rows;
  for (std::size_t i = 0; i < own.size(); ++i) {
    rows.push_back(Record{{{"sent", {decode(w.vocab, own.seqs[i].ids)}}, {"label", {std::to_string(own.labels[i])}},
                           {"domain", {static_cast<std::int64_t>(domain)}}}});
  }
  const auto augmented = to_sequences(augment_records(rows, {"sent"}, w.vocab, 8, seed), w.vocab);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < augmented.size(); ++i) ids.push_back("row" + std::to_string(i));
  const auto cache = extract_teacher_logits(teacher, augmented, ids);

  auto student = review_backbones().student.clone();
  DistillOptions o;
  o.train = teacher_options(seed);
  o.train.epochs = 20;
  o.train.learning_rate = 2e-3;
  o.meta = meta;
  o.expertise = expertise;
  Tensor proj;
  if (meta) proj = init_projection(student.config().hidden_dim, teacher.config().hidden_dim, seed + 23);
  distill_student(student, meta ? &proj : nullptr, augmented, ids, cache, o);
  return accuracy(predict_classes(student, w.test[domain]), w.test[domain].labels);
}

struct DistillRun {
  double meta_teacher[2];
  double metakd[2];
  double single_kd[2];
  double ratio;
};

DistillRun distill_run(std::uint64_t seed) {
  const auto w = distill_world(seed);
  const auto tcfg = distill_config("bert-base-uncased", w.vocab);
  DistillRun r{};

  // Meta-teacher on both domains with transferability weights from the
  // prototypes of the initial model's pooled features.
  auto meta_teacher = review_backbones().teacher.clone();
  const auto feats = classify_all(meta_teacher, w.train).second;
  const std::size_t d = tcfg.hidden_dim;
  std::vector<std::vector<double>> rows(w.train.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].assign(feats.data().begin() + i * d, feats.data().begin() + (i + 1) * d);
  const auto protos = compute_class_prototypes(rows, w.train.domains, w.train.labels);
  std::vector<double> weights;
  for (std::size_t i = 0; i < rows.size(); ++i)
    weights.push_back(instance_transfer_weight(rows[i], w.train.domains[i], w.train.labels[i], protos));
  train_meta_teacher(meta_teacher, w.train, weights, teacher_options(seed));

  auto student_cfg = distill_config("bert-small-uncased", w.vocab);
  r.ratio = static_cast<double>(parameter_count(student_cfg)) / static_cast<double>(parameter_count(tcfg));

  for (std::size_t dom = 0; dom < 2; ++dom) {
    r.meta_teacher[dom] = accuracy(predict_classes(meta_teacher, w.test[dom]), w.test[dom].labels);
    const double t_d = domain_expertise(meta_teacher, domain_subset(w.train, dom));
    r.metakd[dom] = distill_domain(w, meta_teacher, dom, true, t_d, seed);

    auto single = review_backbones().teacher.clone();
    train_classifier(single, domain_subset(w.train, dom), teacher_options(seed));
    r.single_kd[dom] = distill_domain(w, single, dom, false, 1.0, seed);
  }
  return r;
}

Outcome criterion7() {
  std::vector<double> mt[2], mk[2], sk[2];
  double ratio = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = distill_run(seed);
    for (int d = 0; d < 2; ++d) {
      mt[d].push_back(r.meta_teacher[d]);
      mk[d].push_back(r.metakd[d]);
      sk[d].push_back(r.single_kd[d]);
    }
    ratio = r.ratio;
  }
  Outcome o;
  o.pass = ratio <= 0.25;
  o.detail = strf("student/teacher parameters %.3f", ratio);
  for (int d = 0; d < 2; ++d) {
    const double a = median(mt[d]), b = median(mk[d]), c = median(sk[d]);
    o.pass = o.pass && b >= a - 0.05 && b >= c;
    o.detail += strf("; domain %d medians: meta-teacher %.3f, MetaKD student %.3f %s, single-teacher KD %.3f %s", d, a, b,
                     list(mk[d]).c_str(), c, list(sk[d]).c_str());
  }
  return o;
}

// ---------------------------------------------------------------------------
// 8. exact identities
// ---------------------------------------------------------------------------

Outcome criterion8() {
  Rng rng(88);
  double kd = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = gradcheck::random_tensor({6, 4}, rng, 3.0, false);
    const auto t = gradcheck::random_tensor({6, 4}, rng, 3.0, false);
    std::vector<int> y(6);
    for (auto& v : y) v = static_cast<int>(rng.uniform_int(4));
    KDConfig cfg;
    cfg.temperature = 1.0;
    cfg.alpha = 1.0;
    kd = std::max(kd, std::abs(kd_loss(s, t, y, cfg).item() - cross_entropy(s, y).item()));
  }

  double inj = 0.0;
  {
    const auto vocab = kb_vocab();
    const TripleStore kb({{"new york", "born_in", "paris"}, {"ann", "works_as", "teacher"}});
    const EntityLexicon lexicon(vocab, kb.heads());
    const std::vector<TokenSequence> seqs{encode(vocab, "ann works as a teacher .", 16, lexicon),
                                          encode(vocab, "zed was born in new york .", 16, lexicon)};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto m = perturbed(small_config(vocab.size()), seed);
      const auto pb = build_pretrain_batch(seqs, kb, {}, m, vocab, 0.5, seed);
      std::vector<std::size_t> pos;
      std::vector<int> tgt;
      for (std::size_t i = 0; i < pb.batch.mlm_labels.size(); ++i)
        if (pb.batch.mlm_labels[i] != kIgnoreLabel) {
          pos.push_back(i);
          tgt.push_back(pb.batch.mlm_labels[i]);
        }
      const double plain =
          pos.empty() ? 0.0 : cross_entropy(mlm_logits_at(m, flatten_tokens(encode_sequence(m, pb.batch, false)), pos), tgt).item();
      inj = std::max(inj, std::abs(pretrain_forward_loss(m, pb).item() - plain));
    }
  }

  double prompt = 0.0;
  {
    const auto vocab = review_vocab();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto m = perturbed(small_config(vocab.size()), seed);
      const auto discrete = make_prompt_batch({apply_template(PromptTemplate::parse("{input} it was {mask} ."), {"great movie"}, vocab)});
      const auto slots = make_prompt_batch({apply_template(PromptTemplate::parse("{input} {p*2} {mask} ."), {"great movie"}, vocab)});
      const auto p = ContinuousPrompt::from_tokens(m, {vocab.id("it"), vocab.id("was")});
      const auto a = prompted_forward(m, discrete, nullptr);
      const auto b = prompted_forward(m, slots, &p);
      for (std::size_t i = 0; i < a.size(); ++i) prompt = std::max(prompt, std::abs(a[i] - b[i]));
    }
  }
  Outcome o;
  o.pass = kd <= 1e-12 && inj <= 1e-12 && prompt <= 1e-12;
  o.detail = strf("kd_loss(T=1, alpha=1) vs CE %.1e; zero-injection vs MLM %.1e; continuous vs discrete prompt %.1e", kd,
                  inj, prompt);
  return o;
}

// ---------------------------------------------------------------------------
// 9. CLI conformance
// ---------------------------------------------------------------------------

Outcome criterion9() {
  Outcome o;
  std::vector<std::string> bad;
  const std::vector<std::string> reference_args{
      "--mode=train",
      "--worker_gpu=1",
      "--tables=train.tsv,dev.tsv",
      "--input_schema=sent:str:1,label:str:1",
      "--first_sequence=sent",
      "--label_name=label",
      "--label_enumerate_values=0,1",
      "--checkpoint_dir=./classification_model",
      "--epoch_num=1",
      "--sequence_length=128",
      "--app_name=text_classify",
      "--user_defined_parameters=pretrain_model_name_or_path=bert-small-uncased",
  };
  const auto c = parse_cli(reference_args);
  auto expect = [&](bool ok, const char* what) {
    if (!ok) bad.emplace_back(what);
  };
  expect(c.mode == RunMode::train, "mode");
  expect(c.worker_gpu == std::optional<std::string>("1"), "worker_gpu");
  expect(c.tables == std::vector<std::string>{"train.tsv", "dev.tsv"}, "tables");
  expect(c.input_schema == "sent:str:1,label:str:1", "input_schema");
  expect(c.first_sequence == "sent" && c.second_sequence.empty(), "first_sequence");
  expect(c.label_name == "label", "label_name");
  expect(c.label_enumerate_values == std::vector<std::string>{"0", "1"}, "label_enumerate_values");
  expect(c.checkpoint_dir == "./classification_model", "checkpoint_dir");
  expect(c.epoch_num == 1 && c.sequence_length == 128, "epoch_num/sequence_length");
  expect(c.app_name == "text_classify", "app_name");
  expect(c.user_defined_parameters == std::map<std::string, std::string>{{"pretrain_model_name_or_path", "bert-small-uncased"}},
         "user_defined_parameters");
  expect(c.learning_rate == 3e-5 && c.batch_size == 16 && c.seed == 42, "defaults");

  // Byte round trip of a checkpoint.
  const fs::path dir = scratch().root / "conformance";
  const auto m = perturbed(small_config(review_vocab().size()), 9);
  save_checkpoint(m, dir / "a");
  const auto back = load_checkpoint(dir / "a");
  save_checkpoint(back, dir / "b");
  const bool round_trip = file_bytes(dir / "a" / "model.bin") == file_bytes(dir / "b" / "model.bin") &&
                          file_bytes(dir / "a" / "config.json") == file_bytes(dir / "b" / "config.json") &&
                          serialize_model(deserialize_model(serialize_model(m))) == serialize_model(m);
  expect(round_trip, "checkpoint round trip");

  // Two seeded reference runs (3 epochs) must write identical directories.
  std::vector<std::string> files;
  in_directory(dir, [&] {
    export_split("toy-tnews", "train", "train.tsv");
    export_split("toy-tnews", "dev", "dev.tsv");
    std::vector<std::string> args = reference_args;
    args[8] = "--epoch_num=3";
    std::map<std::string, std::string> first;
    for (int run = 0; run < 2; ++run) {
      if (cli(args) != 0) {
        bad.emplace_back("train run");
        return 0;
      }
      for (const auto& e : fs::directory_iterator("classification_model")) {
        const auto name = e.path().filename().string();
        if (run == 0) {
          first[name] = file_bytes(e.path());
        } else {
          files.push_back(name);
          expect(first.count(name) && first[name] == file_bytes(e.path()), "rerun bytes");
        }
      }
      if (run == 1) expect(first.size() == files.size(), "rerun file set");
    }
    return 0;
  });
  std::sort(files.begin(), files.end());
  std::string names;
  for (const auto& f : files) names += (names.empty() ? "" : ",") + f;
  o.pass = bad.empty();
  o.detail = std::string("reference argv parsed, 12 fields checked; checkpoint round trip ") + (round_trip ? "byte-identical" : "DIFFERS") + "; rerun compared " + names;
  for (const auto& b : bad) o.detail += "; mismatch: " + b;
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient suite", 120, criterion1},
      {2, "oracle equivalence", 60, criterion2},
      {3, "overfit via the reference command", 60, criterion3},
      {4, "knowledge injection probe", 600, criterion4},
      {5, "parameter identity", 120, criterion5},
      {6, "16-shot prompt learning", 300, criterion6},
      {7, "MetaKD distillation", 600, criterion7},
      {8, "exact identities", 60, criterion8},
      {9, "CLI conformance", 120, criterion9},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  bool all_pass = true;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > c.budget_seconds) {
      o.pass = false;
      o.detail += strf("; over the %.0f s budget", c.budget_seconds);
    }
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail
              << strf(" [%.1f s]", secs) << std::endl;
  }
  return all_pass ? 0 : 1;
}
