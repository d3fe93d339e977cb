#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace easynlp {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

/// Dense row-major float64 tensor with an optional gradient slot.
///
/// Tensors are handles: copying a Tensor aliases the same storage, which is
/// what lets the tape route gradients back to parameters. Use clone() for a
/// deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();  // allocates zeros on first use
  void zero_grad();                  // allocates if needed, then fills 0
  void clear_grad() { impl_->grad.clear(); }

  Tensor clone() const;   // deep copy, keeps requires_grad, drops grad
  Tensor detach() const;  // deep copy with requires_grad = false

  const TensorStorage* id() const { return impl_.get(); }
  TensorStorage& storage() const { return *impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorStorage> impl_;
};

/// Define-by-run record of differentiable operations.
///
/// Operations record onto the tape that is active on the calling thread (see
/// TapeScope) whenever at least one input requires a gradient. Nodes are
/// appended in execution order, so the list is topologically sorted.
class Tape {
 public:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    // Reads output.grad(), accumulates into the inputs that require grad.
    std::function<void(const Node&)> backward;
  };

  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<Node> nodes_;
};

/// Makes `tape` the active tape for the current thread for the scope's
/// lifetime. Scopes nest.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Reverse pass from a scalar loss. Gradients of tape-internal tensors are
/// reset at the start of each call; leaf gradients accumulate, so running
/// twice without zeroing doubles every leaf gradient.
void backward(const Tensor& loss, Tape& tape);

// ---------------------------------------------------------------------------
// Differentiable operations. Shapes in comments use n rows, d columns.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// x [..., d] + bias [d]
Tensor add_bias(const Tensor& x, const Tensor& bias);

// [m×k] × [k×n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// [B×m×k] × [B×k×n], or [B×m×k] × [B×n×k]ᵀ when transpose_b is set
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor reshape(const Tensor& a, Shape shape);
// [A×B×C×D] -> [A×C×B×D]
Tensor swap_middle_axes(const Tensor& a);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
// The exact form is 0.5 x (1 + erf(x / sqrt 2)); the two differ by < 1e-3.
Tensor gelu(const Tensor& x);
Tensor tanh_activation(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Row gather from a [V×d] table; the error message names the offending id.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// Copy of base [N×d] with base[rows[i]] replaced by values[i].
Tensor scatter_rows(const Tensor& base, std::span<const std::size_t> rows, const Tensor& values);
// [N×d] -> [G×d]; output row g is the mean of base rows in groups[g].
Tensor segment_mean(const Tensor& x, const std::vector<std::vector<std::size_t>>& groups);
// [N×V] -> [N×K] keeping the listed columns in order.
Tensor select_columns(const Tensor& x, std::span<const std::size_t> columns);
// L2-normalizes every row of [N×d]; zero rows stay zero.
Tensor normalize_rows(const Tensor& x);

// scores [B·H × L × L]; key_mask [B × L] with 1 = attend. Masked key logits
// are replaced by kMaskedLogit, which underflows to exactly 0 after softmax.
inline constexpr double kMaskedLogit = -1e9;
Tensor mask_keys(const Tensor& scores, std::span<const int> key_mask, std::size_t heads);

// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
// Per-row losses [N]; rows whose target equals ignore_index get 0.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets, int ignore_index = -100);

}  // namespace easynlp
