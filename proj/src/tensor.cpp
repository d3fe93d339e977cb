#include "easynlp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "easynlp/errors.hpp"
#include "easynlp/rng.hpp"

namespace easynlp {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  auto impl = std::make_shared<TensorStorage>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

Tensor Tensor::clone() const { return from_data(impl_->shape, impl_->data, impl_->requires_grad); }

Tensor Tensor::detach() const { return from_data(impl_->shape, impl_->data, false); }

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.size() != 1) {
    throw DomainError("backward needs a scalar loss, got shape " +
                      (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
  }
  const auto& nodes = tape.nodes();
  std::size_t last = nodes.size();
  for (std::size_t i = nodes.size(); i-- > 0;) {
    if (nodes[i].output.id() == loss.id()) {
      last = i;
      break;
    }
  }
  if (last == nodes.size()) throw DomainError("loss was not recorded on the tape");

  for (std::size_t i = 0; i <= last; ++i) Tensor(nodes[i].output).zero_grad();
  Tensor(loss).mutable_grad()[0] = 1.0;
  for (std::size_t i = last + 1; i-- > 0;) nodes[i].backward(nodes[i]);
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

namespace {

using Backward = std::function<void(const Tape::Node&)>;

Tensor finish(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
              Backward rule) {
  for (double v : data) {
    if (!std::isfinite(v)) throw DomainError(std::string(op) + " produced a non-finite value");
  }
  Tensor out = Tensor::from_data(std::move(shape), std::move(data));
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  const bool track = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!track) return out;
  out.set_requires_grad(true);
  tape->record({std::move(inputs), out, std::move(rule)});
  return out;
}

// Gradient slot of input i, or an empty span when it does not need one.
std::span<double> grad_of(const Tape::Node& node, std::size_t i) {
  Tensor t = node.inputs[i];
  if (!t.requires_grad()) return {};
  return t.mutable_grad();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " differ");
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(a.shape()));
  }
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return finish("add", a.shape(), std::move(out), {a, b}, [](const Tape::Node& n) {
    const auto g = n.output.grad();
    for (std::size_t k = 0; k < 2; ++k) {
      auto gi = grad_of(n, k);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return finish("sub", a.shape(), std::move(out), {a, b}, [](const Tape::Node& n) {
    const auto g = n.output.grad();
    auto ga = grad_of(n, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = grad_of(n, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return finish("mul", a.shape(), std::move(out), {a, b}, [](const Tape::Node& n) {
    const auto g = n.output.grad();
    const auto& a = n.inputs[0];
    const auto& b = n.inputs[1];
    auto ga = grad_of(n, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b[i];
    auto gb = grad_of(n, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * a[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return finish("scale", a.shape(), std::move(out), {a}, [factor](const Tape::Node& n) {
    const auto g = n.output.grad();
    auto ga = grad_of(n, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + value;
  return finish("add_scalar", a.shape(), std::move(out), {a}, [](const Tape::Node& n) {
    const auto g = n.output.grad();
    auto ga = grad_of(n, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", bias, 1);
  if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match " +
                         shape_to_string(x.shape()));
  }
  const std::size_t d = bias.dim(0);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % d];
  return finish("add_bias", x.shape(), std::move(out), {x, bias}, [d](const Tape::Node& n) {
    const auto g = n.output.grad();
    auto gx = grad_of(n, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    auto gb = grad_of(n, 1);
    if (!gb.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Products and layout
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return finish("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](const Tape::Node& node) {
    const auto G = node.output.grad();
    const auto A = node.inputs[0].data();
    const auto B = node.inputs[1].data();
    auto gA = grad_of(node, 0);
    if (!gA.empty()) {
      std::vector<double> bt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
      for (std::size_t i = 0; i < m; ++i) {
        double* row = &gA[i * k];
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          if (g == 0.0) continue;
          const double* brow = &bt[j * k];
          for (std::size_t p = 0; p < k; ++p) row[p] += g * brow[p];
        }
      }
    }
    auto gB = grad_of(node, 1);
    if (!gB.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += av * G[i * n + j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return finish("transpose", {c, r}, std::move(out), {a}, [r, c](const Tape::Node& n) {
    const auto g = n.output.grad();
    auto ga = grad_of(n, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                  a.dim(2) == (transpose_b ? b.dim(2) : b.dim(1));
  if (!ok) {
    throw DimensionError("batched_matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()) + (transpose_b ? "^T" : ""));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t s = 0; s < batch; ++s) {
    const double* As = &A[s * m * k];
    const double* Bs = &B[s * k * n];
    double* Cs = &out[s * m * n];
    for (std::size_t i = 0; i < m; ++i) {
      if (transpose_b) {
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t p = 0; p < k; ++p) acc += As[i * k + p] * Bs[j * k + p];
          Cs[i * n + j] = acc;
        }
      } else {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = As[i * k + p];
          for (std::size_t j = 0; j < n; ++j) Cs[i * n + j] += av * Bs[p * n + j];
        }
      }
    }
  }
  return finish("batched_matmul", {batch, m, n}, std::move(out), {a, b},
                [batch, m, k, n, transpose_b](const Tape::Node& node) {
                  const auto G = node.output.grad();
                  const auto A = node.inputs[0].data();
                  const auto B = node.inputs[1].data();
                  auto gA = grad_of(node, 0);
                  auto gB = grad_of(node, 1);
                  for (std::size_t s = 0; s < batch; ++s) {
                    const double* Gs = &G[s * m * n];
                    const double* As = &A[s * m * k];
                    const double* Bs = &B[s * k * n];
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t j = 0; j < n; ++j) {
                        const double g = Gs[i * n + j];
                        if (g == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p) {
                          const std::size_t bidx = transpose_b ? j * k + p : p * n + j;
                          if (!gA.empty()) gA[s * m * k + i * k + p] += g * Bs[bidx];
                          if (!gB.empty()) gB[s * k * n + bidx] += g * As[i * k + p];
                        }
                      }
                    }
                  }
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_to_string(a.shape()) + " to " + shape_to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return finish("reshape", std::move(shape), std::move(out), {a}, [](const Tape::Node& n) {
    const auto g = n.output.grad();
    auto ga = grad_of(n, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Tensor swap_middle_axes(const Tensor& a) {
  require_rank("swap_middle_axes", a, 4);
  const std::size_t A = a.dim(0), B = a.dim(1), C = a.dim(2), D = a.dim(3);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < B; ++j)
      for (std::size_t k = 0; k < C; ++k) {
        const double* src = &a.data()[((i * B + j) * C + k) * D];
        double* dst = &out[((i * C + k) * B + j) * D];
        std::copy(src, src + D, dst);
      }
  return finish("swap_middle_axes", {A, C, B, D}, std::move(out), {a}, [A, B, C, D](const Tape::Node& n) {
    const auto g = n.output.grad();
    auto ga = grad_of(n, 0);
    for (std::size_t i = 0; i < A; ++i)
      for (std::size_t j = 0; j < B; ++j)
        for (std::size_t k = 0; k < C; ++k)
          for (std::size_t l = 0; l < D; ++l)
            ga[((i * B + j) * C + k) * D + l] += g[((i * C + k) * B + j) * D + l];
  });
}

// ---------------------------------------------------------------------------
// Normalization and activations
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw IndexError("softmax axis " + std::to_string(axis) + " out of range for " + shape_to_string(x.shape()));
  }
  const auto s = split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  const auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = X[base];
      for (std::size_t a = 1; a < s.len; ++a) mx = std::max(mx, X[base + a * s.inner]);
      double total = 0.0;
      for (std::size_t a = 0; a < s.len; ++a) {
        const double e = std::exp(X[base + a * s.inner] - mx);
        out[base + a * s.inner] = e;
        total += e;
      }
      for (std::size_t a = 0; a < s.len; ++a) out[base + a * s.inner] /= total;
    }
  }
  return finish("softmax", x.shape(), std::move(out), {x}, [s](const Tape::Node& n) {
    const auto g = n.output.grad();
    const auto y = n.output.data();
    auto gx = grad_of(n, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t a = 0; a < s.len; ++a) dot += y[base + a * s.inner] * g[base + a * s.inner];
        for (std::size_t a = 0; a < s.len; ++a) {
          const std::size_t idx = base + a * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw IndexError("log_softmax axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(x.shape()));
  }
  const auto s = split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  const auto X = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = X[base];
      for (std::size_t a = 1; a < s.len; ++a) mx = std::max(mx, X[base + a * s.inner]);
      double total = 0.0;
      for (std::size_t a = 0; a < s.len; ++a) total += std::exp(X[base + a * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t a = 0; a < s.len; ++a) out[base + a * s.inner] = X[base + a * s.inner] - lse;
    }
  }
  return finish("log_softmax", x.shape(), std::move(out), {x}, [s](const Tape::Node& n) {
    const auto g = n.output.grad();
    const auto y = n.output.data();
    auto gx = grad_of(n, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double gsum = 0.0;
        for (std::size_t a = 0; a < s.len; ++a) gsum += g[base + a * s.inner];
        for (std::size_t a = 0; a < s.len; ++a) {
          const std::size_t idx = base + a * s.inner;
          gx[idx] += g[idx] - std::exp(y[idx]) * gsum;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank("layer_norm gamma", gamma, 1);
  require_same_shape("layer_norm gamma/beta", gamma, beta);
  if (x.rank() == 0 || x.shape().back() != gamma.dim(0)) {
    throw DimensionError("layer_norm: last dimension of " + shape_to_string(x.shape()) + " is not " +
                         std::to_string(gamma.dim(0)));
  }
  if (!(eps > 0.0)) throw DomainError("layer_norm eps must be positive");
  const std::size_t d = gamma.dim(0);
  const std::size_t rows = x.size() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  const auto X = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &X[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gamma[j] * h + beta[j];
    }
  }
  return finish("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                [d, rows, xhat, rstd](const Tape::Node& n) {
                  const auto g = n.output.grad();
                  const auto& gamma = n.inputs[1];
                  auto gx = grad_of(n, 0);
                  auto gg = grad_of(n, 1);
                  auto gb = grad_of(n, 2);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = &g[r * d];
                    const double* hr = &(*xhat)[r * d];
                    if (!gg.empty())
                      for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
                    if (!gb.empty())
                      for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
                    if (gx.empty()) continue;
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dh = gr[j] * gamma[j];
                      mean_dh += dh;
                      mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= static_cast<double>(d);
                    mean_dh_h /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dh = gr[j] * gamma[j];
                      gx[r * d + j] += (*rstd)[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                  }
                });
}

namespace {
constexpr double kGeluCubic = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / M_PI);
}  // namespace

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kGeluCubic * v * v * v)));
  }
  return finish("gelu", x.shape(), std::move(out), {x}, [](const Tape::Node& n) {
    const auto g = n.output.grad();
    const auto& x = n.inputs[0];
    auto gx = grad_of(n, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = x[i];
      const double t = std::tanh(kSqrt2OverPi * (v + kGeluCubic * v * v * v));
      const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * v * v);
      gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
}

Tensor tanh_activation(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return finish("tanh", x.shape(), std::move(out), {x}, [](const Tape::Node& n) {
    const auto g = n.output.grad();
    const auto y = n.output.data();
    auto gx = grad_of(n, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return finish("relu", x.shape(), std::move(out), {x}, [](const Tape::Node& n) {
    const auto g = n.output.grad();
    const auto& x = n.inputs[0];
    auto gx = grad_of(n, 0);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (x[i] > 0.0) gx[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return finish("sum", {}, {total}, {x}, [](const Tape::Node& n) {
    const double g = n.output.grad()[0];
    auto gx = grad_of(n, 0);
    for (double& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DomainError("mean of an empty tensor");
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double count = static_cast<double>(x.size());
  return finish("mean", {}, {total / count}, {x}, [count](const Tape::Node& n) {
    const double g = n.output.grad()[0] / count;
    auto gx = grad_of(n, 0);
    for (double& v : gx) v += g;
  });
}

// ---------------------------------------------------------------------------
// Row selection
// ---------------------------------------------------------------------------

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank("gather_rows", x, 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw IndexError("row " + std::to_string(rows[i]) + " out of range for " + shape_to_string(x.shape()));
    }
    std::copy_n(&x.data()[rows[i] * d], d, &out[i * d]);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return finish("gather_rows", {rows.size(), d}, std::move(out), {x}, [idx, d](const Tape::Node& node) {
    const auto g = node.output.grad();
    auto gx = grad_of(node, 0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gx[idx[i] * d + j] += g[i * d + j];
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_rank("embedding_lookup", table, 2);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.dim(0)) {
      throw IndexError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                       std::to_string(table.dim(0)));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, rows);
}

Tensor scatter_rows(const Tensor& base, std::span<const std::size_t> rows, const Tensor& values) {
  require_rank("scatter_rows", base, 2);
  require_rank("scatter_rows values", values, 2);
  const std::size_t d = base.dim(1);
  if (values.dim(0) != rows.size() || values.dim(1) != d) {
    throw DimensionError("scatter_rows: " + std::to_string(rows.size()) + " rows but values are " +
                         shape_to_string(values.shape()));
  }
  std::vector<double> out(base.data().begin(), base.data().end());
  std::vector<char> replaced(base.dim(0), 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= base.dim(0)) {
      throw IndexError("row " + std::to_string(rows[i]) + " out of range for " + shape_to_string(base.shape()));
    }
    if (replaced[rows[i]]) throw IndexError("row " + std::to_string(rows[i]) + " replaced twice");
    replaced[rows[i]] = 1;
    std::copy_n(&values.data()[i * d], d, &out[rows[i] * d]);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return finish("scatter_rows", base.shape(), std::move(out), {base, values},
                [idx, d, replaced = std::move(replaced)](const Tape::Node& node) {
                  const auto g = node.output.grad();
                  auto gb = grad_of(node, 0);
                  if (!gb.empty()) {
                    for (std::size_t r = 0; r < replaced.size(); ++r) {
                      if (replaced[r]) continue;
                      for (std::size_t j = 0; j < d; ++j) gb[r * d + j] += g[r * d + j];
                    }
                  }
                  auto gv = grad_of(node, 1);
                  if (!gv.empty()) {
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      for (std::size_t j = 0; j < d; ++j) gv[i * d + j] += g[idx[i] * d + j];
                  }
                });
}

Tensor segment_mean(const Tensor& x, const std::vector<std::vector<std::size_t>>& groups) {
  require_rank("segment_mean", x, 2);
  const std::size_t d = x.dim(1);
  std::vector<double> out(groups.size() * d, 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw DomainError("segment_mean: group " + std::to_string(g) + " is empty");
    for (std::size_t r : groups[g]) {
      if (r >= x.dim(0)) throw IndexError("row " + std::to_string(r) + " out of range in segment_mean");
      for (std::size_t j = 0; j < d; ++j) out[g * d + j] += x[r * d + j];
    }
    const double inv = 1.0 / static_cast<double>(groups[g].size());
    for (std::size_t j = 0; j < d; ++j) out[g * d + j] *= inv;
  }
  return finish("segment_mean", {groups.size(), d}, std::move(out), {x}, [groups, d](const Tape::Node& node) {
    const auto gout = node.output.grad();
    auto gx = grad_of(node, 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double inv = 1.0 / static_cast<double>(groups[g].size());
      for (std::size_t r : groups[g])
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += gout[g * d + j] * inv;
    }
  });
}

Tensor select_columns(const Tensor& x, std::span<const std::size_t> columns) {
  require_rank("select_columns", x, 2);
  const std::size_t n = x.dim(0), v = x.dim(1), k = columns.size();
  for (std::size_t c : columns) {
    if (c >= v) throw IndexError("column " + std::to_string(c) + " out of range for " + shape_to_string(x.shape()));
  }
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = x[i * v + columns[j]];
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  return finish("select_columns", {n, k}, std::move(out), {x}, [cols, n, v](const Tape::Node& node) {
    const auto g = node.output.grad();
    auto gx = grad_of(node, 0);
    const std::size_t k = cols.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) gx[i * v + cols[j]] += g[i * k + j];
  });
}

Tensor normalize_rows(const Tensor& x) {
  require_rank("normalize_rows", x, 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  auto norms = std::make_shared<std::vector<double>>(n);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += x[i * d + j] * x[i * d + j];
    const double nrm = std::sqrt(sq);
    (*norms)[i] = nrm;
    if (nrm == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] / nrm;
  }
  return finish("normalize_rows", x.shape(), std::move(out), {x}, [n, d, norms](const Tape::Node& node) {
    const auto g = node.output.grad();
    const auto y = node.output.data();
    auto gx = grad_of(node, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const double nrm = (*norms)[i];
      if (nrm == 0.0) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += y[i * d + j] * g[i * d + j];
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += (g[i * d + j] - y[i * d + j] * dot) / nrm;
    }
  });
}

// ---------------------------------------------------------------------------
// Attention masking, dropout, losses
// ---------------------------------------------------------------------------

Tensor mask_keys(const Tensor& scores, std::span<const int> key_mask, std::size_t heads) {
  require_rank("mask_keys", scores, 3);
  const std::size_t bh = scores.dim(0), lq = scores.dim(1), lk = scores.dim(2);
  if (heads == 0 || bh % heads != 0 || key_mask.size() != (bh / heads) * lk) {
    throw DimensionError("mask_keys: mask of " + std::to_string(key_mask.size()) + " entries vs scores " +
                         shape_to_string(scores.shape()));
  }
  std::vector<char> keep(scores.size());
  std::vector<double> out(scores.size());
  for (std::size_t s = 0; s < bh; ++s) {
    const std::size_t b = s / heads;
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t j = 0; j < lk; ++j) {
        const std::size_t idx = (s * lq + i) * lk + j;
        keep[idx] = key_mask[b * lk + j] != 0;
        out[idx] = keep[idx] ? scores[idx] : kMaskedLogit;
      }
  }
  return finish("mask_keys", scores.shape(), std::move(out), {scores}, [keep = std::move(keep)](const Tape::Node& n) {
    const auto g = n.output.grad();
    auto gx = grad_of(n, 0);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (keep[i]) gx[i] += g[i];
  });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw DomainError("dropout probability must lie in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() >= p ? keep_scale : 0.0;
    out[i] = x[i] * mask[i];
  }
  return finish("dropout", x.shape(), std::move(out), {x}, [mask = std::move(mask)](const Tape::Node& n) {
    const auto g = n.output.grad();
    auto gx = grad_of(n, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

namespace {

// Row-wise softmax probabilities and per-row CE. Rows with ignore targets get
// loss 0 and are flagged inactive.
struct CrossEntropyRows {
  std::vector<double> probs;
  std::vector<double> losses;
  std::vector<char> active;
};

CrossEntropyRows cross_entropy_core(const Tensor& logits, std::span<const int> targets, int ignore_index,
                                    bool allow_ignore) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0) throw DomainError("cross_entropy on an empty batch");
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_to_string(logits.shape()));
  }
  CrossEntropyRows r{std::vector<double>(n * k), std::vector<double>(n, 0.0), std::vector<char>(n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (allow_ignore && t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw IndexError("target " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
    }
    r.active[i] = 1;
    const double* row = &logits.data()[i * k];
    const double mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(row[j] - mx);
      r.probs[i * k + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < k; ++j) r.probs[i * k + j] /= total;
    r.losses[i] = mx + std::log(total) - row[t];
  }
  return r;
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  auto core = cross_entropy_core(logits, targets, 0, false);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (double l : core.losses) total += l;
  std::vector<int> t(targets.begin(), targets.end());
  auto probs = std::make_shared<std::vector<double>>(std::move(core.probs));
  return finish("cross_entropy", {}, {total / static_cast<double>(n)}, {logits},
                [probs, t = std::move(t), n, k](const Tape::Node& node) {
                  const double g = node.output.grad()[0] / static_cast<double>(n);
                  auto gx = grad_of(node, 0);
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g * (*probs)[i * k + j];
                    gx[i * k + static_cast<std::size_t>(t[i])] -= g;
                  }
                });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  auto core = cross_entropy_core(logits, targets, ignore_index, true);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> t(targets.begin(), targets.end());
  auto probs = std::make_shared<std::vector<double>>(std::move(core.probs));
  return finish("cross_entropy_rows", {n}, std::move(core.losses), {logits},
                [probs, active = std::move(core.active), t = std::move(t), n, k](const Tape::Node& node) {
                  const auto g = node.output.grad();
                  auto gx = grad_of(node, 0);
                  for (std::size_t i = 0; i < n; ++i) {
                    if (!active[i]) continue;
                    for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[i] * (*probs)[i * k + j];
                    gx[i * k + static_cast<std::size_t>(t[i])] -= g[i];
                  }
                });
}

}  // namespace easynlp
