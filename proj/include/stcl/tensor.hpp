#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stcl/rng.hpp"

namespace stcl {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), size_t{1}, std::multiplies<>());
}

struct TensorData {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Dense row-major f64 tensor with shared storage. Copies are shallow; ops
// always allocate fresh outputs, so tensors are immutable once produced.
class Tensor {
 public:
  Tensor() : p_(std::make_shared<TensorData>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.p_->shape = std::move(shape);
    t.p_->data.assign(shape_numel(t.p_->shape), 0.0);
    t.p_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.p_->data.begin(), t.p_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("tensor init: " + shape_str(shape) + " needs " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    Tensor t;
    t.p_->shape = std::move(shape);
    t.p_->data = std::move(values);
    t.p_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor identity(size_t n) {
    Tensor t = zeros({n, n});
    for (size_t i = 0; i < n; ++i) t.p_->data[i * n + i] = 1.0;
    return t;
  }

  static Tensor uniform(Shape shape, double lo, double hi, RngStream& rng,
                        bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.p_->data) v = rng.next_uniform(lo, hi);
    return t;
  }

  // Glorot-style fan-based init for weights.
  static Tensor glorot(Shape shape, size_t fan_in, size_t fan_out,
                       RngStream& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform(std::move(shape), -limit, limit, rng, true);
  }

  const Shape& shape() const { return p_->shape; }
  size_t rank() const { return p_->shape.size(); }
  size_t numel() const { return p_->data.size(); }
  size_t extent(size_t axis) const { return p_->shape.at(axis); }

  const std::vector<double>& data() const { return p_->data; }
  std::vector<double>& mutable_data() { return p_->data; }
  const std::vector<double>& grad() const { return p_->grad; }
  std::vector<double>& mutable_grad() { p_->ensure_grad(); return p_->grad; }
  bool has_grad() const { return !p_->grad.empty(); }
  void zero_grad() { std::fill(p_->grad.begin(), p_->grad.end(), 0.0); }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool v) { p_->requires_grad = v; }

  double value() const {
    if (numel() != 1) throw ShapeError("value(): tensor " + shape_str(shape()) + " is not scalar");
    return p_->data[0];
  }

  double at(std::initializer_list<size_t> idx) const {
    return p_->data[offset(idx)];
  }
  void set(std::initializer_list<size_t> idx, double v) {
    p_->data[offset(idx)] = v;
  }

  bool same_shape(const Tensor& o) const { return p_->shape == o.p_->shape; }
  bool finite() const {
    return std::all_of(p_->data.begin(), p_->data.end(),
                       [](double v) { return std::isfinite(v); });
  }

  std::shared_ptr<TensorData> impl() const { return p_; }

 private:
  size_t offset(std::initializer_list<size_t> idx) const {
    if (idx.size() != p_->shape.size())
      throw ShapeError("index rank mismatch for " + shape_str(p_->shape));
    size_t off = 0;
    size_t axis = 0;
    for (size_t i : idx) {
      if (i >= p_->shape[axis]) throw ShapeError("index out of range");
      off = off * p_->shape[axis] + i;
      ++axis;
    }
    return off;
  }

  std::shared_ptr<TensorData> p_;
};

// Records forward ops; replaying the rules in reverse yields reverse-mode
// gradients. Node grads are reset at the start of each backward pass, leaf
// parameter grads accumulate across passes until zeroed by the caller.
class Tape {
 public:
  struct Node {
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::shared_ptr<TensorData> output;
    std::function<void(Node&)> backward;
  };

  void record(std::vector<Tensor> inputs, Tensor output,
              std::function<void(Node&)> backward) {
    Node n;
    n.inputs.reserve(inputs.size());
    for (auto& t : inputs) n.inputs.push_back(t.impl());
    n.output = output.impl();
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
  }

  void backward(const Tensor& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    for (auto& n : nodes_) {
      n.output->ensure_grad();
      if (!n.output->requires_grad)
        std::fill(n.output->grad.begin(), n.output->grad.end(), 0.0);
    }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      it->backward(*it);
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

namespace detail {
inline std::vector<double>& in_grad(Tape::Node& n, size_t i) {
  n.inputs[i]->ensure_grad();
  return n.inputs[i]->grad;
}
inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}
}  // namespace detail

// ---- differentiable ops ----------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const size_t M = a.extent(0), K = a.extent(1), N = b.extent(1);
  Tensor c = Tensor::zeros({M, N});
  const auto& A = a.data();
  const auto& B = b.data();
  auto& C = c.mutable_data();
  for (size_t i = 0; i < M; ++i)
    for (size_t k = 0; k < K; ++k) {
      double av = A[i * K + k];
      if (av == 0.0) continue;
      for (size_t j = 0; j < N; ++j) C[i * N + j] += av * B[k * N + j];
    }
  tape.record({a, b}, c, [M, K, N](Tape::Node& n) {
    const auto& dC = n.output->grad;
    const auto& A = n.inputs[0]->data;
    const auto& B = n.inputs[1]->data;
    auto& dA = detail::in_grad(n, 0);
    auto& dB = detail::in_grad(n, 1);
    for (size_t i = 0; i < M; ++i)
      for (size_t j = 0; j < N; ++j) {
        double g = dC[i * N + j];
        if (g == 0.0) continue;
        for (size_t k = 0; k < K; ++k) {
          dA[i * K + k] += g * B[k * N + j];
          dB[k * N + j] += A[i * K + k] * g;
        }
      }
  });
  return c;
}

// C = A * B^T with A [M x K], B [N x K].
inline Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(1))
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const size_t M = a.extent(0), K = a.extent(1), N = b.extent(0);
  Tensor c = Tensor::zeros({M, N});
  const auto& A = a.data();
  const auto& B = b.data();
  auto& C = c.mutable_data();
  for (size_t i = 0; i < M; ++i)
    for (size_t j = 0; j < N; ++j) {
      double s = 0;
      for (size_t k = 0; k < K; ++k) s += A[i * K + k] * B[j * K + k];
      C[i * N + j] = s;
    }
  tape.record({a, b}, c, [M, K, N](Tape::Node& n) {
    const auto& dC = n.output->grad;
    const auto& A = n.inputs[0]->data;
    const auto& B = n.inputs[1]->data;
    auto& dA = detail::in_grad(n, 0);
    auto& dB = detail::in_grad(n, 1);
    for (size_t i = 0; i < M; ++i)
      for (size_t j = 0; j < N; ++j) {
        double g = dC[i * N + j];
        if (g == 0.0) continue;
        for (size_t k = 0; k < K; ++k) {
          dA[i * K + k] += g * B[j * K + k];
          dB[j * K + k] += g * A[i * K + k];
        }
      }
  });
  return c;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor c = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.numel(); ++i)
    c.mutable_data()[i] = a.data()[i] + b.data()[i];
  tape.record({a, b}, c, [](Tape::Node& n) {
    const auto& dC = n.output->grad;
    auto& dA = detail::in_grad(n, 0);
    auto& dB = detail::in_grad(n, 1);
    for (size_t i = 0; i < dC.size(); ++i) {
      dA[i] += dC[i];
      dB[i] += dC[i];
    }
  });
  return c;
}

// x [... x d] + bias [d], broadcast over leading axes.
inline Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || x.shape().back() != bias.extent(0))
    throw ShapeError("add_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const size_t d = bias.extent(0);
  const size_t rows = x.numel() / d;
  Tensor c = Tensor::zeros(x.shape());
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < d; ++j)
      c.mutable_data()[r * d + j] = x.data()[r * d + j] + bias.data()[j];
  tape.record({x, bias}, c, [rows, d](Tape::Node& n) {
    const auto& dC = n.output->grad;
    auto& dX = detail::in_grad(n, 0);
    auto& dB = detail::in_grad(n, 1);
    for (size_t r = 0; r < rows; ++r)
      for (size_t j = 0; j < d; ++j) {
        dX[r * d + j] += dC[r * d + j];
        dB[j] += dC[r * d + j];
      }
  });
  return c;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor c = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.numel(); ++i)
    c.mutable_data()[i] = a.data()[i] * b.data()[i];
  tape.record({a, b}, c, [](Tape::Node& n) {
    const auto& dC = n.output->grad;
    const auto& A = n.inputs[0]->data;
    const auto& B = n.inputs[1]->data;
    auto& dA = detail::in_grad(n, 0);
    auto& dB = detail::in_grad(n, 1);
    for (size_t i = 0; i < dC.size(); ++i) {
      dA[i] += dC[i] * B[i];
      dB[i] += dC[i] * A[i];
    }
  });
  return c;
}

inline Tensor scale(Tape& tape, const Tensor& a, double s) {
  Tensor c = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.numel(); ++i) c.mutable_data()[i] = a.data()[i] * s;
  tape.record({a}, c, [s](Tape::Node& n) {
    const auto& dC = n.output->grad;
    auto& dA = detail::in_grad(n, 0);
    for (size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i] * s;
  });
  return c;
}

inline Tensor relu(Tape& tape, const Tensor& a) {
  Tensor c = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.numel(); ++i)
    c.mutable_data()[i] = std::max(0.0, a.data()[i]);
  tape.record({a}, c, [](Tape::Node& n) {
    const auto& dC = n.output->grad;
    const auto& A = n.inputs[0]->data;
    auto& dA = detail::in_grad(n, 0);
    for (size_t i = 0; i < dC.size(); ++i)
      if (A[i] > 0.0) dA[i] += dC[i];
  });
  return c;
}

enum class Mode { kTrain, kEval };

// Inverted dropout: eval mode is exactly identity.
inline Tensor dropout(Tape& tape, const Tensor& a, double rate, Mode mode,
                      RngStream& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::kEval || rate == 0.0) {
    Tensor c = Tensor::zeros(a.shape());
    c.mutable_data() = a.data();
    tape.record({a}, c, [](Tape::Node& n) {
      const auto& dC = n.output->grad;
      auto& dA = detail::in_grad(n, 0);
      for (size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i];
    });
    return c;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(a.numel());
  for (size_t i = 0; i < a.numel(); ++i)
    (*mask)[i] = rng.next_uniform() < rate ? 0.0 : keep_scale;
  Tensor c = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.numel(); ++i)
    c.mutable_data()[i] = a.data()[i] * (*mask)[i];
  tape.record({a}, c, [mask](Tape::Node& n) {
    const auto& dC = n.output->grad;
    auto& dA = detail::in_grad(n, 0);
    for (size_t i = 0; i < dC.size(); ++i) dA[i] += dC[i] * (*mask)[i];
  });
  return c;
}

inline Tensor softmax_last(Tape& tape, const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("softmax_last: rank-0 input");
  const size_t d = a.shape().back();
  const size_t rows = a.numel() / d;
  Tensor c = Tensor::zeros(a.shape());
  for (size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * d;
    double* y = c.mutable_data().data() + r * d;
    double m = *std::max_element(x, x + d);
    double sum = 0;
    for (size_t j = 0; j < d; ++j) sum += (y[j] = std::exp(x[j] - m));
    for (size_t j = 0; j < d; ++j) y[j] /= sum;
  }
  tape.record({a}, c, [rows, d](Tape::Node& n) {
    const auto& dC = n.output->grad;
    const auto& Y = n.output->data;
    auto& dA = detail::in_grad(n, 0);
    for (size_t r = 0; r < rows; ++r) {
      double dot = 0;
      for (size_t j = 0; j < d; ++j) dot += dC[r * d + j] * Y[r * d + j];
      for (size_t j = 0; j < d; ++j)
        dA[r * d + j] += Y[r * d + j] * (dC[r * d + j] - dot);
    }
  });
  return c;
}

inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-5) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
  const size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  if (eps <= 0) throw ConfigError("layer_norm: eps must be positive");
  const size_t rows = x.numel() / d;
  Tensor c = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mean = 0;
    for (size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0;
    for (size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (size_t j = 0; j < d; ++j) {
      double h = (xr[j] - mean) * is;
      (*xhat)[r * d + j] = h;
      c.mutable_data()[r * d + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  tape.record({x, gamma, beta}, c, [rows, d, xhat, inv_std](Tape::Node& n) {
    const auto& dC = n.output->grad;
    const auto& G = n.inputs[1]->data;
    auto& dX = detail::in_grad(n, 0);
    auto& dG = detail::in_grad(n, 1);
    auto& dB = detail::in_grad(n, 2);
    for (size_t r = 0; r < rows; ++r) {
      double sum_dh = 0, sum_dh_h = 0;
      for (size_t j = 0; j < d; ++j) {
        double dh = dC[r * d + j] * G[j];
        sum_dh += dh;
        sum_dh_h += dh * (*xhat)[r * d + j];
        dG[j] += dC[r * d + j] * (*xhat)[r * d + j];
        dB[j] += dC[r * d + j];
      }
      for (size_t j = 0; j < d; ++j) {
        double dh = dC[r * d + j] * G[j];
        double h = (*xhat)[r * d + j];
        dX[r * d + j] +=
            (*inv_std)[r] * (dh - sum_dh / d - h * sum_dh_h / d);
      }
    }
  });
  return c;
}

namespace detail {
// Shared conv kernel: out[t,o] = sum_i sum_d K[i,d,o] * x[t + i - left_pad, d] + b[o].
inline Tensor conv1d_impl(Tape& tape, const Tensor& x, const Tensor& kernel,
                          const Tensor& bias, size_t left_pad, const char* op) {
  if (x.rank() != 2 || kernel.rank() != 3 || bias.rank() != 1)
    throw ShapeError(std::string(op) + ": expected x[TxDin], kernel[kxDinxDout], bias[Dout]");
  const size_t T = x.extent(0), Din = x.extent(1);
  const size_t k = kernel.extent(0), Dout = kernel.extent(2);
  if (kernel.extent(1) != Din || bias.extent(0) != Dout)
    throw ShapeError(std::string(op) + ": channel mismatch x" + shape_str(x.shape()) +
                     " kernel" + shape_str(kernel.shape()));
  Tensor out = Tensor::zeros({T, Dout});
  const auto& X = x.data();
  const auto& K = kernel.data();
  auto& O = out.mutable_data();
  for (size_t t = 0; t < T; ++t) {
    for (size_t o = 0; o < Dout; ++o) O[t * Dout + o] = bias.data()[o];
    for (size_t i = 0; i < k; ++i) {
      long s = static_cast<long>(t) + static_cast<long>(i) - static_cast<long>(left_pad);
      if (s < 0 || s >= static_cast<long>(T)) continue;
      for (size_t d = 0; d < Din; ++d) {
        double xv = X[s * Din + d];
        if (xv == 0.0) continue;
        const double* kk = K.data() + (i * Din + d) * Dout;
        for (size_t o = 0; o < Dout; ++o) O[t * Dout + o] += xv * kk[o];
      }
    }
  }
  tape.record({x, kernel, bias}, out, [T, Din, k, Dout, left_pad](Tape::Node& n) {
    const auto& dO = n.output->grad;
    const auto& X = n.inputs[0]->data;
    const auto& K = n.inputs[1]->data;
    auto& dX = detail::in_grad(n, 0);
    auto& dK = detail::in_grad(n, 1);
    auto& dB = detail::in_grad(n, 2);
    for (size_t t = 0; t < T; ++t) {
      for (size_t o = 0; o < Dout; ++o) dB[o] += dO[t * Dout + o];
      for (size_t i = 0; i < k; ++i) {
        long s = static_cast<long>(t) + static_cast<long>(i) - static_cast<long>(left_pad);
        if (s < 0 || s >= static_cast<long>(T)) continue;
        for (size_t d = 0; d < Din; ++d) {
          const double* kk = K.data() + (i * Din + d) * Dout;
          double* dkk = dK.data() + (i * Din + d) * Dout;
          double acc = 0;
          for (size_t o = 0; o < Dout; ++o) {
            double g = dO[t * Dout + o];
            acc += g * kk[o];
            dkk[o] += g * X[s * Din + d];
          }
          dX[s * Din + d] += acc;
        }
      }
    }
  });
  return out;
}
}  // namespace detail

// Same-padded temporal conv: centered window, output length T.
inline Tensor conv1d_same(Tape& tape, const Tensor& x, const Tensor& kernel,
                          const Tensor& bias) {
  if (kernel.rank() == 3 && kernel.extent(0) % 2 == 0)
    throw ConfigError("conv1d_same: kernel width must be odd, got " +
                      std::to_string(kernel.extent(0)));
  return detail::conv1d_impl(tape, x, kernel, bias, (kernel.extent(0) - 1) / 2,
                             "conv1d_same");
}

// Causal temporal conv: left padding only, out[t] depends on x[t-k+1..t].
inline Tensor conv1d_causal(Tape& tape, const Tensor& x, const Tensor& kernel,
                            const Tensor& bias) {
  return detail::conv1d_impl(tape, x, kernel, bias, kernel.extent(0) - 1,
                             "conv1d_causal");
}

inline Tensor concat_last(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: empty input");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  size_t total_d = 0;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin(), p.shape().end() - 1) != lead)
      throw ShapeError("concat_last: leading dims differ");
    total_d += p.shape().back();
  }
  const size_t rows = shape_numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total_d);
  Tensor c = Tensor::zeros(out_shape);
  std::vector<size_t> widths;
  size_t off = 0;
  for (const auto& p : parts) {
    size_t d = p.shape().back();
    widths.push_back(d);
    for (size_t r = 0; r < rows; ++r)
      for (size_t j = 0; j < d; ++j)
        c.mutable_data()[r * total_d + off + j] = p.data()[r * d + j];
    off += d;
  }
  tape.record(parts, c, [rows, total_d, widths](Tape::Node& n) {
    const auto& dC = n.output->grad;
    size_t off = 0;
    for (size_t p = 0; p < widths.size(); ++p) {
      auto& dP = detail::in_grad(n, p);
      for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < widths[p]; ++j)
          dP[r * widths[p] + j] += dC[r * total_d + off + j];
      off += widths[p];
    }
  });
  return c;
}

// Rows [start, start+count) of a rank-2 tensor.
inline Tensor slice_rows(Tape& tape, const Tensor& x, size_t start, size_t count) {
  if (x.rank() != 2 || start + count > x.extent(0))
    throw ShapeError("slice_rows: bad range on " + shape_str(x.shape()));
  const size_t d = x.extent(1);
  Tensor c = Tensor::zeros({count, d});
  std::copy_n(x.data().begin() + start * d, count * d, c.mutable_data().begin());
  tape.record({x}, c, [start, count, d](Tape::Node& n) {
    const auto& dC = n.output->grad;
    auto& dX = detail::in_grad(n, 0);
    for (size_t i = 0; i < count * d; ++i) dX[start * d + i] += dC[i];
  });
  return c;
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  Tensor c = Tensor::scalar(s);
  tape.record({x}, c, [](Tape::Node& n) {
    double g = n.output->grad[0];
    auto& dX = detail::in_grad(n, 0);
    for (double& v : dX) v += g;
  });
  return c;
}

// Mean of squared differences over all elements.
inline Tensor mse_mean(Tape& tape, const Tensor& yhat, const Tensor& y) {
  detail::check_same_shape(yhat, y, "mse_mean");
  const size_t n_el = yhat.numel();
  double s = 0;
  for (size_t i = 0; i < n_el; ++i) {
    double r = yhat.data()[i] - y.data()[i];
    s += r * r;
  }
  Tensor c = Tensor::scalar(s / n_el);
  tape.record({yhat, y}, c, [n_el](Tape::Node& n) {
    double g = n.output->grad[0];
    const auto& A = n.inputs[0]->data;
    const auto& B = n.inputs[1]->data;
    auto& dA = detail::in_grad(n, 0);
    auto& dB = detail::in_grad(n, 1);
    for (size_t i = 0; i < n_el; ++i) {
      double d = 2.0 * (A[i] - B[i]) / n_el * g;
      dA[i] += d;
      dB[i] -= d;
    }
  });
  return c;
}

// x [T x d_in] * W [d_in x d_out] + b.
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(tape, matmul(tape, x, w), b);
}

}  // namespace stcl
