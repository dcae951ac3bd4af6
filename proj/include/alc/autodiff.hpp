#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// Every forward operator appends one node to a Tape. Backward walks the nodes
// from the loss down to index 0, so gradients are propagated in exact reverse
// execution order. Nodes bound to a Parameter add their gradient into
// Parameter::grad when backward finishes; gradients accumulate until the
// caller zeroes them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "alc/errors.hpp"
#include "alc/tensor.hpp"

namespace alc::nn {

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
  std::uint64_t generation = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a constant input. Its gradient is readable after backward.
  Var input(Tensor value) { return push(std::move(value), nullptr); }

  /// Leaf aliasing a parameter's value; backward adds into parameter.grad.
  Var param(Parameter& p) {
    Node node;
    node.param = &p;
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1, generation_};
  }

  /// Appends an operator node. `backward` reads grad(self) and accumulates
  /// into the gradients of its inputs.
  Var push(Tensor value, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1, generation_};
  }

  const Tensor& value(Var v) const {
    check(v);
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value : n.value;
  }
  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }

  /// Gradient buffer for a node, allocated on first use.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape.empty() && n.grad.values.empty()) n.grad = Tensor::zeros_like(value(id));
    return n.grad;
  }
  const Tensor& grad(Var v) {
    check(v);
    return grad(v.id);
  }

  void backward(Var loss) {
    check(loss);
    if (value(loss).size() != 1) throw GraphError("backward: loss must be a scalar");
    for (Node& n : nodes_) n.grad = Tensor();
    grad(loss.id).fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward(*this);
    }
    for (std::size_t i = 0; i <= loss.id; ++i) {
      Node& n = nodes_[i];
      if (!n.param || n.grad.values.empty()) continue;
      auto& dst = n.param->grad.values;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad.values[k];
    }
  }

  /// Drops every node. Vars issued before the call become stale.
  void clear() {
    nodes_.clear();
    ++generation_;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  void check(Var v) const {
    if (v.tape != this || v.generation != generation_ || v.id >= nodes_.size()) {
      throw GraphError("stale or foreign variable");
    }
  }

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 0;
};

inline const Tensor& Var::value() const {
  if (!tape) throw GraphError("unbound variable");
  return tape->value(*this);
}

namespace detail {

inline void expect_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape));
  }
}

inline void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

/// Returns the [cols, rows] transpose of a row-major [rows, cols] block.
inline std::vector<double> transposed(const double* m, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = m[r * cols + c];
  return t;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

/// y = x W + b, with x [batch, in], W [in, out], b [out].
inline Var dense(Var x, Var w, Var b) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  detail::expect_rank(X, 2, "dense");
  detail::expect_rank(W, 2, "dense");
  detail::expect_rank(B, 1, "dense");
  const std::size_t batch = X.dim(0), in = X.dim(1), out = W.dim(1);
  if (W.dim(0) != in || B.dim(0) != out) {
    throw ShapeError("dense: x " + shape_str(X.shape) + " W " + shape_str(W.shape) + " b " + shape_str(B.shape));
  }
  Tensor Y({batch, out});
  for (std::size_t n = 0; n < batch; ++n) {
    double* y = Y.data() + n * out;
    std::copy(B.data(), B.data() + out, y);
    const double* xr = X.data() + n * in;
    for (std::size_t i = 0; i < in; ++i) {
      if (xr[i] != 0.0) detail::axpy(xr[i], W.data() + i * out, y, out);
    }
  }
  require_finite(Y, "dense");
  const std::size_t xi = x.id, wi = w.id, bi = b.id;
  return tape.push(std::move(Y), [xi, wi, bi, batch, in, out, self = tape.size()](Tape& t) {
    const Tensor& G = t.grad(self);
    const Tensor& X = t.value(xi);
    const Tensor& W = t.value(wi);
    Tensor& dX = t.grad(xi);
    Tensor& dW = t.grad(wi);
    Tensor& dB = t.grad(bi);
    for (std::size_t n = 0; n < batch; ++n) {
      const double* g = G.data() + n * out;
      detail::axpy(1.0, g, dB.data(), out);
      const double* xr = X.data() + n * in;
      double* dx = dX.data() + n * in;
      for (std::size_t i = 0; i < in; ++i) {
        if (xr[i] != 0.0) detail::axpy(xr[i], g, dW.data() + i * out, out);
        dx[i] += detail::dot(W.data() + i * out, g, out);
      }
    }
  });
}

/// Cross-correlation over time: x [batch, ch_in, T], kernel [ch_out, ch_in, k],
/// bias [ch_out]. Output length is floor((T + 2*padding - k) / stride) + 1.
inline Var conv1d(Var x, Var kernel, Var bias, std::size_t stride = 1, std::size_t padding = 0) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  const Tensor& K = kernel.value();
  const Tensor& B = bias.value();
  detail::expect_rank(X, 3, "conv1d");
  detail::expect_rank(K, 3, "conv1d");
  detail::expect_rank(B, 1, "conv1d");
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  const std::size_t batch = X.dim(0), cin = X.dim(1), len = X.dim(2);
  const std::size_t cout = K.dim(0), k = K.dim(2);
  if (K.dim(1) != cin || B.dim(0) != cout || k == 0) {
    throw ShapeError("conv1d: x " + shape_str(X.shape) + " kernel " + shape_str(K.shape) + " bias " +
                     shape_str(B.shape));
  }
  if (len + 2 * padding < k) {
    throw ShapeError("conv1d: sequence length " + std::to_string(len) + " shorter than kernel " + std::to_string(k));
  }
  const std::size_t out_len = (len + 2 * padding - k) / stride + 1;

  // Output positions t whose tap j lands inside the unpadded input.
  auto tap_range = [=](std::size_t j) {
    const long p = static_cast<long>(padding), s = static_cast<long>(stride), jl = static_cast<long>(j);
    long lo = p - jl <= 0 ? 0 : (p - jl + s - 1) / s;
    long hi = (static_cast<long>(len) - 1 + p - jl);
    hi = hi < 0 ? -1 : hi / s;
    hi = std::min<long>(hi, static_cast<long>(out_len) - 1);
    return std::pair<long, long>{lo, hi};
  };

  Tensor Y({batch, cout, out_len});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* y = Y.data() + (n * cout + co) * out_len;
      std::fill(y, y + out_len, B[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xr = X.data() + (n * cin + ci) * len;
        const double* kr = K.data() + (co * cin + ci) * k;
        for (std::size_t j = 0; j < k; ++j) {
          const auto [lo, hi] = tap_range(j);
          const double kv = kr[j];
          const long off = static_cast<long>(j) - static_cast<long>(padding);
          if (stride == 1) {
            for (long t = lo; t <= hi; ++t) y[t] += kv * xr[t + off];
          } else {
            for (long t = lo; t <= hi; ++t) y[t] += kv * xr[t * static_cast<long>(stride) + off];
          }
        }
      }
    }
  }
  require_finite(Y, "conv1d");
  const std::size_t xi = x.id, ki = kernel.id, bi = bias.id;
  return tape.push(std::move(Y), [=, self = tape.size()](Tape& t) {
    const Tensor& G = t.grad(self);
    const Tensor& X = t.value(xi);
    const Tensor& K = t.value(ki);
    Tensor& dX = t.grad(xi);
    Tensor& dK = t.grad(ki);
    Tensor& dB = t.grad(bi);
    const long s = static_cast<long>(stride);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t co = 0; co < cout; ++co) {
        const double* g = G.data() + (n * cout + co) * out_len;
        double gs = 0.0;
        for (std::size_t t0 = 0; t0 < out_len; ++t0) gs += g[t0];
        dB[co] += gs;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* xr = X.data() + (n * cin + ci) * len;
          double* dx = dX.data() + (n * cin + ci) * len;
          const double* kr = K.data() + (co * cin + ci) * k;
          double* dk = dK.data() + (co * cin + ci) * k;
          for (std::size_t j = 0; j < k; ++j) {
            const auto [lo, hi] = tap_range(j);
            const long off = static_cast<long>(j) - static_cast<long>(padding);
            const double kv = kr[j];
            double acc = 0.0;
            for (long t0 = lo; t0 <= hi; ++t0) {
              const long idx = t0 * s + off;
              acc += g[t0] * xr[idx];
              dx[idx] += kv * g[t0];
            }
            dk[j] += acc;
          }
        }
      }
    }
  });
}

inline Var relu(Var x) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  Tensor Y(X.shape);
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] > 0.0 ? X[i] : 0.0;
  const std::size_t xi = x.id;
  return tape.push(std::move(Y), [xi, self = tape.size()](Tape& t) {
    const Tensor& G = t.grad(self);
    const Tensor& X = t.value(xi);
    Tensor& dX = t.grad(xi);
    // subgradient 0 at x == 0
    for (std::size_t i = 0; i < X.size(); ++i)
      if (X[i] > 0.0) dX[i] += G[i];
  });
}

/// Windowed maximum over time; backward routes to the first maximal index.
inline Var max_pool1d(Var x, std::size_t k, std::size_t stride) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  detail::expect_rank(X, 3, "max_pool1d");
  if (k == 0 || stride == 0) throw ShapeError("max_pool1d: kernel and stride must be positive");
  const std::size_t rows = X.dim(0) * X.dim(1), len = X.dim(2);
  if (len < k) throw ShapeError("max_pool1d: sequence length " + std::to_string(len) + " < kernel");
  const std::size_t out_len = (len - k) / stride + 1;
  Tensor Y({X.dim(0), X.dim(1), out_len});
  std::vector<std::size_t> argmax(rows * out_len);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * len;
    for (std::size_t t = 0; t < out_len; ++t) {
      std::size_t best = t * stride;
      for (std::size_t j = 1; j < k; ++j)
        if (xr[t * stride + j] > xr[best]) best = t * stride + j;
      argmax[r * out_len + t] = r * len + best;
      Y[r * out_len + t] = xr[best];
    }
  }
  const std::size_t xi = x.id;
  return tape.push(std::move(Y), [xi, arg = std::move(argmax), self = tape.size()](Tape& t) {
    const Tensor& G = t.grad(self);
    Tensor& dX = t.grad(xi);
    for (std::size_t i = 0; i < arg.size(); ++i) dX[arg[i]] += G[i];
  });
}

/// Mean over the time axis: [batch, ch, T] -> [batch, ch].
inline Var global_avg_pool(Var x) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  detail::expect_rank(X, 3, "global_avg_pool");
  const std::size_t rows = X.dim(0) * X.dim(1), len = X.dim(2);
  if (len == 0) throw ShapeError("global_avg_pool: empty time axis");
  Tensor Y({X.dim(0), X.dim(1)});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t t = 0; t < len; ++t) s += X[r * len + t];
    Y[r] = s / static_cast<double>(len);
  }
  const std::size_t xi = x.id;
  return tape.push(std::move(Y), [=, self = tape.size()](Tape& t) {
    const Tensor& G = t.grad(self);
    Tensor& dX = t.grad(xi);
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < len; ++i) dX[r * len + i] += G[r] * inv;
  });
}

/// Running statistics of a batch-norm layer; updated in train mode only.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;

  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t channels)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

enum class Mode { Train, Eval };

/// Per-channel normalization of x [batch, ch, T] over batch and time.
inline Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, Mode mode, double eps = 1e-5) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  detail::expect_rank(X, 3, "batch_norm");
  const std::size_t batch = X.dim(0), ch = X.dim(1), len = X.dim(2);
  if (gamma.value().shape != Shape{ch} || beta.value().shape != Shape{ch} ||
      stats.running_mean.shape != Shape{ch} || stats.running_var.shape != Shape{ch}) {
    throw ShapeError("batch_norm: parameter shapes do not match " + std::to_string(ch) + " channels");
  }
  const Tensor& Gm = gamma.value();
  const Tensor& Bt = beta.value();
  const std::size_t count = batch * len;
  if (mode == Mode::Train && count == 0) throw ShapeError("batch_norm: empty batch in train mode");

  std::vector<double> mean(ch), inv_std(ch);
  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t t = 0; t < len; ++t) s += X[(n * ch + c) * len + t];
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t t = 0; t < len; ++t) {
          const double d = X[(n * ch + c) * len + t] - m;
          v += d * d;
        }
      v /= static_cast<double>(count);
      if (v + eps <= 0.0) throw NumericError("batch_norm: zero variance with eps = 0");
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + eps);
      const double unbiased = count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1) : v;
      stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * m;
      stats.running_var[c] = (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      const double v = stats.running_var[c] + eps;
      if (v <= 0.0) throw NumericError("batch_norm: zero running variance with eps = 0");
      mean[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(v);
    }
  }

  Tensor Y(X.shape);
  Tensor Xhat(X.shape);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t i = (n * ch + c) * len + t;
        Xhat[i] = (X[i] - mean[c]) * inv_std[c];
        Y[i] = Gm[c] * Xhat[i] + Bt[c];
      }
  require_finite(Y, "batch_norm");
  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
  const bool train = mode == Mode::Train;
  return tape.push(std::move(Y), [=, xhat = std::move(Xhat), inv = std::move(inv_std), self = tape.size()](Tape& t) {
    const Tensor& G = t.grad(self);
    const Tensor& Gm = t.value(gi);
    Tensor& dX = t.grad(xi);
    Tensor& dG = t.grad(gi);
    Tensor& dBt = t.grad(bi);
    for (std::size_t c = 0; c < ch; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = (n * ch + c) * len + k;
          sum_g += G[i];
          sum_gx += G[i] * xhat[i];
        }
      dG[c] += sum_gx;
      dBt[c] += sum_g;
      const double scale = Gm[c] * inv[c];
      const double m = static_cast<double>(count);
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = (n * ch + c) * len + k;
          if (train) {
            dX[i] += scale * (G[i] - sum_g / m - xhat[i] * sum_gx / m);
          } else {
            dX[i] += scale * G[i];
          }
        }
    }
  });
}

/// Single-layer LSTM over x [batch, T, in] from a zero state, returning the
/// final hidden state [batch, hidden]. Gate blocks in the 4*hidden axis are
/// ordered input, forget, candidate, output. w_ih is [in, 4H], w_hh is
/// [H, 4H], bias is [4H].
inline Var lstm(Var x, Var w_ih, Var w_hh, Var bias) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  const Tensor& Wi = w_ih.value();
  const Tensor& Wh = w_hh.value();
  const Tensor& Bs = bias.value();
  detail::expect_rank(X, 3, "lstm");
  detail::expect_rank(Wi, 2, "lstm");
  detail::expect_rank(Wh, 2, "lstm");
  detail::expect_rank(Bs, 1, "lstm");
  const std::size_t batch = X.dim(0), steps = X.dim(1), in = X.dim(2);
  const std::size_t hidden = Wh.dim(0), g4 = 4 * hidden;
  if (steps == 0) throw ShapeError("lstm: empty sequence");
  if (Wi.dim(0) != in || Wi.dim(1) != g4 || Wh.dim(1) != g4 || Bs.dim(0) != g4) {
    throw ShapeError("lstm: x " + shape_str(X.shape) + " w_ih " + shape_str(Wi.shape) + " w_hh " +
                     shape_str(Wh.shape) + " bias " + shape_str(Bs.shape));
  }
  // Saved per (step, example): activated gates, cell state, hidden state.
  std::vector<double> gates(steps * batch * g4);
  std::vector<double> cells(steps * batch * hidden);
  std::vector<double> hiddens(steps * batch * hidden);
  std::vector<double> z(g4);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t n = 0; n < batch; ++n) {
      std::copy(Bs.data(), Bs.data() + g4, z.begin());
      const double* xt = X.data() + (n * steps + t) * in;
      for (std::size_t i = 0; i < in; ++i) detail::axpy(xt[i], Wi.data() + i * g4, z.data(), g4);
      if (t > 0) {
        const double* hp = hiddens.data() + ((t - 1) * batch + n) * hidden;
        for (std::size_t h = 0; h < hidden; ++h)
          if (hp[h] != 0.0) detail::axpy(hp[h], Wh.data() + h * g4, z.data(), g4);
      }
      double* ga = gates.data() + (t * batch + n) * g4;
      double* c = cells.data() + (t * batch + n) * hidden;
      double* hcur = hiddens.data() + (t * batch + n) * hidden;
      const double* cp = t > 0 ? cells.data() + ((t - 1) * batch + n) * hidden : nullptr;
      for (std::size_t h = 0; h < hidden; ++h) {
        const double ig = detail::sigmoid(z[h]);
        const double fg = detail::sigmoid(z[hidden + h]);
        const double gg = std::tanh(z[2 * hidden + h]);
        const double og = detail::sigmoid(z[3 * hidden + h]);
        ga[h] = ig;
        ga[hidden + h] = fg;
        ga[2 * hidden + h] = gg;
        ga[3 * hidden + h] = og;
        c[h] = (cp ? fg * cp[h] : 0.0) + ig * gg;
        hcur[h] = og * std::tanh(c[h]);
      }
    }
  }
  Tensor Y({batch, hidden});
  std::copy(hiddens.end() - static_cast<long>(batch * hidden), hiddens.end(), Y.data());
  require_finite(Y, "lstm");

  const std::size_t xi = x.id, wii = w_ih.id, whi = w_hh.id, bi = bias.id;
  return tape.push(std::move(Y), [=, gates = std::move(gates), cells = std::move(cells),
                                  hiddens = std::move(hiddens), self = tape.size()](Tape& tp) {
    const Tensor& G = tp.grad(self);
    const Tensor& X = tp.value(xi);
    const Tensor& Wi = tp.value(wii);
    const Tensor& Wh = tp.value(whi);
    Tensor& dX = tp.grad(xi);
    Tensor& dWi = tp.grad(wii);
    Tensor& dWh = tp.grad(whi);
    Tensor& dB = tp.grad(bi);
    const std::vector<double> wi_t = detail::transposed(Wi.data(), in, g4);
    const std::vector<double> wh_t = detail::transposed(Wh.data(), hidden, g4);
    std::vector<double> dh(batch * hidden), dc(batch * hidden, 0.0), dz(g4), dh_prev(hidden);
    std::copy(G.data(), G.data() + batch * hidden, dh.begin());
    for (std::size_t t = steps; t-- > 0;) {
      for (std::size_t n = 0; n < batch; ++n) {
        const double* ga = gates.data() + (t * batch + n) * g4;
        const double* c = cells.data() + (t * batch + n) * hidden;
        const double* cp = t > 0 ? cells.data() + ((t - 1) * batch + n) * hidden : nullptr;
        const double* hp = t > 0 ? hiddens.data() + ((t - 1) * batch + n) * hidden : nullptr;
        double* dhn = dh.data() + n * hidden;
        double* dcn = dc.data() + n * hidden;
        for (std::size_t h = 0; h < hidden; ++h) {
          const double ig = ga[h], fg = ga[hidden + h], gg = ga[2 * hidden + h], og = ga[3 * hidden + h];
          const double tc = std::tanh(c[h]);
          const double d_o = dhn[h] * tc;
          const double d_c = dcn[h] + dhn[h] * og * (1.0 - tc * tc);
          dz[h] = d_c * gg * ig * (1.0 - ig);
          dz[hidden + h] = cp ? d_c * cp[h] * fg * (1.0 - fg) : 0.0;
          dz[2 * hidden + h] = d_c * ig * (1.0 - gg * gg);
          dz[3 * hidden + h] = d_o * og * (1.0 - og);
          dcn[h] = d_c * fg;
        }
        detail::axpy(1.0, dz.data(), dB.data(), g4);
        const double* xt = X.data() + (n * steps + t) * in;
        double* dxt = dX.data() + (n * steps + t) * in;
        for (std::size_t i = 0; i < in; ++i) {
          if (xt[i] != 0.0) detail::axpy(xt[i], dz.data(), dWi.data() + i * g4, g4);
        }
        for (std::size_t j = 0; j < g4; ++j) {
          if (dz[j] != 0.0) detail::axpy(dz[j], wi_t.data() + j * in, dxt, in);
        }
        std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
        if (hp) {
          for (std::size_t h = 0; h < hidden; ++h) {
            if (hp[h] != 0.0) detail::axpy(hp[h], dz.data(), dWh.data() + h * g4, g4);
          }
          for (std::size_t j = 0; j < g4; ++j) {
            if (dz[j] != 0.0) detail::axpy(dz[j], wh_t.data() + j * hidden, dh_prev.data(), hidden);
          }
        }
        std::copy(dh_prev.begin(), dh_prev.end(), dhn);
      }
    }
  });
}

/// Mean softmax cross-entropy of logits [batch, C] against class indices.
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Tape& tape = *logits.tape;
  const Tensor& L = logits.value();
  detail::expect_rank(L, 2, "softmax_cross_entropy");
  const std::size_t batch = L.dim(0), classes = L.dim(1);
  if (classes < 2) throw ShapeError("softmax_cross_entropy: need at least 2 classes");
  if (labels.size() != batch) throw ShapeError("softmax_cross_entropy: label count does not match batch");
  if (batch == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw LabelRangeError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  Tensor probs(L.shape);
  double loss = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    const double* row = L.data() + n * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs[n * classes + c] = std::exp(row[c] - log_z);
    loss += log_z - row[labels[n]];
  }
  loss /= static_cast<double>(batch);
  if (!std::isfinite(loss)) throw NumericError("softmax_cross_entropy: non-finite loss");
  const std::size_t li = logits.id;
  std::vector<int> y(labels.begin(), labels.end());
  return tape.push(Tensor({1}, {loss}), [=, p = std::move(probs), y = std::move(y), self = tape.size()](Tape& t) {
    const double g = t.grad(self)[0] / static_cast<double>(batch);
    Tensor& dL = t.grad(li);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < classes; ++c) {
        const double onehot = static_cast<std::size_t>(y[n]) == c ? 1.0 : 0.0;
        dL[n * classes + c] += g * (p[n * classes + c] - onehot);
      }
  });
}

inline Var add(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape != B.shape) throw ShapeError("add: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  Tensor Y(A.shape);
  for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] + B[i];
  require_finite(Y, "add");
  const std::size_t ai = a.id, bi = b.id;
  return tape.push(std::move(Y), [ai, bi, self = tape.size()](Tape& t) {
    const Tensor& G = t.grad(self);
    detail::axpy(1.0, G.data(), t.grad(ai).data(), G.size());
    detail::axpy(1.0, G.data(), t.grad(bi).data(), G.size());
  });
}

inline Var reshape(Var x, Shape shape) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  if (shape_size(shape) != X.size()) throw ShapeError("reshape: " + shape_str(X.shape) + " to " + shape_str(shape));
  const std::size_t xi = x.id;
  return tape.push(Tensor(std::move(shape), X.values), [xi, self = tape.size()](Tape& t) {
    const Tensor& G = t.grad(self);
    detail::axpy(1.0, G.data(), t.grad(xi).data(), G.size());
  });
}

/// [batch, a, b] -> [batch, b, a]; converts channel-major windows to time-major sequences.
inline Var swap_last_axes(Var x) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  detail::expect_rank(X, 3, "swap_last_axes");
  const std::size_t batch = X.dim(0), a = X.dim(1), b = X.dim(2);
  Tensor Y({batch, b, a});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) Y[(n * b + j) * a + i] = X[(n * a + i) * b + j];
  const std::size_t xi = x.id;
  return tape.push(std::move(Y), [=, self = tape.size()](Tape& t) {
    const Tensor& G = t.grad(self);
    Tensor& dX = t.grad(xi);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j) dX[(n * a + i) * b + j] += G[(n * b + j) * a + i];
  });
}

inline Var sum(Var x) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  double s = 0.0;
  for (double v : X.values) s += v;
  const std::size_t xi = x.id;
  return tape.push(Tensor({1}, {s}), [xi, self = tape.size()](Tape& t) {
    const double g = t.grad(self)[0];
    for (double& d : t.grad(xi).values) d += g;
  });
}

/// Scalar sum(x * coeffs) for a constant coefficient tensor of the same shape.
inline Var weighted_sum(Var x, Tensor coeffs) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  if (coeffs.shape != X.shape) throw ShapeError("weighted_sum: coefficient shape mismatch");
  const double s = detail::dot(X.data(), coeffs.data(), X.size());
  const std::size_t xi = x.id;
  return tape.push(Tensor({1}, {s}), [xi, w = std::move(coeffs), self = tape.size()](Tape& t) {
    detail::axpy(t.grad(self)[0], w.data(), t.grad(xi).data(), w.size());
  });
}

/// Row-wise softmax of a [batch, C] tensor (no tape).
inline Tensor softmax(const Tensor& logits) {
  detail::expect_rank(logits, 2, "softmax");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  Tensor p(logits.shape);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* row = logits.data() + n * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += (p[n * classes + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < classes; ++c) p[n * classes + c] /= z;
  }
  return p;
}

}  // namespace alc::nn
