#include "dialoc/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace dialoc {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using StrideMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrideMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;
thread_local OpCounters g_counters;

Var make_node(Tensor value, std::vector<Var> parents, const char* op,
              std::function<void(GraphNode&)> fn) {
  auto node = std::make_shared<GraphNode>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return node;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

// Shared by add/sub/mul: either equal shapes or one scalar operand.
void check_binary(const char* op, const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  require(sa == sb || is_scalar(a->value) || is_scalar(b->value),
          std::string(op) + ": shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
}

// Sizes for reducing along one axis: [outer, axis, inner].
struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis, const char* op) {
  require(axis >= 0 && axis < static_cast<int>(shape.size()),
          std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void im2col(const float* img, int channels, int height, int width, int kh, int kw, int stride,
            int pad, int out_h, int out_w, float* cols) {
  const int spatial = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        float* row = cols + static_cast<std::size_t>((c * kh + ky) * kw + kx) * spatial;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * out_w + ox] = (iy >= 0 && iy < height && ix >= 0 && ix < width)
                                       ? img[(static_cast<std::size_t>(c) * height + iy) * width + ix]
                                       : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, int channels, int height, int width, int kh, int kw, int stride,
                int pad, int out_h, int out_w, float* img) {
  const int spatial = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const float* row = cols + static_cast<std::size_t>((c * kh + ky) * kw + kx) * spatial;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= width) continue;
            img[(static_cast<std::size_t>(c) * height + iy) * width + ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  for (int d : shape_) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  for (int d : shape_) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
  }
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
  }
}

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) throw DimensionError("axis out of range for " + shape_str(shape_));
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor& GraphNode::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<GraphNode>();
  node->value = std::move(value);
  node->op = "constant";
  return node;
}

Var variable(Tensor value, bool requires_grad) {
  auto node = std::make_shared<GraphNode>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad = Tensor::zeros(node->value.shape());
  return node;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

OpCounters& op_counters() { return g_counters; }
void reset_op_counters() { g_counters = OpCounters{}; }

void backward(const Var& loss) {
  if (!loss) throw std::invalid_argument("backward: null loss");
  if (loss->value.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, got " + shape_str(loss->value.shape()));
  }
  if (!loss->requires_grad) return;

  // Iterative post-order DFS over nodes that need gradients.
  std::vector<GraphNode*> order;
  std::unordered_set<GraphNode*> visited;
  std::vector<std::pair<GraphNode*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      GraphNode* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (GraphNode* node : order) {
    if (!node->is_leaf()) node->grad_buffer().fill(0.0f);
  }
  loss->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    GraphNode* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

void zero_grads(std::span<const Var> nodes) {
  for (const auto& n : nodes) {
    if (n && n->requires_grad) n->grad_buffer().fill(0.0f);
  }
}

// ---- elementwise -----------------------------------------------------------

namespace {

enum class BinOp { kAdd, kSub, kMul };

Var binary(const Var& a, const Var& b, BinOp kind, const char* name) {
  check_binary(name, a, b);
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  const bool a_scalar = is_scalar(av) && !is_scalar(bv);
  const bool b_scalar = is_scalar(bv) && !is_scalar(av);
  Tensor out(a_scalar ? bv.shape() : av.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const float x = a_scalar ? av[0] : av[i];
    const float y = b_scalar ? bv[0] : bv[i];
    switch (kind) {
      case BinOp::kAdd: out[i] = x + y; break;
      case BinOp::kSub: out[i] = x - y; break;
      case BinOp::kMul: out[i] = x * y; break;
    }
  }
  return make_node(std::move(out), {a, b}, name, [kind, a_scalar, b_scalar](GraphNode& self) {
    const Var& pa = self.parents[0];
    const Var& pb = self.parents[1];
    const Tensor& g = self.grad;
    const std::size_t n = g.numel();
    if (pa->requires_grad) {
      Tensor& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const float d = kind == BinOp::kMul ? g[i] * (b_scalar ? pb->value[0] : pb->value[i]) : g[i];
        ga[a_scalar ? 0 : i] += d;
      }
    }
    if (pb->requires_grad) {
      Tensor& gb = pb->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        float d = g[i];
        if (kind == BinOp::kSub) d = -d;
        if (kind == BinOp::kMul) d *= a_scalar ? pa->value[0] : pa->value[i];
        gb[b_scalar ? 0 : i] += d;
      }
    }
  });
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, const char* name, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x->value;
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
  return make_node(std::move(out), {x}, name, [deriv](GraphNode& self) {
    const Var& px = self.parents[0];
    Tensor& gx = px->grad_buffer();
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[i] * deriv(px->value[i], self.value[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::kAdd, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::kSub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::kMul, "mul"); }

Var scale(const Var& a, float factor) {
  return unary(a, "scale", [factor](float x) { return x * factor; },
               [factor](float, float) { return factor; });
}

Var add_scalar(const Var& a, float value) {
  return unary(a, "add_scalar", [value](float x) { return x + value; }, [](float, float) { return 1.0f; });
}

Var gelu(const Var& x) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  constexpr float kInvSqrt2Pi = 0.39894228040143268f;
  return unary(
      x, "gelu", [](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); },
      [](float v, float) {
        return 0.5f * (1.0f + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5f * v * v);
      });
}

Var relu(const Var& x) {
  return unary(x, "relu", [](float v) { return v > 0.0f ? v : 0.0f; },
               [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, "sigmoid",
      [](float v) {
        if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

Var square(const Var& x) {
  return unary(x, "square", [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

// ---- reductions and softmax ------------------------------------------------

Var softmax(const Var& x, int axis) {
  const AxisSplit s = split_axis(x->value.shape(), axis, "softmax");
  Tensor out(x->value.shape());
  const float* in = x->value.ptr();
  float* y = out.ptr();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.axis * s.inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t a = 0; a < s.axis; ++a) mx = std::max(mx, in[base + a * s.inner]);
      double total = 0.0;
      for (std::size_t a = 0; a < s.axis; ++a) {
        const float e = std::exp(in[base + a * s.inner] - mx);
        y[base + a * s.inner] = e;
        total += e;
      }
      const float inv = static_cast<float>(1.0 / total);
      for (std::size_t a = 0; a < s.axis; ++a) y[base + a * s.inner] *= inv;
    }
  }
  return make_node(std::move(out), {x}, "softmax", [s](GraphNode& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    const float* y = self.value.ptr();
    const float* gy = self.grad.ptr();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.axis * s.inner + i;
        double dot = 0.0;
        for (std::size_t a = 0; a < s.axis; ++a) dot += gy[base + a * s.inner] * y[base + a * s.inner];
        for (std::size_t a = 0; a < s.axis; ++a) {
          const std::size_t j = base + a * s.inner;
          gx[j] += y[j] * (gy[j] - static_cast<float>(dot));
        }
      }
    }
  });
}

Var log_softmax(const Var& x, int axis) {
  const AxisSplit s = split_axis(x->value.shape(), axis, "log_softmax");
  Tensor out(x->value.shape());
  const float* in = x->value.ptr();
  float* y = out.ptr();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.axis * s.inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t a = 0; a < s.axis; ++a) mx = std::max(mx, in[base + a * s.inner]);
      double total = 0.0;
      for (std::size_t a = 0; a < s.axis; ++a) total += std::exp(static_cast<double>(in[base + a * s.inner] - mx));
      const float lse = mx + static_cast<float>(std::log(total));
      for (std::size_t a = 0; a < s.axis; ++a) y[base + a * s.inner] = in[base + a * s.inner] - lse;
    }
  }
  return make_node(std::move(out), {x}, "log_softmax", [s](GraphNode& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    const float* y = self.value.ptr();
    const float* gy = self.grad.ptr();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.axis * s.inner + i;
        double total = 0.0;
        for (std::size_t a = 0; a < s.axis; ++a) total += gy[base + a * s.inner];
        for (std::size_t a = 0; a < s.axis; ++a) {
          const std::size_t j = base + a * s.inner;
          gx[j] += gy[j] - std::exp(y[j]) * static_cast<float>(total);
        }
      }
    }
  });
}

Var mean(const Var& x) {
  const std::size_t n = x->value.numel();
  double total = 0.0;
  for (float v : x->value.data()) total += v;
  Tensor out({1}, static_cast<float>(total / static_cast<double>(n)));
  return make_node(std::move(out), {x}, "mean", [n](GraphNode& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    const float g = self.grad[0] / static_cast<float>(n);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (float v : x->value.data()) total += v;
  Tensor out({1}, static_cast<float>(total));
  return make_node(std::move(out), {x}, "sum", [](GraphNode& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    const float g = self.grad[0];
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, float eps) {
  const Shape& shape = x->value.shape();
  require(!shape.empty(), "layer_norm: empty shape");
  const int width = shape.back();
  require(gain->value.numel() == static_cast<std::size_t>(width) &&
              bias->value.numel() == static_cast<std::size_t>(width),
          "layer_norm: gain " + shape_str(gain->value.shape()) + " / bias " + shape_str(bias->value.shape()) +
              " do not match last axis of " + shape_str(shape));
  const std::size_t rows = x->value.numel() / width;
  Tensor out(shape);
  auto xhat = std::make_shared<std::vector<float>>(x->value.numel());
  auto rstd = std::make_shared<std::vector<float>>(rows);
  const float* in = x->value.ptr();
  const float* g = gain->value.ptr();
  const float* b = bias->value.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = in + r * width;
    double mu = 0.0;
    for (int c = 0; c < width; ++c) mu += row[c];
    mu /= width;
    double var = 0.0;
    for (int c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= width;
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*rstd)[r] = rs;
    for (int c = 0; c < width; ++c) {
      const float h = static_cast<float>(row[c] - mu) * rs;
      (*xhat)[r * width + c] = h;
      out[r * width + c] = h * g[c] + b[c];
    }
  }
  return make_node(std::move(out), {x, gain, bias}, "layer_norm", [xhat, rstd, width, rows](GraphNode& self) {
    const Var& px = self.parents[0];
    const Var& pg = self.parents[1];
    const Var& pb = self.parents[2];
    const float* gy = self.grad.ptr();
    const float* g = pg->value.ptr();
    if (pg->requires_grad || pb->requires_grad) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (int c = 0; c < width; ++c) {
          const std::size_t j = r * width + c;
          if (pg->requires_grad) pg->grad_buffer()[c] += gy[j] * (*xhat)[j];
          if (pb->requires_grad) pb->grad_buffer()[c] += gy[j];
        }
      }
    }
    if (px->requires_grad) {
      Tensor& gx = px->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (int c = 0; c < width; ++c) {
          const std::size_t j = r * width + c;
          const float dh = gy[j] * g[c];
          m1 += dh;
          m2 += dh * (*xhat)[j];
        }
        m1 /= width;
        m2 /= width;
        for (int c = 0; c < width; ++c) {
          const std::size_t j = r * width + c;
          const float dh = gy[j] * g[c];
          gx[j] += (*rstd)[r] * (dh - static_cast<float>(m1) - (*xhat)[j] * static_cast<float>(m2));
        }
      }
    }
  });
}

// ---- shape manipulation ----------------------------------------------------

Var concat(const std::vector<Var>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts[0]->value.shape();
  require(axis >= 0 && axis < static_cast<int>(first.size()), "concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p->value.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (static_cast<int>(i) == axis) || s[i] == first[i];
    require(ok, "concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  const AxisSplit total = split_axis(out_shape, axis, "concat");
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = static_cast<std::size_t>(p->value.shape()[axis]) * total.inner;
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(p->value.ptr() + o * len, len, out.ptr() + o * total.axis * total.inner + offset);
    }
    offset += len;
  }
  return make_node(std::move(out), parts, "concat", [offsets, total, axis](GraphNode& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const Var& p = self.parents[k];
      if (!p->requires_grad) continue;
      Tensor& gp = p->grad_buffer();
      const std::size_t len = static_cast<std::size_t>(p->value.shape()[axis]) * total.inner;
      for (std::size_t o = 0; o < total.outer; ++o) {
        const float* src = self.grad.ptr() + o * total.axis * total.inner + offsets[k];
        float* dst = gp.ptr() + o * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_node(std::move(out), {x}, "reshape", [](GraphNode& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[i];
  });
}

Var transpose(const Var& x) {
  require(x->value.rank() == 2, "transpose: expected rank 2, got " + shape_str(x->value.shape()));
  const int rows = x->value.dim(0), cols = x->value.dim(1);
  Tensor out({cols, rows});
  MatMap(out.ptr(), cols, rows) = CMatMap(x->value.ptr(), rows, cols).transpose();
  return make_node(std::move(out), {x}, "transpose", [rows, cols](GraphNode& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    MatMap(gx.ptr(), rows, cols) += CMatMap(self.grad.ptr(), cols, rows).transpose();
  });
}

// ---- linear algebra ----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          "matmul: shape mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  MatMap(out.ptr(), m, n).noalias() = CMatMap(av.ptr(), m, k) * CMatMap(bv.ptr(), k, n);
  return make_node(std::move(out), {a, b}, "matmul", [m, k, n](GraphNode& self) {
    const Var& pa = self.parents[0];
    const Var& pb = self.parents[1];
    CMatMap g(self.grad.ptr(), m, n);
    if (pa->requires_grad) {
      MatMap(pa->grad_buffer().ptr(), m, k).noalias() += g * CMatMap(pb->value.ptr(), k, n).transpose();
    }
    if (pb->requires_grad) {
      MatMap(pb->grad_buffer().ptr(), k, n).noalias() += CMatMap(pa->value.ptr(), m, k).transpose() * g;
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0),
          "linear: shape mismatch " + shape_str(xv.shape()) + " x " + shape_str(wv.shape()));
  const int m = xv.dim(0), k = xv.dim(1), n = wv.dim(1);
  if (bias) {
    require(bias->value.numel() == static_cast<std::size_t>(n),
            "linear: bias " + shape_str(bias->value.shape()) + " does not match weight " + shape_str(wv.shape()));
  }
  Tensor out({m, n});
  MatMap o(out.ptr(), m, n);
  o.noalias() = CMatMap(xv.ptr(), m, k) * CMatMap(wv.ptr(), k, n);
  if (bias) o.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias->value.ptr(), n);
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_node(std::move(out), std::move(parents), "linear", [m, k, n](GraphNode& self) {
    const Var& px = self.parents[0];
    const Var& pw = self.parents[1];
    CMatMap g(self.grad.ptr(), m, n);
    if (px->requires_grad) {
      MatMap(px->grad_buffer().ptr(), m, k).noalias() += g * CMatMap(pw->value.ptr(), k, n).transpose();
    }
    if (pw->requires_grad) {
      MatMap(pw->grad_buffer().ptr(), k, n).noalias() += CMatMap(px->value.ptr(), m, k).transpose() * g;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Eigen::Map<Eigen::RowVectorXf>(self.parents[2]->grad_buffer().ptr(), n) += g.colwise().sum();
    }
  });
}

Var embedding(std::span<const int> ids, const Var& table) {
  const Tensor& tv = table->value;
  require(tv.rank() == 2, "embedding: table must be rank 2, got " + shape_str(tv.shape()));
  const int vocab = tv.dim(0), width = tv.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  require(!idx.empty(), "embedding: empty id sequence");
  for (int id : idx) {
    if (id < 0 || id >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(id) + " out of range for vocabulary of " +
                           std::to_string(vocab));
    }
  }
  Tensor out({static_cast<int>(idx.size()), width});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(tv.ptr() + static_cast<std::size_t>(idx[r]) * width, width, out.ptr() + r * width);
  }
  return make_node(std::move(out), {table}, "embedding", [idx = std::move(idx), width](GraphNode& self) {
    Tensor& gt = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      float* dst = gt.ptr() + static_cast<std::size_t>(idx[r]) * width;
      const float* src = self.grad.ptr() + r * width;
      for (int c = 0; c < width; ++c) dst[c] += src[c];
    }
  });
}

// ---- attention ---------------------------------------------------------------

namespace {

struct AttentionGeometry {
  int tq, tk, width, heads, head_dim;
  float scale;
};

AttentionGeometry attention_geometry(const Tensor& q, const Tensor& k, const Tensor* v, int heads,
                                     std::span<const std::uint8_t> key_mask) {
  require(q.rank() == 2 && k.rank() == 2 && q.dim(1) == k.dim(1),
          "attention: query " + shape_str(q.shape()) + " and key " + shape_str(k.shape()) + " are incompatible");
  if (v) {
    require(v->rank() == 2 && v->dim(0) == k.dim(0) && v->dim(1) == k.dim(1),
            "attention: value " + shape_str(v->shape()) + " does not match key " + shape_str(k.shape()));
  }
  require(heads > 0 && q.dim(1) % heads == 0,
          "attention: width " + std::to_string(q.dim(1)) + " not divisible by " + std::to_string(heads) + " heads");
  require(key_mask.empty() || key_mask.size() == static_cast<std::size_t>(k.dim(0)),
          "attention: key mask length does not match key count");
  AttentionGeometry g{q.dim(0), k.dim(0), q.dim(1), heads, q.dim(1) / heads, 0.0f};
  g.scale = 1.0f / std::sqrt(static_cast<float>(g.head_dim));
  return g;
}

// Fills probs [heads, tq, tk].
void attention_probs(const AttentionGeometry& g, const float* q, const float* k,
                     std::span<const std::uint8_t> key_mask, float* probs) {
  for (int h = 0; h < g.heads; ++h) {
    CStrideMap qh(q + h * g.head_dim, g.tq, g.head_dim, Eigen::OuterStride<>(g.width));
    CStrideMap kh(k + h * g.head_dim, g.tk, g.head_dim, Eigen::OuterStride<>(g.width));
    MatMap p(probs + static_cast<std::size_t>(h) * g.tq * g.tk, g.tq, g.tk);
    p.noalias() = (qh * kh.transpose()) * g.scale;
    for (int i = 0; i < g.tq; ++i) {
      float mx = -std::numeric_limits<float>::infinity();
      for (int j = 0; j < g.tk; ++j) {
        if (!key_mask.empty() && !key_mask[j]) continue;
        mx = std::max(mx, p(i, j));
      }
      double total = 0.0;
      for (int j = 0; j < g.tk; ++j) {
        if (!key_mask.empty() && !key_mask[j]) {
          p(i, j) = 0.0f;
          continue;
        }
        const float e = std::exp(p(i, j) - mx);
        p(i, j) = e;
        total += e;
      }
      // Rows with every key masked attend to nothing.
      const float inv = total > 0.0 ? static_cast<float>(1.0 / total) : 0.0f;
      for (int j = 0; j < g.tk; ++j) p(i, j) *= inv;
    }
  }
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, int heads, std::span<const std::uint8_t> key_mask) {
  const AttentionGeometry g = attention_geometry(q, k, nullptr, heads, key_mask);
  Tensor probs({g.heads, g.tq, g.tk});
  attention_probs(g, q.ptr(), k.ptr(), key_mask, probs.ptr());
  return probs;
}

Var attention_heads(const Var& q, const Var& k, const Var& v, int heads, std::span<const std::uint8_t> key_mask) {
  const AttentionGeometry g = attention_geometry(q->value, k->value, &v->value, heads, key_mask);
  auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(g.heads) * g.tq * g.tk);
  attention_probs(g, q->value.ptr(), k->value.ptr(), key_mask, probs->data());
  Tensor out({g.tq, g.width});
  for (int h = 0; h < g.heads; ++h) {
    CMatMap p(probs->data() + static_cast<std::size_t>(h) * g.tq * g.tk, g.tq, g.tk);
    CStrideMap vh(v->value.ptr() + h * g.head_dim, g.tk, g.head_dim, Eigen::OuterStride<>(g.width));
    StrideMap oh(out.ptr() + h * g.head_dim, g.tq, g.head_dim, Eigen::OuterStride<>(g.width));
    oh.noalias() = p * vh;
  }
  OpCounters& counters = op_counters();
  counters.attention_multiplies += 2ull * g.tq * g.tk * g.width;
  counters.attention_calls += 1;

  return make_node(std::move(out), {q, k, v}, "attention", [g, probs](GraphNode& self) {
    const Var& pq = self.parents[0];
    const Var& pk = self.parents[1];
    const Var& pv = self.parents[2];
    RowMat dp(g.tq, g.tk);
    for (int h = 0; h < g.heads; ++h) {
      CMatMap p(probs->data() + static_cast<std::size_t>(h) * g.tq * g.tk, g.tq, g.tk);
      CStrideMap go(self.grad.ptr() + h * g.head_dim, g.tq, g.head_dim, Eigen::OuterStride<>(g.width));
      CStrideMap vh(pv->value.ptr() + h * g.head_dim, g.tk, g.head_dim, Eigen::OuterStride<>(g.width));
      if (pv->requires_grad) {
        StrideMap gv(pv->grad_buffer().ptr() + h * g.head_dim, g.tk, g.head_dim, Eigen::OuterStride<>(g.width));
        gv.noalias() += p.transpose() * go;
      }
      if (!pq->requires_grad && !pk->requires_grad) continue;
      dp.noalias() = go * vh.transpose();
      // Softmax Jacobian, row-wise.
      for (int i = 0; i < g.tq; ++i) {
        float dot = 0.0f;
        for (int j = 0; j < g.tk; ++j) dot += dp(i, j) * p(i, j);
        for (int j = 0; j < g.tk; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * g.scale;
      }
      if (pq->requires_grad) {
        CStrideMap kh(pk->value.ptr() + h * g.head_dim, g.tk, g.head_dim, Eigen::OuterStride<>(g.width));
        StrideMap gq(pq->grad_buffer().ptr() + h * g.head_dim, g.tq, g.head_dim, Eigen::OuterStride<>(g.width));
        gq.noalias() += dp * kh;
      }
      if (pk->requires_grad) {
        CStrideMap qh(pq->value.ptr() + h * g.head_dim, g.tq, g.head_dim, Eigen::OuterStride<>(g.width));
        StrideMap gk(pk->grad_buffer().ptr() + h * g.head_dim, g.tk, g.head_dim, Eigen::OuterStride<>(g.width));
        gk.noalias() += dp.transpose() * qh;
      }
    }
  });
}

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, int heads, const Var& out_proj,
                         std::span<const std::uint8_t> key_mask) {
  const int width = q->value.rank() == 2 ? q->value.dim(1) : 0;
  require(out_proj->value.rank() == 2 && out_proj->value.dim(0) == width && out_proj->value.dim(1) == width,
          "attention: output projection " + shape_str(out_proj->value.shape()) + " does not match width " +
              std::to_string(width));
  return matmul(attention_heads(q, k, v, heads, key_mask), out_proj);
}

// ---- convolution ---------------------------------------------------------------

Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride, int padding) {
  const Tensor& xv = x->value;
  const Tensor& kv = kernel->value;
  require(xv.rank() == 3 && kv.rank() == 4 && kv.dim(1) == xv.dim(0),
          "conv2d: input " + shape_str(xv.shape()) + " incompatible with kernel " + shape_str(kv.shape()));
  require(stride >= 1 && padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
  const int cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  require(h + 2 * padding >= kh && w + 2 * padding >= kw,
          "conv2d: kernel " + shape_str(kv.shape()) + " larger than padded input " + shape_str(xv.shape()));
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;
  if (bias) require(bias->value.numel() == static_cast<std::size_t>(cout), "conv2d: bias does not match Cout");
  const int kdim = cin * kh * kw;
  auto cols = std::make_shared<std::vector<float>>(static_cast<std::size_t>(kdim) * oh * ow);
  im2col(xv.ptr(), cin, h, w, kh, kw, stride, padding, oh, ow, cols->data());
  Tensor out({cout, oh, ow});
  MatMap o(out.ptr(), cout, oh * ow);
  o.noalias() = CMatMap(kv.ptr(), cout, kdim) * CMatMap(cols->data(), kdim, oh * ow);
  if (bias) o.colwise() += Eigen::Map<const Eigen::VectorXf>(bias->value.ptr(), cout);
  std::vector<Var> parents{x, kernel};
  if (bias) parents.push_back(bias);
  return make_node(std::move(out), std::move(parents), "conv2d",
                   [cols, cin, h, w, cout, kh, kw, oh, ow, kdim, stride, padding](GraphNode& self) {
                     const Var& px = self.parents[0];
                     const Var& pk = self.parents[1];
                     CMatMap g(self.grad.ptr(), cout, oh * ow);
                     if (pk->requires_grad) {
                       MatMap(pk->grad_buffer().ptr(), cout, kdim).noalias() +=
                           g * CMatMap(cols->data(), kdim, oh * ow).transpose();
                     }
                     if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                       Eigen::Map<Eigen::VectorXf>(self.parents[2]->grad_buffer().ptr(), cout) += g.rowwise().sum();
                     }
                     if (px->requires_grad) {
                       RowMat dcols = CMatMap(pk->value.ptr(), cout, kdim).transpose() * g;
                       col2im_add(dcols.data(), cin, h, w, kh, kw, stride, padding, oh, ow,
                                  px->grad_buffer().ptr());
                     }
                   });
}

Var conv_transpose2d(const Var& x, const Var& kernel, const Var& bias, int stride, int padding) {
  const Tensor& xv = x->value;
  const Tensor& kv = kernel->value;
  require(xv.rank() == 3 && kv.rank() == 4 && kv.dim(0) == xv.dim(0),
          "conv_transpose2d: input " + shape_str(xv.shape()) + " incompatible with kernel " + shape_str(kv.shape()));
  require(stride >= 1 && padding >= 0, "conv_transpose2d: stride must be >= 1 and padding >= 0");
  const int cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int cout = kv.dim(1), kh = kv.dim(2), kw = kv.dim(3);
  const int oh = (h - 1) * stride - 2 * padding + kh;
  const int ow = (w - 1) * stride - 2 * padding + kw;
  require(oh > 0 && ow > 0, "conv_transpose2d: geometry yields empty output for input " + shape_str(xv.shape()) +
                                " and kernel " + shape_str(kv.shape()));
  if (bias) require(bias->value.numel() == static_cast<std::size_t>(cout), "conv_transpose2d: bias does not match Cout");
  const int kdim = cout * kh * kw;
  RowMat cols = CMatMap(kv.ptr(), cin, kdim).transpose() * CMatMap(xv.ptr(), cin, h * w);
  Tensor out({cout, oh, ow});
  col2im_add(cols.data(), cout, oh, ow, kh, kw, stride, padding, h, w, out.ptr());
  if (bias) {
    for (int c = 0; c < cout; ++c) {
      float* plane = out.ptr() + static_cast<std::size_t>(c) * oh * ow;
      for (int i = 0; i < oh * ow; ++i) plane[i] += bias->value[c];
    }
  }
  std::vector<Var> parents{x, kernel};
  if (bias) parents.push_back(bias);
  return make_node(std::move(out), std::move(parents), "conv_transpose2d",
                   [cin, h, w, cout, kh, kw, oh, ow, kdim, stride, padding](GraphNode& self) {
                     const Var& px = self.parents[0];
                     const Var& pk = self.parents[1];
                     std::vector<float> dcols(static_cast<std::size_t>(kdim) * h * w);
                     im2col(self.grad.ptr(), cout, oh, ow, kh, kw, stride, padding, h, w, dcols.data());
                     CMatMap dc(dcols.data(), kdim, h * w);
                     if (px->requires_grad) {
                       MatMap(px->grad_buffer().ptr(), cin, h * w).noalias() +=
                           CMatMap(pk->value.ptr(), cin, kdim) * dc;
                     }
                     if (pk->requires_grad) {
                       MatMap(pk->grad_buffer().ptr(), cin, kdim).noalias() +=
                           CMatMap(px->value.ptr(), cin, h * w) * dc.transpose();
                     }
                     if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                       Tensor& gb = self.parents[2]->grad_buffer();
                       for (int c = 0; c < cout; ++c) {
                         const float* plane = self.grad.ptr() + static_cast<std::size_t>(c) * oh * ow;
                         float acc = 0.0f;
                         for (int i = 0; i < oh * ow; ++i) acc += plane[i];
                         gb[c] += acc;
                       }
                     }
                   });
}

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  const Tensor& xv = x->value;
  require(xv.rank() == 3, "upsample_bilinear: expected [C,H,W], got " + shape_str(xv.shape()));
  require(out_h > 0 && out_w > 0, "upsample_bilinear: output extents must be positive");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  struct Tap {
    int lo, hi;
    float frac;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    for (int i = 0; i < out; ++i) {
      const double src = out > 1 ? static_cast<double>(i) * (in - 1) / (out - 1) : 0.0;
      const int lo = std::min(static_cast<int>(std::floor(src)), in - 1);
      t[i] = {lo, std::min(lo + 1, in - 1), static_cast<float>(src - lo)};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(w, out_w));
  Tensor out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < out_h; ++i) {
      const Tap& a = (*ty)[i];
      for (int j = 0; j < out_w; ++j) {
        const Tap& b = (*tx)[j];
        const float top = xv.at(ch, a.lo, b.lo) * (1.0f - b.frac) + xv.at(ch, a.lo, b.hi) * b.frac;
        const float bot = xv.at(ch, a.hi, b.lo) * (1.0f - b.frac) + xv.at(ch, a.hi, b.hi) * b.frac;
        out.at(ch, i, j) = top * (1.0f - a.frac) + bot * a.frac;
      }
    }
  }
  return make_node(std::move(out), {x}, "upsample_bilinear", [ty, tx, c, out_h, out_w](GraphNode& self) {
    Tensor& gx = self.parents[0]->grad_buffer();
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < out_h; ++i) {
        const Tap& a = (*ty)[i];
        for (int j = 0; j < out_w; ++j) {
          const Tap& b = (*tx)[j];
          const float g = self.grad.at(ch, i, j);
          gx.at(ch, a.lo, b.lo) += g * (1.0f - a.frac) * (1.0f - b.frac);
          gx.at(ch, a.lo, b.hi) += g * (1.0f - a.frac) * b.frac;
          gx.at(ch, a.hi, b.lo) += g * a.frac * (1.0f - b.frac);
          gx.at(ch, a.hi, b.hi) += g * a.frac * b.frac;
        }
      }
    }
  });
}

}  // namespace dialoc
