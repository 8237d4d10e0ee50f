#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dialoc {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand extents are incompatible. The message names every shape involved.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a NaN/Inf shows up where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major buffer of 32-bit reals.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  float at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  float& at(int ch, int r, int c) {
    return data_[(static_cast<std::size_t>(ch) * shape_[1] + r) * shape_[2] + c];
  }
  float at(int ch, int r, int c) const {
    return data_[(static_cast<std::size_t>(ch) * shape_[1] + r) * shape_[2] + c];
  }

  Tensor reshaped(Shape shape) const;
  void fill(float v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// One node of the reverse-mode graph. `grad` is allocated lazily with the
/// same shape as `value`.
struct GraphNode {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<GraphNode>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(GraphNode&)> backward_fn;
  const char* op = "leaf";

  Tensor& grad_buffer();
  bool is_leaf() const { return parents.empty(); }
};

using Var = std::shared_ptr<GraphNode>;

Var constant(Tensor value);
Var variable(Tensor value, bool requires_grad = true);

/// Trainable tensor with a unique dotted name such as "fusion.block0.ca.q_proj.weight".
struct Parameter {
  std::string name;
  Var node;
};

/// Back-propagates from a scalar loss. Leaf gradients accumulate across calls;
/// interior gradients are recomputed every call.
void backward(const Var& loss);
void zero_grads(std::span<const Var> nodes);

bool grad_enabled();

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Thread-local operation counters, used to measure attention cost.
struct OpCounters {
  std::uint64_t attention_multiplies = 0;
  std::uint64_t attention_calls = 0;
};
OpCounters& op_counters();
void reset_op_counters();

// ---- operations ---------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float factor);
Var add_scalar(const Var& a, float value);
Var gelu(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var square(const Var& x);
Var softmax(const Var& x, int axis);
Var log_softmax(const Var& x, int axis);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, float eps = 1e-5f);
Var concat(const std::vector<Var>& parts, int axis);
Var mean(const Var& x);
Var sum(const Var& x);
Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x);

/// x [n, in] * weight [in, out] + bias [out] (bias broadcast over rows).
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Row lookup: ids index rows of table [vocab, C].
Var embedding(std::span<const int> ids, const Var& table);

/// Per-head softmax(Q Kᵀ / sqrt(C/heads)) V, heads concatenated, then
/// multiplied by out_proj [C, C]. key_mask (optional, length Tk) marks valid keys.
Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, int heads, const Var& out_proj,
                         std::span<const std::uint8_t> key_mask = {});
/// The same attention without the output projection.
Var attention_heads(const Var& q, const Var& k, const Var& v, int heads,
                    std::span<const std::uint8_t> key_mask = {});
/// Attention probabilities [heads, Tq, Tk]; no graph is built.
Tensor attention_weights(const Tensor& q, const Tensor& k, int heads,
                         std::span<const std::uint8_t> key_mask = {});

/// x [Cin,H,W], kernel [Cout,Cin,kh,kw], optional bias [Cout]. Cross-correlation.
Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride, int padding);
/// x [Cin,H,W], kernel [Cin,Cout,kh,kw]; adjoint of conv2d with the same geometry.
Var conv_transpose2d(const Var& x, const Var& kernel, const Var& bias, int stride, int padding);
/// x [C,H,W] -> [C,out_h,out_w], corner-aligned bilinear sampling.
Var upsample_bilinear(const Var& x, int out_h, int out_w);

}  // namespace dialoc
