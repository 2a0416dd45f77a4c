#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace affect {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of 64-bit floats with optional gradient tracking.
///
/// A Tensor is a handle: copies alias the same storage, which is what the
/// tape relies on to accumulate gradients into the buffers the caller holds.
/// Values are treated as immutable once an op has consumed the tensor;
/// parameter updates happen between tapes, never under a live one.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool tracked = false);

  static Tensor zeros(Shape shape, bool tracked = false);
  static Tensor full(Shape shape, double value, bool tracked = false);
  static Tensor scalar(double value, bool tracked = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return s_->shape[axis]; }
  std::size_t numel() const { return s_->values.size(); }
  bool tracked() const { return s_ && s_->tracked; }

  std::vector<double>& values() { return s_->values; }
  const std::vector<double>& values() const { return s_->values; }

  /// Gradient buffer, zero-initialized to the tensor's size on first access.
  std::vector<double>& grad() const;
  bool has_grad() const { return !s_->grad.empty(); }
  void zero_grad();

  /// Value of a single-element tensor.
  double value() const;
  /// Row-major element access by multi-index.
  double at(std::initializer_list<std::size_t> index) const;

  bool all_finite() const;

  /// Identical shape and bitwise identical values.
  bool same_values(const Tensor& other) const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    mutable std::vector<double> grad;
    bool tracked = false;
  };
  std::shared_ptr<Storage> s_;
};

/// Execution-ordered record of differentiable operations.
///
/// Constructing a Tape makes it the active recorder for the current thread
/// (tapes nest); ops record a backward step only while a tape is active and
/// at least one operand is tracked. Execution order is a topological order
/// of the data flow, so backward() simply replays the record in reverse.
/// A tape and the tensors recorded on it belong to one thread; independent
/// tapes on different threads do not share state.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_step);
  std::size_t size() const { return steps_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every tracked
  /// tensor reachable from `loss`. Consumes the record.
  void backward(const Tensor& loss);
  void reset() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
  Tape* outer_ = nullptr;
};

// ---- elementwise (shapes equal or broadcastable along singleton dims) ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);  // ties route grad to a

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor softplus(const Tensor& x);  // log(1 + e^x), overflow-safe

/// max(0,x) + slope_c * min(0,x) with one learnable slope per channel
/// (axis 1 of x); slope has shape [C].
Tensor prelu(const Tensor& x, const Tensor& slope);

// ---- linear algebra / convolution ----

Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation (no kernel flip). input [N,C,H,W], kernel [F,C,kh,kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride_h,
              std::size_t stride_w, std::size_t pad_h, std::size_t pad_w);
inline Tensor conv2d(const Tensor& input, const Tensor& kernel,
                     std::size_t stride = 1, std::size_t padding = 0) {
  return conv2d(input, kernel, stride, stride, padding, padding);
}

/// One kernel slice per channel. input [N,C,H,W], kernel [C,1,kh,kw];
/// output channel c depends only on input channel c.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel,
                        std::size_t stride_h, std::size_t stride_w,
                        std::size_t pad_h, std::size_t pad_w);
inline Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel,
                               std::size_t stride = 1, std::size_t padding = 0) {
  return depthwise_conv2d(input, kernel, stride, stride, padding, padding);
}

// ---- reductions (population conventions: variance divides by n) ----

Tensor reduce_sum(const Tensor& x, std::span<const std::size_t> axes,
                  bool keepdims = false);
Tensor reduce_mean(const Tensor& x, std::span<const std::size_t> axes,
                   bool keepdims = false);
Tensor reduce_var(const Tensor& x, std::span<const std::size_t> axes,
                  bool keepdims = false);

Tensor reduce_sum(const Tensor& x);   // over all axes, scalar result
Tensor reduce_mean(const Tensor& x);
Tensor reduce_var(const Tensor& x);

// ---- shape / indexing ----

Tensor reshape(const Tensor& x, Shape shape);

/// x [B,N], one column index per row -> [B].
Tensor gather_rows(const Tensor& x, std::span<const int> columns);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }

/// Max over all parameter coordinates of the relative disagreement between
/// reverse-mode and central-finite-difference gradients of f:
///   |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
/// f must return a scalar tensor computed from `params`.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double eps = 1e-5);

}  // namespace affect
