#include "affect/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "affect/errors.hpp"

namespace affect {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

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

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool tracked) {
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("tensor data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  s_ = std::make_shared<Storage>();
  s_->shape = std::move(shape);
  s_->values = std::move(data);
  s_->tracked = tracked;
}

Tensor Tensor::zeros(Shape shape, bool tracked) {
  std::vector<double> data(shape_numel(shape), 0.0);
  return Tensor(std::move(shape), std::move(data), tracked);
}

Tensor Tensor::full(Shape shape, double value, bool tracked) {
  std::vector<double> data(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(data), tracked);
}

Tensor Tensor::scalar(double value, bool tracked) {
  return Tensor(Shape{}, std::vector<double>{value}, tracked);
}

std::vector<double>& Tensor::grad() const {
  if (!s_) throw ContractError("grad() on undefined tensor");
  if (s_->grad.size() != s_->values.size()) {
    s_->grad.assign(s_->values.size(), 0.0);
  }
  return s_->grad;
}

void Tensor::zero_grad() {
  if (s_ && !s_->grad.empty()) {
    std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
  }
}

double Tensor::value() const {
  if (!s_ || s_->values.size() != 1) {
    throw ContractError("value() requires a single-element tensor");
  }
  return s_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (!s_) throw ContractError("at() on undefined tensor");
  if (index.size() != s_->shape.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) +
                     " does not match tensor rank " +
                     std::to_string(s_->shape.size()));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s_->shape[axis]) {
      throw ShapeError("index out of range on axis " + std::to_string(axis));
    }
    off = off * s_->shape[axis] + i;
    ++axis;
  }
  return s_->values[off];
}

bool Tensor::all_finite() const {
  if (!s_) return false;
  for (double v : s_->values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::same_values(const Tensor& other) const {
  if (!s_ || !other.s_) return s_ == other.s_;
  if (s_->shape != other.s_->shape) return false;
  if (s_->values.empty()) return true;
  return std::memcmp(s_->values.data(), other.s_->values.data(),
                     s_->values.size() * sizeof(double)) == 0;
}

// ------------------------------------------------------------------ Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

Tape::Tape() : outer_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = outer_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) {
  steps_.push_back(std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a defined scalar loss");
  }
  if (!loss.tracked()) {
    steps_.clear();
    return;
  }
  loss.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

namespace {

bool recording(bool any_tracked) {
  return g_active_tape != nullptr && any_tracked;
}

// ---------------------------------------------------------- broadcasting

// Right-aligned elementwise broadcast: missing leading dims and dims of
// size 1 repeat. Strides of 0 mark repeated axes so one odometer walk over
// the output yields both operand offsets.
struct BroadcastPlan {
  Shape out_shape;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;
  bool same_shape = false;
};

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

BroadcastPlan make_broadcast_plan(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out_shape = a;
    plan.same_shape = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out_shape.resize(rank);
  plan.a_strides.assign(rank, 0);
  plan.b_strides.assign(rank, 0);
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    const bool ha = i + a.size() >= rank;
    const bool hb = i + b.size() >= rank;
    const std::size_t da = ha ? a[i + a.size() - rank] : 1;
    const std::size_t db = hb ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcastable");
    }
    plan.out_shape[i] = std::max(da, db);
    // Missing or singleton dims keep stride 0 so the offset never advances.
    if (ha && da == plan.out_shape[i]) {
      plan.a_strides[i] = sa[i + a.size() - rank];
    }
    if (hb && db == plan.out_shape[i]) {
      plan.b_strides[i] = sb[i + b.size() - rank];
    }
  }
  return plan;
}

// Calls f(out_offset, a_offset, b_offset) for every output element.
template <class F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t n = shape_numel(plan.out_shape);
  if (plan.same_shape) {
    for (std::size_t o = 0; o < n; ++o) f(o, o, o);
    return;
  }
  const std::size_t rank = plan.out_shape.size();
  if (rank == 0) {
    if (n == 1) f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ai = 0;
  std::size_t bi = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ai, bi);
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      ai += plan.a_strides[k];
      bi += plan.b_strides[k];
      if (idx[k] < plan.out_shape[k]) break;
      idx[k] = 0;
      ai -= plan.a_strides[k] * plan.out_shape[k];
      bi -= plan.b_strides[k] * plan.out_shape[k];
    }
  }
}

enum class BinOp { kAdd, kSub, kMul, kDiv, kMax };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  if (!a.defined() || !b.defined()) {
    throw ContractError("binary op on undefined tensor");
  }
  BroadcastPlan plan = make_broadcast_plan(a.shape(), b.shape());
  const bool track = recording(a.tracked() || b.tracked());
  Tensor out = Tensor::zeros(plan.out_shape, track);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
    switch (op) {
      case BinOp::kAdd: ov[o] = av[i] + bv[j]; break;
      case BinOp::kSub: ov[o] = av[i] - bv[j]; break;
      case BinOp::kMul: ov[o] = av[i] * bv[j]; break;
      case BinOp::kDiv: ov[o] = av[i] / bv[j]; break;
      case BinOp::kMax: ov[o] = av[i] >= bv[j] ? av[i] : bv[j]; break;
    }
  });
  if (track) {
    Tape::active()->record([a, b, out, op, plan = std::move(plan)]() {
      const auto& av = a.values();
      const auto& bv = b.values();
      const auto& og = out.grad();
      const bool need_a = a.tracked();
      const bool need_b = b.tracked();
      std::vector<double>* ag = need_a ? &a.grad() : nullptr;
      std::vector<double>* bg = need_b ? &b.grad() : nullptr;
      for_each_broadcast(plan,
                         [&](std::size_t o, std::size_t i, std::size_t j) {
        const double g = og[o];
        switch (op) {
          case BinOp::kAdd:
            if (need_a) (*ag)[i] += g;
            if (need_b) (*bg)[j] += g;
            break;
          case BinOp::kSub:
            if (need_a) (*ag)[i] += g;
            if (need_b) (*bg)[j] -= g;
            break;
          case BinOp::kMul:
            if (need_a) (*ag)[i] += g * bv[j];
            if (need_b) (*bg)[j] += g * av[i];
            break;
          case BinOp::kDiv:
            if (need_a) (*ag)[i] += g / bv[j];
            if (need_b) (*bg)[j] -= g * av[i] / (bv[j] * bv[j]);
            break;
          case BinOp::kMax:
            if (av[i] >= bv[j]) {
              if (need_a) (*ag)[i] += g;
            } else {
              if (need_b) (*bg)[j] += g;
            }
            break;
        }
      });
    });
  }
  return out;
}

// fwd(x) -> y, dfn(x, y) -> dy/dx. Derivatives phrased in terms of either
// the input or the already-computed output, whichever is cheaper.
template <class F, class D>
Tensor unary(const Tensor& x, F&& fwd, D&& dfn) {
  if (!x.defined()) throw ContractError("unary op on undefined tensor");
  const bool track = recording(x.tracked());
  Tensor out = Tensor::zeros(x.shape(), track);
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  if (track) {
    Tape::active()->record([x, out, dfn]() {
      const auto& xv = x.values();
      const auto& yv = out.values();
      const auto& og = out.grad();
      auto& xg = x.grad();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        xg[i] += og[i] * dfn(xv[i], yv[i]);
      }
    });
  }
  return out;
}

void check_conv_geometry(const Shape& in, const Shape& k, std::size_t sh,
                         std::size_t sw, std::size_t ph, std::size_t pw,
                         bool depthwise) {
  if (in.size() != 4 || k.size() != 4) {
    throw ShapeError("conv expects rank-4 input and kernel, got " +
                     shape_str(in) + " and " + shape_str(k));
  }
  if (sh == 0 || sw == 0) throw ContractError("conv stride must be positive");
  if (depthwise) {
    if (k[0] != in[1] || k[1] != 1) {
      throw ShapeError("depthwise kernel " + shape_str(k) +
                       " must be [C,1,kh,kw] with C = input channels " +
                       std::to_string(in[1]));
    }
  } else if (k[1] != in[1]) {
    throw ShapeError("kernel channels " + std::to_string(k[1]) +
                     " do not match input channels " + std::to_string(in[1]));
  }
  if (in[2] + 2 * ph < k[2] || in[3] + 2 * pw < k[3]) {
    throw ShapeError("kernel " + shape_str(k) +
                     " exceeds padded input extent for input " +
                     shape_str(in));
  }
}

}  // namespace

// ----------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kDiv); }
Tensor maximum(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMax); }

Tensor add_scalar(const Tensor& a, double c) {
  return unary(a, [c](double v) { return v + c; },
               [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary(a, [c](double v) { return v * c; },
               [c](double, double) { return c; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x,
               [](double v) {
                 if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return 0.5 / y; });
}

Tensor softplus(const Tensor& x) {
  return unary(x,
               [](double v) {
                 if (v > 0) return v + std::log1p(std::exp(-v));
                 return std::log1p(std::exp(v));
               },
               [](double v, double) {
                 if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               });
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
  if (!x.defined() || !slope.defined()) {
    throw ContractError("prelu on undefined tensor");
  }
  if (x.rank() < 2 || slope.rank() != 1 || slope.dim(0) != x.dim(1)) {
    throw ShapeError("prelu expects x [N,C,...] and slope [C], got " +
                     shape_str(x.shape()) + " and " +
                     shape_str(slope.shape()));
  }
  const std::size_t channels = x.dim(1);
  std::size_t inner = 1;
  for (std::size_t d = 2; d < x.rank(); ++d) inner *= x.dim(d);
  const bool track = recording(x.tracked() || slope.tracked());
  Tensor out = Tensor::zeros(x.shape(), track);
  const auto& xv = x.values();
  const auto& av = slope.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const std::size_t c = (i / inner) % channels;
    ov[i] = xv[i] >= 0 ? xv[i] : av[c] * xv[i];
  }
  if (track) {
    Tape::active()->record([x, slope, out, channels, inner]() {
      const auto& xv = x.values();
      const auto& av = slope.values();
      const auto& og = out.grad();
      const bool need_x = x.tracked();
      const bool need_a = slope.tracked();
      std::vector<double>* xg = need_x ? &x.grad() : nullptr;
      std::vector<double>* ag = need_a ? &slope.grad() : nullptr;
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const std::size_t c = (i / inner) % channels;
        if (need_x) (*xg)[i] += og[i] * (xv[i] >= 0 ? 1.0 : av[c]);
        if (need_a && xv[i] < 0) (*ag)[c] += og[i] * xv[i];
      }
    });
  }
  return out;
}

// ------------------------------------------------- matmul / convolutions

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) {
    throw ContractError("matmul on undefined tensor");
  }
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + " are incompatible");
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  const bool track = recording(a.tracked() || b.tracked());
  Tensor out = Tensor::zeros({m, n}, track);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aval = av[i * k + p];
      if (aval == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        ov[i * n + j] += aval * bv[p * n + j];
      }
    }
  }
  if (track) {
    Tape::active()->record([a, b, out, m, k, n]() {
      const auto& av = a.values();
      const auto& bv = b.values();
      const auto& og = out.grad();
      if (a.tracked()) {
        auto& ag = a.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double g = og[i * n + j];
            if (g == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) {
              ag[i * k + p] += g * bv[p * n + j];
            }
          }
        }
      }
      if (b.tracked()) {
        auto& bg = b.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aval = av[i * k + p];
            if (aval == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
              bg[p * n + j] += aval * og[i * n + j];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride_h,
              std::size_t stride_w, std::size_t pad_h, std::size_t pad_w) {
  if (!input.defined() || !kernel.defined()) {
    throw ContractError("conv2d on undefined tensor");
  }
  check_conv_geometry(input.shape(), kernel.shape(), stride_h, stride_w,
                      pad_h, pad_w, /*depthwise=*/false);
  const std::size_t batch = input.dim(0), cin = input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0);
  const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t oh = (h + 2 * pad_h - kh) / stride_h + 1;
  const std::size_t ow = (w + 2 * pad_w - kw) / stride_w + 1;
  const bool track = recording(input.tracked() || kernel.tracked());
  Tensor out = Tensor::zeros({batch, cout, oh, ow}, track);
  const auto& iv = input.values();
  const auto& kv = kernel.values();
  auto& ov = out.values();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t f = 0; f < cout; ++f) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t src_y =
                  static_cast<std::ptrdiff_t>(y * stride_h + ky) -
                  static_cast<std::ptrdiff_t>(pad_h);
              if (src_y < 0 || src_y >= static_cast<std::ptrdiff_t>(h)) {
                continue;
              }
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t src_x =
                    static_cast<std::ptrdiff_t>(x * stride_w + kx) -
                    static_cast<std::ptrdiff_t>(pad_w);
                if (src_x < 0 || src_x >= static_cast<std::ptrdiff_t>(w)) {
                  continue;
                }
                acc += iv[((n * cin + c) * h + src_y) * w + src_x] *
                       kv[((f * cin + c) * kh + ky) * kw + kx];
              }
            }
          }
          ov[((n * cout + f) * oh + y) * ow + x] = acc;
        }
      }
    }
  }
  if (track) {
    Tape::active()->record([input, kernel, out, stride_h, stride_w, pad_h,
                            pad_w]() {
      const std::size_t batch = input.dim(0), cin = input.dim(1);
      const std::size_t h = input.dim(2), w = input.dim(3);
      const std::size_t cout = kernel.dim(0);
      const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
      const std::size_t oh = out.dim(2), ow = out.dim(3);
      const auto& iv = input.values();
      const auto& kv = kernel.values();
      const auto& og = out.grad();
      const bool need_i = input.tracked();
      const bool need_k = kernel.tracked();
      std::vector<double>* ig = need_i ? &input.grad() : nullptr;
      std::vector<double>* kg = need_k ? &kernel.grad() : nullptr;
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t f = 0; f < cout; ++f) {
          for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
              const double g = og[((n * cout + f) * oh + y) * ow + x];
              if (g == 0.0) continue;
              for (std::size_t c = 0; c < cin; ++c) {
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const std::ptrdiff_t src_y =
                      static_cast<std::ptrdiff_t>(y * stride_h + ky) -
                      static_cast<std::ptrdiff_t>(pad_h);
                  if (src_y < 0 || src_y >= static_cast<std::ptrdiff_t>(h)) {
                    continue;
                  }
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t src_x =
                        static_cast<std::ptrdiff_t>(x * stride_w + kx) -
                        static_cast<std::ptrdiff_t>(pad_w);
                    if (src_x < 0 ||
                        src_x >= static_cast<std::ptrdiff_t>(w)) {
                      continue;
                    }
                    const std::size_t ii =
                        ((n * cin + c) * h + src_y) * w + src_x;
                    const std::size_t ki =
                        ((f * cin + c) * kh + ky) * kw + kx;
                    if (need_i) (*ig)[ii] += g * kv[ki];
                    if (need_k) (*kg)[ki] += g * iv[ii];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel,
                        std::size_t stride_h, std::size_t stride_w,
                        std::size_t pad_h, std::size_t pad_w) {
  if (!input.defined() || !kernel.defined()) {
    throw ContractError("depthwise_conv2d on undefined tensor");
  }
  check_conv_geometry(input.shape(), kernel.shape(), stride_h, stride_w,
                      pad_h, pad_w, /*depthwise=*/true);
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t oh = (h + 2 * pad_h - kh) / stride_h + 1;
  const std::size_t ow = (w + 2 * pad_w - kw) / stride_w + 1;
  const bool track = recording(input.tracked() || kernel.tracked());
  Tensor out = Tensor::zeros({batch, channels, oh, ow}, track);
  const auto& iv = input.values();
  const auto& kv = kernel.values();
  auto& ov = out.values();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t src_y =
                static_cast<std::ptrdiff_t>(y * stride_h + ky) -
                static_cast<std::ptrdiff_t>(pad_h);
            if (src_y < 0 || src_y >= static_cast<std::ptrdiff_t>(h)) {
              continue;
            }
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t src_x =
                  static_cast<std::ptrdiff_t>(x * stride_w + kx) -
                  static_cast<std::ptrdiff_t>(pad_w);
              if (src_x < 0 || src_x >= static_cast<std::ptrdiff_t>(w)) {
                continue;
              }
              acc += iv[((n * channels + c) * h + src_y) * w + src_x] *
                     kv[(c * kh + ky) * kw + kx];
            }
          }
          ov[((n * channels + c) * oh + y) * ow + x] = acc;
        }
      }
    }
  }
  if (track) {
    Tape::active()->record([input, kernel, out, stride_h, stride_w, pad_h,
                            pad_w]() {
      const std::size_t batch = input.dim(0), channels = input.dim(1);
      const std::size_t h = input.dim(2), w = input.dim(3);
      const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
      const std::size_t oh = out.dim(2), ow = out.dim(3);
      const auto& iv = input.values();
      const auto& kv = kernel.values();
      const auto& og = out.grad();
      const bool need_i = input.tracked();
      const bool need_k = kernel.tracked();
      std::vector<double>* ig = need_i ? &input.grad() : nullptr;
      std::vector<double>* kg = need_k ? &kernel.grad() : nullptr;
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
              const double g = og[((n * channels + c) * oh + y) * ow + x];
              if (g == 0.0) continue;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t src_y =
                    static_cast<std::ptrdiff_t>(y * stride_h + ky) -
                    static_cast<std::ptrdiff_t>(pad_h);
                if (src_y < 0 || src_y >= static_cast<std::ptrdiff_t>(h)) {
                  continue;
                }
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t src_x =
                      static_cast<std::ptrdiff_t>(x * stride_w + kx) -
                      static_cast<std::ptrdiff_t>(pad_w);
                  if (src_x < 0 || src_x >= static_cast<std::ptrdiff_t>(w)) {
                    continue;
                  }
                  const std::size_t ii =
                      ((n * channels + c) * h + src_y) * w + src_x;
                  const std::size_t ki = (c * kh + ky) * kw + kx;
                  if (need_i) (*ig)[ii] += g * kv[ki];
                  if (need_k) (*kg)[ki] += g * iv[ii];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// -------------------------------------------------------------- reductions

namespace {

struct ReducePlan {
  Shape out_shape;                     // reduced dims kept as size 1
  Shape final_shape;                   // with keepdims applied
  std::vector<std::size_t> out_strides;  // per input axis, 0 when reduced
  std::size_t count = 1;               // elements folded into each output slot
};

ReducePlan make_reduce_plan(const Shape& in, std::span<const std::size_t> axes,
                            bool keepdims) {
  if (axes.empty()) throw ContractError("reduction requires at least one axis");
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t a : axes) {
    if (a >= in.size()) {
      throw ShapeError("reduction axis " + std::to_string(a) +
                       " out of range for shape " + shape_str(in));
    }
    if (reduced[a]) {
      throw ContractError("duplicate reduction axis " + std::to_string(a));
    }
    reduced[a] = true;
  }
  ReducePlan plan;
  plan.out_shape = in;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (reduced[i]) {
      plan.count *= in[i];
      plan.out_shape[i] = 1;
    }
  }
  if (plan.count == 0) {
    throw ContractError("reduction over an empty extent");
  }
  if (keepdims) {
    plan.final_shape = plan.out_shape;
  } else {
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (!reduced[i]) plan.final_shape.push_back(in[i]);
    }
  }
  const auto strides = row_major_strides(plan.out_shape);
  plan.out_strides.assign(in.size(), 0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!reduced[i]) plan.out_strides[i] = strides[i];
  }
  return plan;
}

// Calls f(input_offset, output_offset) over every input element.
template <class F>
void for_each_reduce(const Shape& in, const ReducePlan& plan, F&& f) {
  const std::size_t n = shape_numel(in);
  const std::size_t rank = in.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oi = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, oi);
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      oi += plan.out_strides[k];
      if (idx[k] < in[k]) break;
      idx[k] = 0;
      oi -= plan.out_strides[k] * in[k];
    }
  }
}

Tensor reduce_impl(const Tensor& x, std::span<const std::size_t> axes,
                   bool keepdims, bool mean) {
  if (!x.defined()) throw ContractError("reduction on undefined tensor");
  ReducePlan plan = make_reduce_plan(x.shape(), axes, keepdims);
  const bool track = recording(x.tracked());
  Tensor out = Tensor::zeros(plan.final_shape, track);
  const auto& xv = x.values();
  auto& ov = out.values();
  for_each_reduce(x.shape(), plan,
                  [&](std::size_t i, std::size_t o) { ov[o] += xv[i]; });
  if (mean) {
    const double inv = 1.0 / static_cast<double>(plan.count);
    for (double& v : ov) v *= inv;
  }
  if (track) {
    const double scale = mean ? 1.0 / static_cast<double>(plan.count) : 1.0;
    Tape::active()->record([x, out, plan = std::move(plan), scale]() {
      const auto& og = out.grad();
      auto& xg = x.grad();
      for_each_reduce(x.shape(), plan, [&](std::size_t i, std::size_t o) {
        xg[i] += og[o] * scale;
      });
    });
  }
  return out;
}

std::vector<std::size_t> all_axes(std::size_t rank) {
  std::vector<std::size_t> axes(rank);
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return axes;
}

}  // namespace

Tensor reduce_sum(const Tensor& x, std::span<const std::size_t> axes,
                  bool keepdims) {
  return reduce_impl(x, axes, keepdims, /*mean=*/false);
}

Tensor reduce_mean(const Tensor& x, std::span<const std::size_t> axes,
                   bool keepdims) {
  return reduce_impl(x, axes, keepdims, /*mean=*/true);
}

Tensor reduce_var(const Tensor& x, std::span<const std::size_t> axes,
                  bool keepdims) {
  // Built from primitives so the gradient comes from the tape.
  Tensor mu = reduce_mean(x, axes, /*keepdims=*/true);
  Tensor diff = sub(x, mu);
  return reduce_mean(mul(diff, diff), axes, keepdims);
}

Tensor reduce_sum(const Tensor& x) {
  if (!x.defined()) throw ContractError("reduction on undefined tensor");
  if (x.rank() == 0) return reshape(x, {});
  const auto axes = all_axes(x.rank());
  return reduce_sum(x, axes, /*keepdims=*/false);
}

Tensor reduce_mean(const Tensor& x) {
  if (!x.defined()) throw ContractError("reduction on undefined tensor");
  if (x.rank() == 0) return reshape(x, {});
  const auto axes = all_axes(x.rank());
  return reduce_mean(x, axes, /*keepdims=*/false);
}

Tensor reduce_var(const Tensor& x) {
  if (!x.defined()) throw ContractError("reduction on undefined tensor");
  Tensor flat = x.rank() == 0 ? reshape(x, {1}) : x;
  const auto axes = all_axes(flat.rank());
  return reduce_var(flat, axes, /*keepdims=*/false);
}

// --------------------------------------------------------- shape/indexing

Tensor reshape(const Tensor& x, Shape shape) {
  if (!x.defined()) throw ContractError("reshape on undefined tensor");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " into " +
                     shape_str(shape));
  }
  const bool track = recording(x.tracked());
  Tensor out(std::move(shape), x.values(), track);
  if (track) {
    Tape::active()->record([x, out]() {
      const auto& og = out.grad();
      auto& xg = x.grad();
      for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += og[i];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const int> columns) {
  if (!x.defined()) throw ContractError("gather_rows on undefined tensor");
  if (x.rank() != 2) {
    throw ShapeError("gather_rows expects a rank-2 tensor, got " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  if (columns.size() != rows) {
    throw ShapeError("gather_rows needs one column per row: " +
                     std::to_string(columns.size()) + " indices for " +
                     std::to_string(rows) + " rows");
  }
  for (int c : columns) {
    if (c < 0 || static_cast<std::size_t>(c) >= cols) {
      throw ContractError("gather_rows column index " + std::to_string(c) +
                          " out of range [0," + std::to_string(cols) + ")");
    }
  }
  const bool track = recording(x.tracked());
  Tensor out = Tensor::zeros({rows}, track);
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < rows; ++i) {
    ov[i] = xv[i * cols + static_cast<std::size_t>(columns[i])];
  }
  if (track) {
    std::vector<int> idx(columns.begin(), columns.end());
    Tape::active()->record([x, out, idx = std::move(idx), cols]() {
      const auto& og = out.grad();
      auto& xg = x.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        xg[i * cols + static_cast<std::size_t>(idx[i])] += og[i];
      }
    });
  }
  return out;
}

// -------------------------------------------------------------- grad check

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double eps) {
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    Tensor loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = f().value();
      vals[i] = saved - eps;
      const double down = f().value();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double ad = analytic[pi][i];
      const double rel = std::abs(ad - numeric) /
                         std::max(1e-8, std::abs(ad) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace affect
