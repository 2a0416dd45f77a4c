#include "affect/layers.hpp"

#include <cmath>

#include "affect/errors.hpp"

namespace affect {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ContractError("uniform_init requires fan_in > 0");
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(data), /*tracked=*/true);
}

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, std::size_t in_features,
               std::size_t out_features, Rng& rng)
    : weight{name + ".weight",
             uniform_init({in_features, out_features}, in_features, rng)},
      bias{name + ".bias", Tensor::zeros({out_features}, /*tracked=*/true)} {}

Tensor Linear::forward(const Tensor& x) const {
  return add(matmul(x, weight.value), bias.value);
}

void Linear::collect_params(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, std::size_t in_channels,
               std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding, Rng& rng)
    : weight{name + ".weight",
             uniform_init({out_channels, in_channels, kernel, kernel},
                          in_channels * kernel * kernel, rng)},
      stride(stride),
      padding(padding) {}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight.value, stride, stride, padding, padding);
}

void Conv2d::collect_params(ParamList& out) { out.push_back(&weight); }

// ------------------------------------------------------- DepthwiseConv2d

DepthwiseConv2d::DepthwiseConv2d(const std::string& name, std::size_t channels,
                                 std::size_t kernel_h, std::size_t kernel_w,
                                 std::size_t stride_h, std::size_t stride_w,
                                 std::size_t pad_h, std::size_t pad_w,
                                 bool with_bias, Rng& rng)
    : weight{name + ".weight",
             uniform_init({channels, 1, kernel_h, kernel_w},
                          kernel_h * kernel_w, rng)},
      stride_h(stride_h),
      stride_w(stride_w),
      pad_h(pad_h),
      pad_w(pad_w),
      has_bias(with_bias) {
  if (with_bias) {
    bias = Parameter{name + ".bias", Tensor::zeros({channels}, true)};
  }
}

Tensor DepthwiseConv2d::forward(const Tensor& x) const {
  Tensor out = depthwise_conv2d(x, weight.value, stride_h, stride_w, pad_h,
                                pad_w);
  if (!has_bias) return out;
  const std::size_t channels = weight.value.dim(0);
  return add(out, reshape(bias.value, {1, channels, 1, 1}));
}

void DepthwiseConv2d::collect_params(ParamList& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(const std::string& name, std::size_t channels)
    : gamma{name + ".gamma", Tensor::full({channels}, 1.0, true)},
      beta{name + ".beta", Tensor::zeros({channels}, true)},
      running_mean{name + ".running_mean", Tensor::zeros({channels})},
      running_var{name + ".running_var", Tensor::full({channels}, 1.0)} {}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != gamma.value.dim(0)) {
    throw ShapeError("batchnorm expects [N," +
                     std::to_string(gamma.value.dim(0)) + ",H,W], got " +
                     shape_str(x.shape()));
  }
  const std::size_t channels = x.dim(1);
  const std::vector<std::size_t> axes = {0, 2, 3};
  Tensor mean;
  Tensor var;
  if (training) {
    mean = reduce_mean(x, axes, /*keepdims=*/true);
    var = reduce_var(x, axes, /*keepdims=*/true);
    // Fold batch moments into the running buffers outside the tape.
    auto& rm = running_mean.value.values();
    auto& rv = running_var.value.values();
    const auto& bm = mean.values();
    const auto& bv = var.values();
    for (std::size_t c = 0; c < channels; ++c) {
      rm[c] = (1.0 - momentum) * rm[c] + momentum * bm[c];
      rv[c] = (1.0 - momentum) * rv[c] + momentum * bv[c];
    }
  } else {
    mean = reshape(running_mean.value, {1, channels, 1, 1});
    var = reshape(running_var.value, {1, channels, 1, 1});
  }
  Tensor norm = div(sub(x, mean), sqrt(add_scalar(var, eps)));
  Tensor scale = reshape(gamma.value, {1, channels, 1, 1});
  Tensor shift = reshape(beta.value, {1, channels, 1, 1});
  return add(mul(norm, scale), shift);
}

void BatchNorm2d::collect_params(ParamList& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void BatchNorm2d::collect_buffers(BufferList& out) {
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ----------------------------------------------------------------- PReLU

PReLU::PReLU(const std::string& name, std::size_t channels)
    : slope{name + ".slope", Tensor::full({channels}, 0.25, true)} {}

Tensor PReLU::forward(const Tensor& x) const {
  return prelu(x, slope.value);
}

void PReLU::collect_params(ParamList& out) { out.push_back(&slope); }

// ---------------------------------------------------------------- GdConv

GdConv::GdConv(const std::string& name, std::size_t channels,
               std::size_t height, std::size_t width, Rng& rng)
    : weight{name + ".weight",
             uniform_init({channels, 1, height, width}, height * width, rng)},
      height(height),
      width(width) {}

Tensor GdConv::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(2) != height || x.dim(3) != width) {
    throw ShapeError("global depthwise conv built for " +
                     std::to_string(height) + "x" + std::to_string(width) +
                     " features, got " + shape_str(x.shape()));
  }
  return depthwise_conv2d(x, weight.value, 1, 1, 0, 0);
}

void GdConv::collect_params(ParamList& out) { out.push_back(&weight); }

// ------------------------------------------------------------- ConvBnAct

ConvBnAct::ConvBnAct(const std::string& name, std::size_t in_channels,
                     std::size_t out_channels, std::size_t kernel,
                     std::size_t stride, std::size_t padding, Rng& rng)
    : conv(name + ".conv", in_channels, out_channels, kernel, stride, padding,
           rng),
      bn(name + ".bn", out_channels),
      act(name + ".act", out_channels) {}

Tensor ConvBnAct::forward(const Tensor& x, bool training) {
  return act.forward(bn.forward(conv.forward(x), training));
}

void ConvBnAct::collect_params(ParamList& out) {
  conv.collect_params(out);
  bn.collect_params(out);
  act.collect_params(out);
}

void ConvBnAct::collect_buffers(BufferList& out) { bn.collect_buffers(out); }

// -------------------------------------------------------- DepthwiseBlock

DepthwiseBlock::DepthwiseBlock(const std::string& name,
                               std::size_t in_channels,
                               std::size_t out_channels, std::size_t stride,
                               Rng& rng)
    : dw(name + ".dw", in_channels, 3, 3, stride, stride, 1, 1,
         /*with_bias=*/false, rng),
      bn1(name + ".bn1", in_channels),
      act1(name + ".act1", in_channels),
      pw(name + ".pw", in_channels, out_channels, 1, 1, 0, rng),
      bn2(name + ".bn2", out_channels),
      act2(name + ".act2", out_channels) {}

Tensor DepthwiseBlock::forward(const Tensor& x, bool training) {
  Tensor h = act1.forward(bn1.forward(dw.forward(x), training));
  return act2.forward(bn2.forward(pw.forward(h), training));
}

void DepthwiseBlock::collect_params(ParamList& out) {
  dw.collect_params(out);
  bn1.collect_params(out);
  act1.collect_params(out);
  pw.collect_params(out);
  bn2.collect_params(out);
  act2.collect_params(out);
}

void DepthwiseBlock::collect_buffers(BufferList& out) {
  bn1.collect_buffers(out);
  bn2.collect_buffers(out);
}

}  // namespace affect
