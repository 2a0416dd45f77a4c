#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "affect/rng.hpp"
#include "affect/tensor.hpp"

namespace affect {

/// A named, learnable tensor. The optimizer holds pointers to these, so the
/// frozen flag set on the owning layer is seen immediately by the optimizer.
struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

/// A named, non-learnable tensor carried through checkpoints (running stats).
struct Buffer {
  std::string name;
  Tensor value;
};

using ParamList = std::vector<Parameter*>;
using BufferList = std::vector<Buffer*>;

/// Uniform init on [-sqrt(1/fan_in), sqrt(1/fan_in)].
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

class Linear {
 public:
  Linear(const std::string& name, std::size_t in_features,
         std::size_t out_features, Rng& rng);

  Tensor forward(const Tensor& x) const;  // x [B,in] -> [B,out]

  void collect_params(ParamList& out);

  Parameter weight;  // [in,out]
  Parameter bias;    // [out]
};

/// Standard cross-correlation layer, bias-free (a norm layer follows it).
class Conv2d {
 public:
  Conv2d(const std::string& name, std::size_t in_channels,
         std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, Rng& rng);

  Tensor forward(const Tensor& x) const;

  void collect_params(ParamList& out);

  Parameter weight;  // [out,in,k,k]
  std::size_t stride;
  std::size_t padding;
};

/// Per-channel convolution with an arbitrary rectangular kernel. Used both
/// for 3x3 spatial mixing and for the 3x1 / 1x3 attention profile convs,
/// which carry a bias.
class DepthwiseConv2d {
 public:
  DepthwiseConv2d(const std::string& name, std::size_t channels,
                  std::size_t kernel_h, std::size_t kernel_w,
                  std::size_t stride_h, std::size_t stride_w,
                  std::size_t pad_h, std::size_t pad_w, bool with_bias,
                  Rng& rng);

  Tensor forward(const Tensor& x) const;

  void collect_params(ParamList& out);

  Parameter weight;  // [C,1,kh,kw]
  Parameter bias;    // [C] when with_bias, else undefined
  std::size_t stride_h, stride_w, pad_h, pad_w;
  bool has_bias;
};

/// Batch normalization over [N,H,W] per channel, population statistics.
/// Training mode normalizes by the batch moments and folds them into the
/// running buffers; eval mode normalizes by the running buffers only.
class BatchNorm2d {
 public:
  BatchNorm2d(const std::string& name, std::size_t channels);

  Tensor forward(const Tensor& x, bool training);

  void collect_params(ParamList& out);
  void collect_buffers(BufferList& out);

  Parameter gamma;  // [C], init 1
  Parameter beta;   // [C], init 0
  Buffer running_mean;  // [C], init 0
  Buffer running_var;   // [C], init 1
  double momentum = 0.1;
  double eps = 1e-5;
};

class PReLU {
 public:
  PReLU(const std::string& name, std::size_t channels);

  Tensor forward(const Tensor& x) const;

  void collect_params(ParamList& out);

  Parameter slope;  // [C], init 0.25
};

/// Depthwise convolution whose kernel spans the entire spatial extent, so
/// each channel collapses to a single learned weighted pool: [B,C,H,W] ->
/// [B,C,1,1].
class GdConv {
 public:
  GdConv(const std::string& name, std::size_t channels, std::size_t height,
         std::size_t width, Rng& rng);

  Tensor forward(const Tensor& x) const;

  void collect_params(ParamList& out);

  Parameter weight;  // [C,1,H,W]
  std::size_t height, width;
};

/// conv -> batchnorm -> prelu.
class ConvBnAct {
 public:
  ConvBnAct(const std::string& name, std::size_t in_channels,
            std::size_t out_channels, std::size_t kernel, std::size_t stride,
            std::size_t padding, Rng& rng);

  Tensor forward(const Tensor& x, bool training);

  void collect_params(ParamList& out);
  void collect_buffers(BufferList& out);

  Conv2d conv;
  BatchNorm2d bn;
  PReLU act;
};

/// Depthwise 3x3 (strided) followed by a pointwise 1x1 expansion, each with
/// its own norm and activation. The downsampling unit of the backbone.
class DepthwiseBlock {
 public:
  DepthwiseBlock(const std::string& name, std::size_t in_channels,
                 std::size_t out_channels, std::size_t stride, Rng& rng);

  Tensor forward(const Tensor& x, bool training);

  void collect_params(ParamList& out);
  void collect_buffers(BufferList& out);

  DepthwiseConv2d dw;
  BatchNorm2d bn1;
  PReLU act1;
  Conv2d pw;
  BatchNorm2d bn2;
  PReLU act2;
};

}  // namespace affect
