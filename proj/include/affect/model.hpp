#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "affect/labels.hpp"
#include "affect/layers.hpp"
#include "affect/tensor.hpp"

namespace affect {

struct ModelConfig {
  std::size_t input_size = 112;
  std::size_t in_channels = 3;
  /// First entry is the stem width; each further entry adds one stride-2
  /// depthwise block, so the feature map halves once per entry.
  std::vector<std::size_t> channels = {16, 32, 64};
  std::size_t attention_heads = 2;

  void validate() const;  // throws ConfigError

  /// Spatial side of the feature map entering attention and pooling.
  std::size_t feature_size() const;
};

struct ModelOutput {
  Tensor va;           // [B,2], tanh-bounded valence/arousal
  Tensor expr_logits;  // [B,kNumExpressions]
  Tensor au_logits;    // [B,kNumAus]
  /// One map per attention head, each [B,C,h,w] in (0,1). Kept for the
  /// consistency penalty between heads.
  std::vector<Tensor> attention_maps;
};

/// Parameters bucketed by the stage-1 freeze boundary.
struct ParamGroups {
  ParamList backbone;
  ParamList dda;
  ParamList gdconv;
  ParamList heads;
};

/// One attention head: mean-pooled column and row profiles, each refined by
/// a small depthwise conv, recombined by broadcast addition and squashed to
/// a gate in (0,1).
class DdaHead {
 public:
  DdaHead(const std::string& name, std::size_t channels, Rng& rng);

  Tensor forward(const Tensor& features) const;  // [B,C,h,w] -> [B,C,h,w]

  void collect_params(ParamList& out);

  DepthwiseConv2d col_conv;  // kernel [C,1,3,1], pad (1,0)
  DepthwiseConv2d row_conv;  // kernel [C,1,1,3], pad (0,1)
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  /// images [B,in_channels,input_size,input_size].
  ModelOutput forward(const Tensor& images);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  const ModelConfig& config() const { return config_; }

  ParamList parameters();
  BufferList buffers();
  ParamGroups groups();

  /// Deep copies of every parameter and buffer, keyed by name.
  std::map<std::string, Tensor> state();
  /// Restores a state() snapshot; requires exactly matching names/shapes.
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  ModelConfig config_;
  bool training_ = false;
  // Declared before the layers: the member init order below is the draw
  // order, which fixes the parameter layout for a given seed.
  Rng init_rng_;
  ConvBnAct stem_;
  std::vector<DepthwiseBlock> blocks_;
  std::vector<DdaHead> dda_heads_;
  GdConv gdconv_;
  Linear head_va_;
  Linear head_expr_;
  Linear head_au_;
};

}  // namespace affect
