#include "affect/model.hpp"

#include <cstring>

#include "affect/errors.hpp"

namespace affect {

void ModelConfig::validate() const {
  if (input_size < 8) {
    throw ConfigError("input_size must be at least 8, got " +
                      std::to_string(input_size));
  }
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (channels.empty()) throw ConfigError("channels must not be empty");
  for (std::size_t c : channels) {
    if (c == 0) throw ConfigError("channel widths must be positive");
  }
  if (attention_heads == 0) {
    throw ConfigError("attention_heads must be positive");
  }
}

std::size_t ModelConfig::feature_size() const {
  // Stem and every block are stride-2 with 3x3 kernels and padding 1, so
  // each stage maps H to ceil(H/2).
  std::size_t size = input_size;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    size = (size + 1) / 2;
  }
  return size;
}

// ----------------------------------------------------------------- DdaHead

DdaHead::DdaHead(const std::string& name, std::size_t channels, Rng& rng)
    : col_conv(name + ".col", channels, 3, 1, 1, 1, 1, 0, /*with_bias=*/true,
               rng),
      row_conv(name + ".row", channels, 1, 3, 1, 1, 0, 1, /*with_bias=*/true,
               rng) {}

Tensor DdaHead::forward(const Tensor& features) const {
  const std::vector<std::size_t> width_axis = {3};
  const std::vector<std::size_t> height_axis = {2};
  Tensor col_profile = reduce_mean(features, width_axis, /*keepdims=*/true);
  Tensor row_profile = reduce_mean(features, height_axis, /*keepdims=*/true);
  Tensor col = col_conv.forward(col_profile);  // [B,C,h,1]
  Tensor row = row_conv.forward(row_profile);  // [B,C,1,w]
  return sigmoid(add(col, row));               // broadcast to [B,C,h,w]
}

void DdaHead::collect_params(ParamList& out) {
  col_conv.collect_params(out);
  row_conv.collect_params(out);
}

// ------------------------------------------------------------------- Model

namespace {

std::vector<DepthwiseBlock> make_blocks(const ModelConfig& cfg, Rng& rng) {
  std::vector<DepthwiseBlock> blocks;
  blocks.reserve(cfg.channels.size() - 1);
  for (std::size_t i = 1; i < cfg.channels.size(); ++i) {
    blocks.emplace_back("backbone.block" + std::to_string(i - 1),
                        cfg.channels[i - 1], cfg.channels[i], /*stride=*/2,
                        rng);
  }
  return blocks;
}

std::vector<DdaHead> make_dda_heads(const ModelConfig& cfg, Rng& rng) {
  std::vector<DdaHead> heads;
  heads.reserve(cfg.attention_heads);
  for (std::size_t i = 0; i < cfg.attention_heads; ++i) {
    heads.emplace_back("dda.head" + std::to_string(i), cfg.channels.back(),
                       rng);
  }
  return heads;
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_([&config]() {
        config.validate();
        return config;
      }()),
      init_rng_(seed),
      stem_(/*name=*/"backbone.stem", config_.in_channels,
            config_.channels[0], /*kernel=*/3, /*stride=*/2, /*padding=*/1,
            init_rng_),
      blocks_(make_blocks(config_, init_rng_)),
      dda_heads_(make_dda_heads(config_, init_rng_)),
      gdconv_("gdconv", config_.channels.back(), config_.feature_size(),
              config_.feature_size(), init_rng_),
      head_va_("head_va", config_.channels.back(), 2, init_rng_),
      head_expr_("head_expr", config_.channels.back(), kNumExpressions,
                 init_rng_),
      head_au_("head_au", config_.channels.back(), kNumAus, init_rng_) {}

ModelOutput Model::forward(const Tensor& images) {
  if (!images.defined() || images.rank() != 4 ||
      images.dim(1) != config_.in_channels ||
      images.dim(2) != config_.input_size ||
      images.dim(3) != config_.input_size) {
    throw ShapeError(
        "model expects images [B," + std::to_string(config_.in_channels) +
        "," + std::to_string(config_.input_size) + "," +
        std::to_string(config_.input_size) + "], got " +
        (images.defined() ? shape_str(images.shape()) : "undefined"));
  }
  Tensor features = stem_.forward(images, training_);
  for (auto& block : blocks_) features = block.forward(features, training_);

  ModelOutput out;
  out.attention_maps.reserve(dda_heads_.size());
  for (const auto& head : dda_heads_) {
    out.attention_maps.push_back(head.forward(features));
  }
  Tensor gate = out.attention_maps[0];
  for (std::size_t i = 1; i < out.attention_maps.size(); ++i) {
    gate = maximum(gate, out.attention_maps[i]);
  }
  Tensor attended = mul(features, gate);

  Tensor pooled = gdconv_.forward(attended);  // [B,C,1,1]
  Tensor flat = reshape(pooled, {pooled.dim(0), pooled.dim(1)});

  out.va = tanh(head_va_.forward(flat));
  out.expr_logits = head_expr_.forward(flat);
  out.au_logits = head_au_.forward(flat);
  return out;
}

ParamList Model::parameters() {
  ParamList all;
  ParamGroups g = groups();
  for (auto* bucket : {&g.backbone, &g.dda, &g.gdconv, &g.heads}) {
    all.insert(all.end(), bucket->begin(), bucket->end());
  }
  return all;
}

BufferList Model::buffers() {
  BufferList all;
  stem_.collect_buffers(all);
  for (auto& block : blocks_) block.collect_buffers(all);
  return all;
}

ParamGroups Model::groups() {
  ParamGroups g;
  stem_.collect_params(g.backbone);
  for (auto& block : blocks_) block.collect_params(g.backbone);
  for (auto& head : dda_heads_) head.collect_params(g.dda);
  gdconv_.collect_params(g.gdconv);
  head_va_.collect_params(g.heads);
  head_expr_.collect_params(g.heads);
  head_au_.collect_params(g.heads);
  return g;
}

std::map<std::string, Tensor> Model::state() {
  std::map<std::string, Tensor> snapshot;
  for (Parameter* p : parameters()) {
    snapshot.emplace(p->name, Tensor(p->value.shape(), p->value.values()));
  }
  for (Buffer* b : buffers()) {
    snapshot.emplace(b->name, Tensor(b->value.shape(), b->value.values()));
  }
  return snapshot;
}

void Model::load_state(const std::map<std::string, Tensor>& state) {
  ParamList params = parameters();
  BufferList bufs = buffers();
  if (state.size() != params.size() + bufs.size()) {
    throw ContractError("state has " + std::to_string(state.size()) +
                        " entries, model needs " +
                        std::to_string(params.size() + bufs.size()));
  }
  auto fetch = [&state](const std::string& name, Tensor& dst) {
    auto it = state.find(name);
    if (it == state.end()) {
      throw ContractError("state missing entry " + name);
    }
    if (it->second.shape() != dst.shape()) {
      throw ShapeError("state entry " + name + " has shape " +
                       shape_str(it->second.shape()) + ", model expects " +
                       shape_str(dst.shape()));
    }
    dst.values() = it->second.values();
  };
  for (Parameter* p : params) fetch(p->name, p->value);
  for (Buffer* b : bufs) fetch(b->name, b->value);
}

}  // namespace affect
