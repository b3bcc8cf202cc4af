#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "ampgrad/layers.hpp"

namespace ampgrad {

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

struct LinearSpec {
  int64_t in = 0, out = 0;
};
struct Conv2dSpec {
  int64_t in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;
};
struct BatchNormSpec {
  int64_t channels = 0;
  double eps = 1e-5, momentum = 0.1;
};
struct ReLUSpec {};
struct MaxPoolSpec {
  int64_t kernel = 2, stride = 2;
};
struct AvgPoolSpec {
  int64_t kernel = 2, stride = 2;
};
struct FlattenSpec {};

// Two 3x3 conv units (Conv2d, BatchNorm, ReLU) with a skip connection; the
// projection (1x1 conv, stride-matched) kicks in when shape changes.
struct ResidualBlockSpec {
  int64_t in_ch = 0, out_ch = 0, stride = 1;
  bool projection_bn = true;     // BatchNorm after the projection conv
  bool force_projection = false; // install a projection even when shapes match
  double bn_eps = 1e-5, bn_momentum = 0.1;
  bool needs_projection() const { return force_projection || stride != 1 || in_ch != out_ch; }
};

using LayerSpec = std::variant<LinearSpec, Conv2dSpec, BatchNormSpec, ReLUSpec, MaxPoolSpec,
                               AvgPoolSpec, FlattenSpec, ResidualBlockSpec>;

struct ArchConfig {
  std::string name;
  Shape input_shape;  // per-sample shape: [C,H,W] for images, [D] for vectors
  int64_t num_classes = 0;
  std::vector<LayerSpec> blocks;
};

// Layer ids of one built residual block, in forward order.
struct BuiltBlock {
  int32_t conv1 = -1, bn1 = -1, relu1 = -1;
  int32_t conv2 = -1, bn2 = -1;
  int32_t ds_conv = -1, ds_bn = -1;  // -1 when the skip path is the identity
  int32_t add = -1, relu2 = -1;
  bool has_projection() const { return ds_conv >= 0; }
};

// ---------------------------------------------------------------------------
// Model: the persistent layer graph. Layer ids are assigned sequentially in
// forward order; the SoftmaxCE head is always the last layer.
// ---------------------------------------------------------------------------
template <typename S>
class Model {
 public:
  struct ParamRef {
    ParamKey key;
    std::string name;
    Tensor<S>* tensor;
    bool trainable;
  };

  const ArchConfig& config() const { return config_; }
  size_t layer_count() const { return layers_.size(); }
  const std::vector<BuiltBlock>& residual_blocks() const { return blocks_; }

  Layer<S>* layer(int32_t id) {
    if (id < 0 || static_cast<size_t>(id) >= layers_.size())
      throw ArgumentError("Model: no layer with id " + std::to_string(id));
    return layers_[static_cast<size_t>(id)].get();
  }
  const Layer<S>* layer(int32_t id) const { return const_cast<Model*>(this)->layer(id); }

  // Forward pass to logits.
  ValueRef forward(Tape<S>& tape, ValueRef x, Mode mode) {
    for (const Step& step : steps_) {
      if (step.block < 0) {
        x = tape.apply(*layers_[static_cast<size_t>(step.layer)], {x}, mode);
      } else {
        const BuiltBlock& b = blocks_[static_cast<size_t>(step.block)];
        ValueRef skip = x;
        ValueRef m = tape.apply(*layers_[static_cast<size_t>(b.conv1)], {x}, mode);
        m = tape.apply(*layers_[static_cast<size_t>(b.bn1)], {m}, mode);
        m = tape.apply(*layers_[static_cast<size_t>(b.relu1)], {m}, mode);
        m = tape.apply(*layers_[static_cast<size_t>(b.conv2)], {m}, mode);
        m = tape.apply(*layers_[static_cast<size_t>(b.bn2)], {m}, mode);
        if (b.has_projection()) {
          skip = tape.apply(*layers_[static_cast<size_t>(b.ds_conv)], {skip}, mode);
          if (b.ds_bn >= 0) skip = tape.apply(*layers_[static_cast<size_t>(b.ds_bn)], {skip}, mode);
        }
        x = tape.apply(*layers_[static_cast<size_t>(b.add)], {m, skip}, mode);
        x = tape.apply(*layers_[static_cast<size_t>(b.relu2)], {x}, mode);
      }
    }
    return x;
  }

  // Forward pass through the SoftmaxCE head; returns (loss, logits).
  std::pair<ValueRef, ValueRef> forward_loss(Tape<S>& tape, ValueRef x,
                                             const std::vector<int32_t>& labels, Mode mode) {
    ValueRef logits = forward(tape, x, mode);
    ValueRef loss = tape.apply(*layers_[static_cast<size_t>(loss_layer_)], {logits}, mode, labels);
    return {loss, logits};
  }

  int32_t loss_layer_id() const { return loss_layer_; }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    collect(out, /*trainable_only=*/true);
    return out;
  }
  // Trainable parameters plus persistent buffers (BN running stats).
  std::vector<ParamRef> state() {
    std::vector<ParamRef> out;
    collect(out, /*trainable_only=*/false);
    return out;
  }

 private:
  template <typename T>
  friend Model<T> build_model(const ArchConfig&, uint64_t);

  struct Step {
    int32_t layer = -1;  // plain layer id
    int32_t block = -1;  // index into blocks_ when >= 0
  };

  void collect(std::vector<ParamRef>& out, bool trainable_only) {
    for (auto& l : layers_) {
      for (const ParamSlotInfo& info : l->param_slots()) {
        if (trainable_only && !info.trainable) continue;
        out.push_back(ParamRef{ParamKey{l->id(), info.slot},
                               "L" + std::to_string(l->id()) + "." + info.name,
                               l->param(info.slot), info.trainable});
      }
    }
  }

  ArchConfig config_;
  std::vector<std::unique_ptr<Layer<S>>> layers_;
  std::vector<BuiltBlock> blocks_;
  std::vector<Step> steps_;
  int32_t loss_layer_ = -1;
};

// Removes every gradient transform from the model; subsequent backward passes
// equal a never-amplified run.
template <typename S>
void clear_grad_transforms(Model<S>& model) {
  for (size_t id = 0; id < model.layer_count(); ++id)
    model.layer(static_cast<int32_t>(id))->set_grad_transform(std::nullopt);
}

template <typename S>
size_t count_grad_transforms(Model<S>& model) {
  size_t n = 0;
  for (size_t id = 0; id < model.layer_count(); ++id)
    if (model.layer(static_cast<int32_t>(id))->grad_transform().has_value()) ++n;
  return n;
}

// p <- p - lr*g for every trainable parameter with an entry in grads.
template <typename S>
void sgd_step(Model<S>& model, const GradientMap<S>& grads, double lr) {
  for (auto& p : model.parameters()) {
    const Tensor<S>* g = grads.find(p.key);
    if (g == nullptr) continue;
    sgd_update(*p.tensor, *g, lr);
  }
}

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------
template <typename S>
Model<S> build_model(const ArchConfig& config, uint64_t seed) {
  if (config.num_classes <= 0) throw ConfigError("ArchConfig: num_classes must be positive");
  if (config.input_shape.empty()) throw ConfigError("ArchConfig: input_shape must be non-empty");
  Model<S> model;
  model.config_ = config;

  Shape cur = config.input_shape;  // per-sample shape, tracked for validation
  auto require_chw = [&](const char* what) {
    if (cur.size() != 3)
      throw ConfigError(std::string(what) + ": needs [C,H,W] input, have " + shape_str(cur));
  };

  auto add_layer = [&](std::unique_ptr<Layer<S>> l) -> int32_t {
    const int32_t id = static_cast<int32_t>(model.layers_.size());
    l->set_id(id);
    model.layers_.push_back(std::move(l));
    return id;
  };
  auto init_layer = [&](int32_t id) {
    auto stream = make_stream(seed, RngDomain::kInit, static_cast<uint64_t>(id));
    if (auto* lin = dynamic_cast<LinearLayer<S>*>(model.layers_[static_cast<size_t>(id)].get()))
      lin->init(stream);
    else if (auto* conv = dynamic_cast<Conv2dLayer<S>*>(model.layers_[static_cast<size_t>(id)].get()))
      conv->init(stream);
  };
  auto add_plain = [&](std::unique_ptr<Layer<S>> l) {
    const int32_t id = add_layer(std::move(l));
    init_layer(id);
    model.steps_.push_back(typename Model<S>::Step{id, -1});
    return id;
  };
  auto conv_out = [](int64_t extent, int64_t k, int64_t stride, int64_t pad) {
    const int64_t o = (extent + 2 * pad - k) / stride + 1;
    if (extent + 2 * pad < k || o <= 0)
      throw ConfigError("conv/pool output extent is non-positive");
    return o;
  };

  int64_t classifier_heads = 0;
  for (const LayerSpec& spec : config.blocks) {
    if (std::holds_alternative<LinearSpec>(spec)) {
      const auto& s = std::get<LinearSpec>(spec);
      if (cur.size() != 1 || cur[0] != s.in)
        throw ConfigError("Linear(in=" + std::to_string(s.in) + ") incompatible with input " +
                          shape_str(cur));
      add_plain(std::make_unique<LinearLayer<S>>(s.in, s.out));
      cur = {s.out};
      if (s.out == config.num_classes) ++classifier_heads;
    } else if (std::holds_alternative<Conv2dSpec>(spec)) {
      const auto& s = std::get<Conv2dSpec>(spec);
      require_chw("Conv2d");
      if (cur[0] != s.in_ch)
        throw ConfigError("Conv2d(in_ch=" + std::to_string(s.in_ch) + ") incompatible with input " +
                          shape_str(cur));
      add_plain(std::make_unique<Conv2dLayer<S>>(s.in_ch, s.out_ch, s.kernel, s.stride, s.pad));
      cur = {s.out_ch, conv_out(cur[1], s.kernel, s.stride, s.pad),
             conv_out(cur[2], s.kernel, s.stride, s.pad)};
    } else if (std::holds_alternative<BatchNormSpec>(spec)) {
      const auto& s = std::get<BatchNormSpec>(spec);
      if (cur[0] != s.channels)
        throw ConfigError("BatchNorm(channels=" + std::to_string(s.channels) +
                          ") incompatible with input " + shape_str(cur));
      add_plain(std::make_unique<BatchNormLayer<S>>(s.channels, s.eps, s.momentum));
    } else if (std::holds_alternative<ReLUSpec>(spec)) {
      add_plain(std::make_unique<ReLULayer<S>>());
    } else if (std::holds_alternative<MaxPoolSpec>(spec)) {
      const auto& s = std::get<MaxPoolSpec>(spec);
      require_chw("MaxPool");
      add_plain(std::make_unique<MaxPoolLayer<S>>(s.kernel, s.stride));
      cur = {cur[0], conv_out(cur[1], s.kernel, s.stride, 0), conv_out(cur[2], s.kernel, s.stride, 0)};
    } else if (std::holds_alternative<AvgPoolSpec>(spec)) {
      const auto& s = std::get<AvgPoolSpec>(spec);
      require_chw("AvgPool");
      add_plain(std::make_unique<AvgPoolLayer<S>>(s.kernel, s.stride));
      cur = {cur[0], conv_out(cur[1], s.kernel, s.stride, 0), conv_out(cur[2], s.kernel, s.stride, 0)};
    } else if (std::holds_alternative<FlattenSpec>(spec)) {
      int64_t flat = 1;
      for (int64_t d : cur) flat *= d;
      add_plain(std::make_unique<FlattenLayer<S>>());
      cur = {flat};
    } else {
      const auto& s = std::get<ResidualBlockSpec>(spec);
      require_chw("ResidualBlock");
      if (cur[0] != s.in_ch)
        throw ConfigError("ResidualBlock(in_ch=" + std::to_string(s.in_ch) +
                          ") incompatible with input " + shape_str(cur));
      BuiltBlock b;
      b.conv1 = add_layer(std::make_unique<Conv2dLayer<S>>(s.in_ch, s.out_ch, 3, s.stride, 1));
      b.bn1 = add_layer(std::make_unique<BatchNormLayer<S>>(s.out_ch, s.bn_eps, s.bn_momentum));
      b.relu1 = add_layer(std::make_unique<ReLULayer<S>>());
      b.conv2 = add_layer(std::make_unique<Conv2dLayer<S>>(s.out_ch, s.out_ch, 3, 1, 1));
      b.bn2 = add_layer(std::make_unique<BatchNormLayer<S>>(s.out_ch, s.bn_eps, s.bn_momentum));
      if (s.needs_projection()) {
        b.ds_conv = add_layer(std::make_unique<Conv2dLayer<S>>(s.in_ch, s.out_ch, 1, s.stride, 0));
        if (s.projection_bn)
          b.ds_bn = add_layer(std::make_unique<BatchNormLayer<S>>(s.out_ch, s.bn_eps, s.bn_momentum));
      }
      b.add = add_layer(std::make_unique<ResidualAddLayer<S>>());
      b.relu2 = add_layer(std::make_unique<ReLULayer<S>>());
      for (int32_t id : {b.conv1, b.bn1, b.relu1, b.conv2, b.bn2, b.ds_conv, b.ds_bn, b.add, b.relu2})
        if (id >= 0) init_layer(id);
      model.blocks_.push_back(b);
      model.steps_.push_back(typename Model<S>::Step{-1, static_cast<int32_t>(model.blocks_.size() - 1)});
      const int64_t oh = conv_out(cur[1], 3, s.stride, 1), ow = conv_out(cur[2], 3, s.stride, 1);
      cur = {s.out_ch, oh, ow};
    }
  }

  if (cur.size() != 1 || cur[0] != config.num_classes)
    throw ConfigError("ArchConfig '" + config.name + "': network output " + shape_str(cur) +
                      " does not match num_classes=" + std::to_string(config.num_classes));
  if (classifier_heads != 1)
    throw ConfigError("ArchConfig '" + config.name + "': expected exactly one classifier head, found " +
                      std::to_string(classifier_heads));

  model.loss_layer_ = add_layer(std::make_unique<SoftmaxCELayer<S>>());
  return model;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------
inline ArchConfig make_mlp_tiny(int64_t input_dim, int64_t num_classes, int64_t hidden = 32) {
  ArchConfig c{"mlp-tiny", {input_dim}, num_classes, {}};
  c.blocks = {LinearSpec{input_dim, hidden}, ReLUSpec{}, LinearSpec{hidden, num_classes}};
  return c;
}

// Three conv blocks sized for desk-scale CIFAR runs.
inline ArchConfig make_cnn_small(int64_t num_classes = 10) {
  ArchConfig c{"cnn-small", {3, 32, 32}, num_classes, {}};
  const int64_t ch[4] = {3, 8, 16, 32};
  for (int i = 0; i < 3; ++i) {
    c.blocks.push_back(Conv2dSpec{ch[i], ch[i + 1], 3, 1, 1});
    c.blocks.push_back(BatchNormSpec{ch[i + 1]});
    c.blocks.push_back(ReLUSpec{});
    c.blocks.push_back(MaxPoolSpec{2, 2});
  }
  c.blocks.push_back(FlattenSpec{});
  c.blocks.push_back(LinearSpec{ch[3] * 4 * 4, num_classes});
  return c;
}

inline ArchConfig make_vgg19_cifar(int64_t num_classes = 10) {
  ArchConfig c{"vgg19-cifar", {3, 32, 32}, num_classes, {}};
  const std::vector<int> plan = {64, 64, -1, 128, 128, -1, 256, 256, 256, 256, -1,
                                 512, 512, 512, 512, -1, 512, 512, 512, 512, -1};
  int64_t in_ch = 3;
  for (int v : plan) {
    if (v < 0) {
      c.blocks.push_back(MaxPoolSpec{2, 2});
    } else {
      c.blocks.push_back(Conv2dSpec{in_ch, v, 3, 1, 1});
      c.blocks.push_back(BatchNormSpec{v});
      c.blocks.push_back(ReLUSpec{});
      in_ch = v;
    }
  }
  c.blocks.push_back(FlattenSpec{});
  c.blocks.push_back(LinearSpec{512, num_classes});
  return c;
}

inline ArchConfig make_resnet_cifar(const std::string& name, const std::vector<int>& stage_blocks,
                                    int64_t num_classes) {
  ArchConfig c{name, {3, 32, 32}, num_classes, {}};
  // CIFAR-size stem: 3x3 conv, no initial maxpool
  c.blocks.push_back(Conv2dSpec{3, 64, 3, 1, 1});
  c.blocks.push_back(BatchNormSpec{64});
  c.blocks.push_back(ReLUSpec{});
  int64_t in_ch = 64;
  const int64_t widths[4] = {64, 128, 256, 512};
  for (int stage = 0; stage < 4; ++stage) {
    for (int blk = 0; blk < stage_blocks[static_cast<size_t>(stage)]; ++blk) {
      ResidualBlockSpec b;
      b.in_ch = in_ch;
      b.out_ch = widths[stage];
      b.stride = (stage > 0 && blk == 0) ? 2 : 1;
      c.blocks.push_back(b);
      in_ch = widths[stage];
    }
  }
  c.blocks.push_back(AvgPoolSpec{4, 4});
  c.blocks.push_back(FlattenSpec{});
  c.blocks.push_back(LinearSpec{512, num_classes});
  return c;
}

inline ArchConfig make_preset(const std::string& name, int64_t num_classes = 10,
                              int64_t input_dim = 16) {
  if (name == "mlp-tiny") return make_mlp_tiny(input_dim, num_classes);
  if (name == "cnn-small") return make_cnn_small(num_classes);
  if (name == "vgg19-cifar") return make_vgg19_cifar(num_classes);
  if (name == "resnet18-cifar") return make_resnet_cifar(name, {2, 2, 2, 2}, num_classes);
  if (name == "resnet34-cifar") return make_resnet_cifar(name, {3, 4, 6, 3}, num_classes);
  throw ConfigError("unknown architecture preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "AMPG", u32 version, u32 entry count, then per entry
// (name, shape, raw float32 values), little-endian throughout.
// ---------------------------------------------------------------------------
namespace detail {
inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError("checkpoint: truncated header field");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
inline void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}
inline float get_f32(std::istream& is) {
  const uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
}  // namespace detail

inline constexpr uint32_t kCheckpointVersion = 1;

template <typename S>
void save_checkpoint(Model<S>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write("AMPG", 4);
  detail::put_u32(os, kCheckpointVersion);
  auto state = model.state();
  detail::put_u32(os, static_cast<uint32_t>(state.size()));
  for (auto& p : state) {
    detail::put_u32(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u32(os, static_cast<uint32_t>(p.tensor->rank()));
    for (int64_t d : p.tensor->shape) detail::put_u32(os, static_cast<uint32_t>(d));
    for (S v : p.tensor->data) detail::put_f32(os, static_cast<float>(v));
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

template <typename S>
void load_checkpoint(Model<S>& model, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AMPG", 4) != 0)
    throw ParseError("checkpoint: bad magic in " + path);
  const uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t count = detail::get_u32(is);
  auto state = model.state();
  if (count != state.size())
    throw ParseError("checkpoint: entry count " + std::to_string(count) + " does not match model (" +
                     std::to_string(state.size()) + ")");
  for (auto& p : state) {
    const uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is || name != p.name)
      throw ParseError("checkpoint: expected entry '" + p.name + "', found '" + name + "'");
    const uint32_t rank = detail::get_u32(is);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = detail::get_u32(is);
    if (shape != p.tensor->shape)
      throw ParseError("checkpoint: shape mismatch for '" + p.name + "'");
    for (auto& v : p.tensor->data) v = static_cast<S>(detail::get_f32(is));
  }
}

}  // namespace ampgrad
