#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ampgrad/tensor.hpp"

namespace ampgrad {

enum class LayerKind {
  Input,
  Linear,
  Conv2d,
  BatchNorm,
  ReLU,
  MaxPool,
  AvgPool,
  ResidualAdd,
  Flatten,
  SoftmaxCE,
};

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "Input";
    case LayerKind::Linear: return "Linear";
    case LayerKind::Conv2d: return "Conv2d";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::AvgPool: return "AvgPool";
    case LayerKind::ResidualAdd: return "ResidualAdd";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::SoftmaxCE: return "SoftmaxCE";
  }
  return "?";
}

enum class Mode { kTrain, kEval };

// Where the amplification multiply sits relative to a node's local backward:
//  kInputSide  - every gradient the node emits is scaled, including the
//                gradients of its own parameters (they sit on the input side).
//  kOutputSide - only the gradients propagated to preceding layers are scaled;
//                the node's own parameter gradients are computed from the
//                unscaled output gradient.
enum class AmpPoint { kInputSide, kOutputSide };

inline AmpPoint amp_point_from_string(const std::string& s) {
  if (s == "input_side") return AmpPoint::kInputSide;
  if (s == "output_side") return AmpPoint::kOutputSide;
  throw ConfigError("unknown amp_point '" + s + "' (expected input_side or output_side)");
}

inline const char* amp_point_name(AmpPoint p) {
  return p == AmpPoint::kInputSide ? "input_side" : "output_side";
}

struct ValueRef {
  int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

template <typename Scalar>
class Tape;

template <typename Scalar>
class Layer;

template <typename Scalar>
struct TapeNode {
  Layer<Scalar>* layer = nullptr;  // null for leaf inputs
  std::vector<int32_t> inputs;           // tape indices of producer nodes
  Tensor<Scalar> value;                  // cached forward output
  Tensor<Scalar> out_grad;               // dLoss/dValue, filled during backward
  std::vector<Tensor<Scalar>> saved;     // layer context needed by the backward rule
  std::vector<int32_t> iaux;             // integer context (labels, argmax indices)
};

// What one node's local backward rule produces: a gradient per input edge and
// a gradient per parameter slot. The engine, not the rule, decides how the
// amplification factor is applied to these.
template <typename Scalar>
struct BackwardIO {
  std::vector<Tensor<Scalar>> input_grads;
  std::vector<std::pair<int32_t, Tensor<Scalar>>> param_grads;  // (slot, grad)
};

struct ParamSlotInfo {
  int32_t slot;
  const char* name;
  bool trainable;
};

// One differentiable operation instance. A Layer is the persistent identity a
// graph node refers to: it owns the parameters, the unique layer id and the
// optional gradient-transform factor that amplification attaches.
template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;

  // Computes the node's output from its input values and stashes whatever the
  // backward rule will need into node.saved / node.iaux.
  virtual Tensor<Scalar> compute(Tape<Scalar>& tape, TapeNode<Scalar>& node, Mode mode) = 0;

  // Local backward rule: reads node.out_grad, produces input and parameter
  // gradients. Must not apply the gradient transform itself.
  virtual BackwardIO<Scalar> backward_rule(const Tape<Scalar>& tape,
                                           const TapeNode<Scalar>& node) const = 0;

  virtual std::vector<ParamSlotInfo> param_slots() const { return {}; }
  virtual Tensor<Scalar>* param(int32_t /*slot*/) { return nullptr; }
  const Tensor<Scalar>* param(int32_t slot) const {
    return const_cast<Layer*>(this)->param(slot);
  }

  int32_t id() const { return id_; }
  void set_id(int32_t id) { id_ = id; }

  const std::optional<double>& grad_transform() const { return grad_transform_; }
  void set_grad_transform(std::optional<double> f) { grad_transform_ = std::move(f); }

 private:
  int32_t id_ = -1;
  std::optional<double> grad_transform_;
};

// Attaches an amplification factor to a node. Re-attaching overwrites.
template <typename Scalar>
void attach_grad_transform(Layer<Scalar>& node, double factor) {
  if (!std::isfinite(factor) || factor <= 0.0)
    throw ArgumentError("attach_grad_transform: factor must be finite and > 0");
  node.set_grad_transform(factor);
}

// Dynamic computation graph for one forward pass. Nodes are appended in
// execution order and freed with the tape; layers persist across tapes.
template <typename Scalar>
class Tape {
 public:
  ValueRef leaf(Tensor<Scalar> value) {
    TapeNode<Scalar> node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return ValueRef{static_cast<int32_t>(nodes_.size() - 1)};
  }

  ValueRef apply(Layer<Scalar>& layer, std::vector<ValueRef> inputs, Mode mode,
                 std::vector<int32_t> iaux = {}) {
    if (consumed_)
      throw StateError("tape already consumed by backward; build a new forward pass");
    TapeNode<Scalar> node;
    node.layer = &layer;
    node.iaux = std::move(iaux);
    node.inputs.reserve(inputs.size());
    for (ValueRef r : inputs) {
      check_ref(r);
      node.inputs.push_back(r.idx);
    }
    node.value = layer.compute(*this, node, mode);
    nodes_.push_back(std::move(node));
    return ValueRef{static_cast<int32_t>(nodes_.size() - 1)};
  }

  const TapeNode<Scalar>& node(int32_t idx) const { return nodes_.at(static_cast<size_t>(idx)); }
  TapeNode<Scalar>& node(int32_t idx) { return nodes_.at(static_cast<size_t>(idx)); }
  const Tensor<Scalar>& value(ValueRef r) const {
    check_ref(r);
    return nodes_[static_cast<size_t>(r.idx)].value;
  }
  // Gradient w.r.t. a value; empty tensor if no gradient reached it.
  const Tensor<Scalar>& grad(ValueRef r) const {
    check_ref(r);
    return nodes_[static_cast<size_t>(r.idx)].out_grad;
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void mark_consumed() { consumed_ = true; }

 private:
  void check_ref(ValueRef r) const {
    if (!r.valid() || static_cast<size_t>(r.idx) >= nodes_.size())
      throw GraphError("invalid value reference into tape");
  }

  std::vector<TapeNode<Scalar>> nodes_;
  bool consumed_ = false;
};

// Reverse-mode pass from a scalar loss node. Visits nodes in reverse
// topological order (reverse tape order), applies each node's local backward
// rule, then multiplies the emitted gradients by the node's transform factor
// if one is attached: input-side gradients always, the node's own parameter
// gradients only under AmpPoint::kInputSide.
template <typename Scalar>
GradientMap<Scalar> backward(Tape<Scalar>& tape, ValueRef loss,
                             AmpPoint amp_point = AmpPoint::kInputSide) {
  if (tape.consumed())
    throw StateError("backward: forward cache already consumed; rebuild the graph");
  if (!loss.valid() || static_cast<size_t>(loss.idx) >= tape.size())
    throw GraphError("backward: loss reference is not part of this tape");
  if (tape.node(loss.idx).value.numel() != 1)
    throw GraphError("backward: loss must be a scalar node");

  // An append-only tape encodes a DAG iff every edge points backwards.
  for (size_t i = 0; i < tape.size(); ++i)
    for (int32_t in : tape.node(static_cast<int32_t>(i)).inputs)
      if (in < 0 || static_cast<size_t>(in) >= i)
        throw GraphError("backward: cycle detected (forward-referencing edge in graph)");

  GradientMap<Scalar> grads;
  {
    auto& seed = tape.node(loss.idx).out_grad;
    seed = Tensor<Scalar>(tape.node(loss.idx).value.shape);
    seed.data[0] = Scalar{1};
  }

  for (int32_t i = loss.idx; i >= 0; --i) {
    TapeNode<Scalar>& node = tape.node(i);
    if (node.out_grad.data.empty()) continue;  // not on a path to the loss
    if (node.layer == nullptr) continue;       // leaf: gradient stays readable

    BackwardIO<Scalar> io = node.layer->backward_rule(tape, node);
    if (io.input_grads.size() != node.inputs.size())
      throw GraphError(std::string("backward rule of ") + kind_name(node.layer->kind()) +
                       " emitted wrong number of input gradients");

    if (node.layer->grad_transform().has_value()) {
      const Scalar factor = static_cast<Scalar>(*node.layer->grad_transform());
      for (auto& g : io.input_grads)
        for (auto& v : g.data) v *= factor;
      if (amp_point == AmpPoint::kInputSide) {
        for (auto& [slot, g] : io.param_grads)
          for (auto& v : g.data) v *= factor;
      }
    }

    for (size_t k = 0; k < node.inputs.size(); ++k) {
      TapeNode<Scalar>& producer = tape.node(node.inputs[k]);
      Tensor<Scalar>& g = io.input_grads[k];
      if (!g.same_shape(producer.value))
        throw ShapeError("backward: gradient shape does not match producer value");
      if (producer.out_grad.data.empty()) {
        producer.out_grad = std::move(g);
      } else {
        for (size_t j = 0; j < g.data.size(); ++j) producer.out_grad.data[j] += g.data[j];
      }
    }
    for (auto& [slot, g] : io.param_grads)
      grads.accumulate(ParamKey{node.layer->id(), slot}, g);
  }

  tape.mark_consumed();
  return grads;
}

}  // namespace ampgrad
