#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "ampgrad/model.hpp"
#include "ampgrad/rng.hpp"

namespace ampgrad {

// Which layer kinds are eligible for amplification. BatchNormOnePerBlock
// narrows BN eligibility to one BN per residual block.
struct LayerTypeSet {
  bool batchnorm = false;
  bool relu = false;
  bool bn_one_per_block = false;

  bool empty() const { return !batchnorm && !relu && !bn_one_per_block; }

  static LayerTypeSet parse(const std::vector<std::string>& names) {
    LayerTypeSet s;
    for (const auto& n : names) {
      if (n == "BatchNorm" || n == "bn") s.batchnorm = true;
      else if (n == "ReLU" || n == "relu") s.relu = true;
      else if (n == "BatchNormOnePerBlock" || n == "bn-one-per-block") s.bn_one_per_block = true;
      else throw ConfigError("unknown layer type '" + n + "'");
    }
    return s;
  }

  std::string to_string() const {
    std::string out;
    auto append = [&](const char* n) {
      if (!out.empty()) out += "+";
      out += n;
    };
    if (batchnorm) append("BatchNorm");
    if (relu) append("ReLU");
    if (bn_one_per_block) append("BatchNormOnePerBlock");
    return out.empty() ? "none" : out;
  }
};

struct GroupOptions {
  bool use_second_bn = false;          // pick the second BN of each block instead of the first
  bool include_downsample_bn = false;  // count downsample-path BNs for BatchNormOnePerBlock
};

// The set of layers drawn for amplification (the amp subset) together with
// the eligible group G it came from.
struct AmpSelection {
  std::vector<int32_t> group;     // G, forward order
  std::vector<int32_t> selected;  // amp, ascending layer ids
  double beta = 0.0;
  double gamma = 1.0;
  uint64_t seed = 0;
};

// Collects the eligible group G in forward order. For BatchNormOnePerBlock
// this is the first BN of each residual block (second via options); BNs
// outside blocks are excluded in that mode.
template <typename S>
std::vector<int32_t> build_group(Model<S>& model, const LayerTypeSet& types,
                                 const GroupOptions& opts = {}) {
  if (types.empty())
    throw ConfigError("build_group: at least one eligible layer type is required");
  if (types.bn_one_per_block && model.residual_blocks().empty())
    throw ConfigError("build_group: BatchNormOnePerBlock requires a residual architecture");

  std::set<int32_t> ids;
  for (size_t i = 0; i < model.layer_count(); ++i) {
    const auto* l = model.layer(static_cast<int32_t>(i));
    if (types.batchnorm && l->kind() == LayerKind::BatchNorm) ids.insert(l->id());
    if (types.relu && l->kind() == LayerKind::ReLU) ids.insert(l->id());
  }
  if (types.bn_one_per_block) {
    for (const BuiltBlock& b : model.residual_blocks()) {
      ids.insert(opts.use_second_bn ? b.bn2 : b.bn1);
      if (opts.include_downsample_bn && b.ds_bn >= 0) ids.insert(b.ds_bn);
    }
  }
  if (ids.empty())
    throw ConfigError("build_group: no eligible layers of type " + types.to_string() +
                      " in model '" + model.config().name + "'");
  return std::vector<int32_t>(ids.begin(), ids.end());  // layer ids ascend in forward order
}

// Algorithm: build G from the requested layer types, then uniformly draw
// round(beta*|G|) of them without replacement with the given seed.
template <typename S>
AmpSelection get_gradient_amp_layers(Model<S>& model, double beta, const LayerTypeSet& types,
                                     uint64_t seed, const GroupOptions& opts = {}) {
  if (!(beta >= 0.0 && beta <= 1.0))
    throw ArgumentError("get_gradient_amp_layers: beta must be in [0,1]");
  AmpSelection sel;
  sel.group = build_group(model, types, opts);
  sel.beta = beta;
  sel.seed = seed;
  const size_t amp_size =
      static_cast<size_t>(round_half_away(beta * static_cast<double>(sel.group.size())));
  SplitMix64 rng(seed);
  sel.selected = sample_without_replacement(sel.group, amp_size, rng);
  std::sort(sel.selected.begin(), sel.selected.end());
  return sel;
}

// Attaches sel.gamma to every selected layer; everything else is untouched.
template <typename S>
void apply_amplification(Model<S>& model, const AmpSelection& sel) {
  for (int32_t id : sel.selected) attach_grad_transform(*model.layer(id), sel.gamma);
}

template <typename S>
void remove_amplification(Model<S>& model) {
  clear_grad_transforms(model);
}

namespace detail {
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}
inline std::string format_id_list(const std::vector<int32_t>& ids) {
  std::string out = "[";
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(ids[i]);
  }
  return out + "]";
}
}  // namespace detail

// One line per phase: phase=<i> seed=<s> beta=<b> gamma=<g> group=[ids] selected=[ids]
inline void dump_selection(std::ostream& os, int phase, const AmpSelection& sel) {
  os << "phase=" << phase << " seed=" << sel.seed << " beta=" << detail::format_real(sel.beta)
     << " gamma=" << detail::format_real(sel.gamma) << " group=" << detail::format_id_list(sel.group)
     << " selected=" << detail::format_id_list(sel.selected) << "\n";
}

}  // namespace ampgrad
