#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ampgrad/common.hpp"

namespace ampgrad {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

template <typename Scalar>
using AlignedVector = std::vector<Scalar, AlignedAllocator<Scalar>>;

// Dense n-dimensional array, row-major, with an optional gradient buffer of
// the same extent. Scalar is float for training and double for the
// finite-difference check mode. Storage is 64-byte aligned (see
// AlignedAllocator for why).
template <typename Scalar>
struct Tensor {
  Shape shape;
  AlignedVector<Scalar> data;
  AlignedVector<Scalar> grad;  // empty means "no gradient attached"

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), Scalar{0}) {}
  Tensor(Shape s, AlignedVector<Scalar> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw ShapeError("tensor data length does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, Scalar v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }

  Scalar& operator[](size_t i) { return data[i]; }
  const Scalar& operator[](size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), Scalar{0});
  }
  bool has_grad() const { return !grad.empty(); }

  Tensor reshaped(Shape s) const {
    if (numel_of(s) != numel()) throw ShapeError("reshape changes element count");
    Tensor t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t;
    t.shape = shape;
    t.data.reserve(data.size());
    for (Scalar v : data) t.data.push_back(static_cast<T>(v));
    return t;
  }

  bool all_finite() const {
    for (Scalar v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

// Identity of one parameter tensor: the owning layer plus a slot index
// (0 = weight/gamma, 1 = bias/beta).
struct ParamKey {
  int32_t layer_id = -1;
  int32_t slot = 0;
  bool operator<(const ParamKey& o) const {
    return layer_id != o.layer_id ? layer_id < o.layer_id : slot < o.slot;
  }
  bool operator==(const ParamKey& o) const { return layer_id == o.layer_id && slot == o.slot; }
};

// Gradients keyed by parameter identity, ordered by (layer_id, slot) so
// iteration is deterministic.
template <typename Scalar>
class GradientMap {
 public:
  using Map = std::map<ParamKey, Tensor<Scalar>>;

  Tensor<Scalar>& accumulate(ParamKey key, const Tensor<Scalar>& g) {
    auto it = grads_.find(key);
    if (it == grads_.end()) {
      it = grads_.emplace(key, g).first;
    } else {
      if (!it->second.same_shape(g)) throw ShapeError("gradient shape mismatch on accumulation");
      for (size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
    }
    return it->second;
  }

  const Tensor<Scalar>* find(ParamKey key) const {
    auto it = grads_.find(key);
    return it == grads_.end() ? nullptr : &it->second;
  }
  const Tensor<Scalar>& at(ParamKey key) const {
    auto it = grads_.find(key);
    if (it == grads_.end()) throw ArgumentError("GradientMap: no entry for requested parameter");
    return it->second;
  }

  size_t size() const { return grads_.size(); }
  typename Map::const_iterator begin() const { return grads_.begin(); }
  typename Map::const_iterator end() const { return grads_.end(); }

 private:
  Map grads_;
};

// Central-difference gradient of a scalar function, (f(x+eps e_i) - f(x-eps e_i)) / 2eps.
// This is the independent oracle the backward implementations are tested
// against; it must stay free of any autograd machinery.
template <typename Scalar, typename F>
Tensor<Scalar> finite_diff_grad(F&& f, const Tensor<Scalar>& x, Scalar eps) {
  if (!(eps > Scalar{0})) throw ArgumentError("finite_diff_grad: eps must be positive");
  Tensor<Scalar> g(x.shape);
  Tensor<Scalar> probe = x;
  for (size_t i = 0; i < probe.data.size(); ++i) {
    const Scalar saved = probe.data[i];
    probe.data[i] = saved + eps;
    const double fp = static_cast<double>(f(probe));
    probe.data[i] = saved - eps;
    const double fm = static_cast<double>(f(probe));
    probe.data[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: function returned a non-finite value");
    g.data[i] = static_cast<Scalar>((fp - fm) / (2.0 * static_cast<double>(eps)));
  }
  return g;
}

// Scale-relative infinity-norm error between two gradients.
template <typename Scalar>
double rel_error(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.same_shape(b)) throw ShapeError("rel_error: shape mismatch");
  double max_diff = 0.0, max_mag = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    max_mag = std::max({max_mag, std::abs(static_cast<double>(a.data[i])),
                        std::abs(static_cast<double>(b.data[i]))});
  }
  return max_diff / std::max(max_mag, 1e-12);
}

// p <- p - lr * g
template <typename Scalar>
void sgd_update(Tensor<Scalar>& param, const Tensor<Scalar>& grad, double lr) {
  if (!(lr >= 0.0)) throw ArgumentError("sgd_update: learning rate must be non-negative");
  if (!param.same_shape(grad)) throw ShapeError("sgd_update: parameter/gradient shape mismatch");
  for (size_t i = 0; i < param.data.size(); ++i)
    param.data[i] -= static_cast<Scalar>(lr) * grad.data[i];
}

}  // namespace ampgrad
