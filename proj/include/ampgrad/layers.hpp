#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ampgrad/graph.hpp"
#include "ampgrad/rng.hpp"
#include "ampgrad/tensor.hpp"

namespace ampgrad {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

// Kaiming-uniform, fan-in mode with ReLU gain: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <typename S>
void kaiming_uniform(Tensor<S>& w, int64_t fan_in, SplitMix64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.data) v = static_cast<S>(rng.next_uniform(-bound, bound));
}

// ---------------------------------------------------------------------------
// Linear: y = x W^T + b, x [N,in], W [out,in], b [out]
// ---------------------------------------------------------------------------
template <typename S>
class LinearLayer final : public Layer<S> {
 public:
  LinearLayer(int64_t in, int64_t out)
      : in_(in), out_(out), weight_({out, in}), bias_({out}) {
    if (in <= 0 || out <= 0) throw ShapeError("Linear: extents must be positive");
  }

  LayerKind kind() const override { return LayerKind::Linear; }

  void init(SplitMix64& rng) { kaiming_uniform(weight_, in_, rng); }

  Tensor<S> compute(Tape<S>& tape, TapeNode<S>& node, Mode) override {
    const Tensor<S>& x = tape.node(node.inputs.at(0)).value;
    if (x.rank() != 2 || x.dim(1) != in_)
      throw ShapeError("Linear: expected input [N," + std::to_string(in_) + "], got " +
                       shape_str(x.shape));
    const int64_t n = x.dim(0);
    Tensor<S> y({n, out_});
    ConstMatMap<S> xm(x.data.data(), n, in_);
    ConstMatMap<S> wm(weight_.data.data(), out_, in_);
    MatMap<S> ym(y.data.data(), n, out_);
    ym.noalias() = xm * wm.transpose();
    ConstMatMap<S> bm(bias_.data.data(), 1, out_);
    ym.rowwise() += bm.row(0);
    return y;
  }

  BackwardIO<S> backward_rule(const Tape<S>& tape, const TapeNode<S>& node) const override {
    const Tensor<S>& x = tape.node(node.inputs[0]).value;
    const Tensor<S>& dy = node.out_grad;
    const int64_t n = x.dim(0);
    BackwardIO<S> io;
    Tensor<S> dx({n, in_});
    Tensor<S> dw({out_, in_});
    Tensor<S> db({out_});
    ConstMatMap<S> xm(x.data.data(), n, in_);
    ConstMatMap<S> wm(weight_.data.data(), out_, in_);
    ConstMatMap<S> dym(dy.data.data(), n, out_);
    MatMap<S>(dx.data.data(), n, in_).noalias() = dym * wm;
    MatMap<S>(dw.data.data(), out_, in_).noalias() = dym.transpose() * xm;
    MatMap<S>(db.data.data(), 1, out_).noalias() = dym.colwise().sum();
    io.input_grads.push_back(std::move(dx));
    io.param_grads.emplace_back(0, std::move(dw));
    io.param_grads.emplace_back(1, std::move(db));
    return io;
  }

  std::vector<ParamSlotInfo> param_slots() const override {
    return {{0, "weight", true}, {1, "bias", true}};
  }
  Tensor<S>* param(int32_t slot) override {
    if (slot == 0) return &weight_;
    if (slot == 1) return &bias_;
    return nullptr;
  }

  int64_t in_features() const { return in_; }
  int64_t out_features() const { return out_; }

 private:
  int64_t in_, out_;
  Tensor<S> weight_, bias_;
};

// ---------------------------------------------------------------------------
// Conv2d: cross-correlation with zero padding, x [N,C,H,W], K [F,C,kh,kw].
// Forward and backward run as im2col + GEMM; the unit tests hold an
// independent nested-loop oracle against this path.
// ---------------------------------------------------------------------------
template <typename S>
class Conv2dLayer final : public Layer<S> {
 public:
  Conv2dLayer(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride = 1, int64_t pad = 0)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad),
        weight_({out_ch, in_ch, kernel, kernel}), bias_({out_ch}) {
    if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0)
      throw ShapeError("Conv2d: extents must be positive");
    if (pad < 0) throw ShapeError("Conv2d: pad must be >= 0");
  }

  LayerKind kind() const override { return LayerKind::Conv2d; }

  void init(SplitMix64& rng) { kaiming_uniform(weight_, in_ch_ * k_ * k_, rng); }

  Tensor<S> compute(Tape<S>& tape, TapeNode<S>& node, Mode) override {
    const Tensor<S>& x = tape.node(node.inputs.at(0)).value;
    if (x.rank() != 4 || x.dim(1) != in_ch_)
      throw ShapeError("Conv2d: expected input [N," + std::to_string(in_ch_) + ",H,W], got " +
                       shape_str(x.shape));
    const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int64_t oh = (h + 2 * pad_ - k_) / stride_ + 1;
    const int64_t ow = (w + 2 * pad_ - k_) / stride_ + 1;
    if (h + 2 * pad_ < k_ || w + 2 * pad_ < k_ || oh <= 0 || ow <= 0)
      throw ShapeError("Conv2d: non-positive output extent for input " + shape_str(x.shape));

    const int64_t ckk = in_ch_ * k_ * k_;
    Tensor<S> cols({n, ckk, oh * ow});
    Tensor<S> y({n, out_ch_, oh, ow});
    ConstMatMap<S> wm(weight_.data.data(), out_ch_, ckk);
    for (int64_t img = 0; img < n; ++img) {
      S* col = cols.data.data() + img * ckk * oh * ow;
      im2col(x.data.data() + img * in_ch_ * h * w, h, w, oh, ow, col);
      MatMap<S> ym(y.data.data() + img * out_ch_ * oh * ow, out_ch_, oh * ow);
      ym.noalias() = wm * ConstMatMap<S>(col, ckk, oh * ow);
      for (int64_t f = 0; f < out_ch_; ++f) ym.row(f).array() += bias_.data[static_cast<size_t>(f)];
    }
    node.saved.push_back(std::move(cols));
    return y;
  }

  BackwardIO<S> backward_rule(const Tape<S>& tape, const TapeNode<S>& node) const override {
    const Tensor<S>& x = tape.node(node.inputs[0]).value;
    const Tensor<S>& dy = node.out_grad;
    const Tensor<S>& cols = node.saved.at(0);
    const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int64_t oh = dy.dim(2), ow = dy.dim(3);
    const int64_t ckk = in_ch_ * k_ * k_;

    BackwardIO<S> io;
    Tensor<S> dx(x.shape);
    Tensor<S> dw(weight_.shape);
    Tensor<S> db(bias_.shape);
    ConstMatMap<S> wm(weight_.data.data(), out_ch_, ckk);
    MatMap<S> dwm(dw.data.data(), out_ch_, ckk);
    RowMat<S> dcol(ckk, oh * ow);
    for (int64_t img = 0; img < n; ++img) {
      ConstMatMap<S> dym(dy.data.data() + img * out_ch_ * oh * ow, out_ch_, oh * ow);
      ConstMatMap<S> colm(cols.data.data() + img * ckk * oh * ow, ckk, oh * ow);
      dwm.noalias() += dym * colm.transpose();
      for (int64_t f = 0; f < out_ch_; ++f) db.data[static_cast<size_t>(f)] += dym.row(f).sum();
      dcol.noalias() = wm.transpose() * dym;
      col2im(dcol.data(), h, w, oh, ow, dx.data.data() + img * in_ch_ * h * w);
    }
    io.input_grads.push_back(std::move(dx));
    io.param_grads.emplace_back(0, std::move(dw));
    io.param_grads.emplace_back(1, std::move(db));
    return io;
  }

  std::vector<ParamSlotInfo> param_slots() const override {
    return {{0, "weight", true}, {1, "bias", true}};
  }
  Tensor<S>* param(int32_t slot) override {
    if (slot == 0) return &weight_;
    if (slot == 1) return &bias_;
    return nullptr;
  }

  int64_t out_channels() const { return out_ch_; }

 private:
  void im2col(const S* x, int64_t h, int64_t w, int64_t oh, int64_t ow, S* col) const {
    for (int64_t c = 0; c < in_ch_; ++c) {
      const S* plane = x + c * h * w;
      for (int64_t ki = 0; ki < k_; ++ki) {
        for (int64_t kj = 0; kj < k_; ++kj) {
          S* row = col + ((c * k_ + ki) * k_ + kj) * oh * ow;
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * stride_ - pad_ + ki;
            if (iy < 0 || iy >= h) {
              std::fill(row + oy * ow, row + (oy + 1) * ow, S{0});
              continue;
            }
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t ix = ox * stride_ - pad_ + kj;
              row[oy * ow + ox] = (ix < 0 || ix >= w) ? S{0} : plane[iy * w + ix];
            }
          }
        }
      }
    }
  }

  void col2im(const S* col, int64_t h, int64_t w, int64_t oh, int64_t ow, S* dx) const {
    for (int64_t c = 0; c < in_ch_; ++c) {
      S* plane = dx + c * h * w;
      for (int64_t ki = 0; ki < k_; ++ki) {
        for (int64_t kj = 0; kj < k_; ++kj) {
          const S* row = col + ((c * k_ + ki) * k_ + kj) * oh * ow;
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * stride_ - pad_ + ki;
            if (iy < 0 || iy >= h) continue;
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t ix = ox * stride_ - pad_ + kj;
              if (ix >= 0 && ix < w) plane[iy * w + ix] += row[oy * ow + ox];
            }
          }
        }
      }
    }
  }

  int64_t in_ch_, out_ch_, k_, stride_, pad_;
  Tensor<S> weight_, bias_;
};

// ---------------------------------------------------------------------------
// BatchNorm over [N,C] or [N,C,H,W]; per-channel statistics with biased
// variance in train mode, exponential running stats (stored unbiased) for
// eval mode.
// ---------------------------------------------------------------------------
template <typename S>
class BatchNormLayer final : public Layer<S> {
 public:
  explicit BatchNormLayer(int64_t channels, double eps = 1e-5, double momentum = 0.1)
      : channels_(channels), eps_(eps), momentum_(momentum),
        gamma_(Tensor<S>::full({channels}, S{1})), beta_({channels}),
        running_mean_({channels}), running_var_(Tensor<S>::full({channels}, S{1})) {
    if (channels <= 0) throw ShapeError("BatchNorm: channels must be positive");
    if (!(eps > 0)) throw ArgumentError("BatchNorm: eps must be > 0");
    if (!(momentum > 0) || momentum > 1) throw ArgumentError("BatchNorm: momentum must be in (0,1]");
  }

  LayerKind kind() const override { return LayerKind::BatchNorm; }

  Tensor<S> compute(Tape<S>& tape, TapeNode<S>& node, Mode mode) override {
    const Tensor<S>& x = tape.node(node.inputs.at(0)).value;
    if ((x.rank() != 2 && x.rank() != 4) || x.dim(1) != channels_)
      throw ShapeError("BatchNorm: expected [N," + std::to_string(channels_) + "(,H,W)], got " +
                       shape_str(x.shape));
    const int64_t n = x.dim(0);
    const int64_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    const int64_t m = n * hw;

    Tensor<S> y(x.shape);
    Tensor<S> xhat(x.shape);
    Tensor<S> invstd({channels_});

    if (mode == Mode::kTrain) {
      if (m < 2)
        throw ShapeError("BatchNorm: train mode needs at least 2 values per channel, got " +
                         std::to_string(m));
      for (int64_t c = 0; c < channels_; ++c) {
        double sum = 0.0;
        for (int64_t i = 0; i < n; ++i) {
          const S* p = x.data.data() + (i * channels_ + c) * hw;
          for (int64_t j = 0; j < hw; ++j) sum += static_cast<double>(p[j]);
        }
        const double mean = sum / static_cast<double>(m);
        double sqsum = 0.0;
        for (int64_t i = 0; i < n; ++i) {
          const S* p = x.data.data() + (i * channels_ + c) * hw;
          for (int64_t j = 0; j < hw; ++j) {
            const double d = static_cast<double>(p[j]) - mean;
            sqsum += d * d;
          }
        }
        const double var = sqsum / static_cast<double>(m);  // biased
        const S istd = static_cast<S>(1.0 / std::sqrt(var + eps_));
        invstd.data[static_cast<size_t>(c)] = istd;
        const S g = gamma_.data[static_cast<size_t>(c)];
        const S b = beta_.data[static_cast<size_t>(c)];
        const S mu = static_cast<S>(mean);
        for (int64_t i = 0; i < n; ++i) {
          const S* p = x.data.data() + (i * channels_ + c) * hw;
          S* xh = xhat.data.data() + (i * channels_ + c) * hw;
          S* yp = y.data.data() + (i * channels_ + c) * hw;
          for (int64_t j = 0; j < hw; ++j) {
            xh[j] = (p[j] - mu) * istd;
            yp[j] = g * xh[j] + b;
          }
        }
        const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
        auto& rm = running_mean_.data[static_cast<size_t>(c)];
        auto& rv = running_var_.data[static_cast<size_t>(c)];
        rm = static_cast<S>((1.0 - momentum_) * static_cast<double>(rm) + momentum_ * mean);
        rv = static_cast<S>((1.0 - momentum_) * static_cast<double>(rv) + momentum_ * unbiased);
      }
      node.iaux.push_back(1);
    } else {
      for (int64_t c = 0; c < channels_; ++c) {
        const S mu = running_mean_.data[static_cast<size_t>(c)];
        const S istd = static_cast<S>(
            1.0 / std::sqrt(static_cast<double>(running_var_.data[static_cast<size_t>(c)]) + eps_));
        invstd.data[static_cast<size_t>(c)] = istd;
        const S g = gamma_.data[static_cast<size_t>(c)];
        const S b = beta_.data[static_cast<size_t>(c)];
        for (int64_t i = 0; i < n; ++i) {
          const S* p = x.data.data() + (i * channels_ + c) * hw;
          S* xh = xhat.data.data() + (i * channels_ + c) * hw;
          S* yp = y.data.data() + (i * channels_ + c) * hw;
          for (int64_t j = 0; j < hw; ++j) {
            xh[j] = (p[j] - mu) * istd;
            yp[j] = g * xh[j] + b;
          }
        }
      }
      node.iaux.push_back(0);
    }
    node.saved.push_back(std::move(xhat));
    node.saved.push_back(std::move(invstd));
    return y;
  }

  BackwardIO<S> backward_rule(const Tape<S>&, const TapeNode<S>& node) const override {
    const Tensor<S>& dy = node.out_grad;
    const Tensor<S>& xhat = node.saved.at(0);
    const Tensor<S>& invstd = node.saved.at(1);
    const bool train = node.iaux.at(node.iaux.size() - 1) == 1;
    const int64_t n = dy.dim(0);
    const int64_t hw = dy.rank() == 4 ? dy.dim(2) * dy.dim(3) : 1;
    const int64_t m = n * hw;

    BackwardIO<S> io;
    Tensor<S> dx(dy.shape);
    Tensor<S> dgamma({channels_});
    Tensor<S> dbeta({channels_});
    for (int64_t c = 0; c < channels_; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const S* dyp = dy.data.data() + (i * channels_ + c) * hw;
        const S* xh = xhat.data.data() + (i * channels_ + c) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          sum_dy += static_cast<double>(dyp[j]);
          sum_dy_xhat += static_cast<double>(dyp[j]) * static_cast<double>(xh[j]);
        }
      }
      dgamma.data[static_cast<size_t>(c)] = static_cast<S>(sum_dy_xhat);
      dbeta.data[static_cast<size_t>(c)] = static_cast<S>(sum_dy);
      const S g = gamma_.data[static_cast<size_t>(c)];
      const S istd = invstd.data[static_cast<size_t>(c)];
      if (train) {
        const S mean_dy = static_cast<S>(sum_dy / static_cast<double>(m));
        const S mean_dy_xhat = static_cast<S>(sum_dy_xhat / static_cast<double>(m));
        for (int64_t i = 0; i < n; ++i) {
          const S* dyp = dy.data.data() + (i * channels_ + c) * hw;
          const S* xh = xhat.data.data() + (i * channels_ + c) * hw;
          S* dxp = dx.data.data() + (i * channels_ + c) * hw;
          for (int64_t j = 0; j < hw; ++j)
            dxp[j] = g * istd * (dyp[j] - mean_dy - xh[j] * mean_dy_xhat);
        }
      } else {
        // eval-mode stats are constants
        for (int64_t i = 0; i < n; ++i) {
          const S* dyp = dy.data.data() + (i * channels_ + c) * hw;
          S* dxp = dx.data.data() + (i * channels_ + c) * hw;
          for (int64_t j = 0; j < hw; ++j) dxp[j] = g * istd * dyp[j];
        }
      }
    }
    io.input_grads.push_back(std::move(dx));
    io.param_grads.emplace_back(0, std::move(dgamma));
    io.param_grads.emplace_back(1, std::move(dbeta));
    return io;
  }

  std::vector<ParamSlotInfo> param_slots() const override {
    return {{0, "gamma", true}, {1, "beta", true},
            {2, "running_mean", false}, {3, "running_var", false}};
  }
  Tensor<S>* param(int32_t slot) override {
    switch (slot) {
      case 0: return &gamma_;
      case 1: return &beta_;
      case 2: return &running_mean_;
      case 3: return &running_var_;
      default: return nullptr;
    }
  }

  int64_t channels() const { return channels_; }
  double eps() const { return eps_; }

 private:
  int64_t channels_;
  double eps_, momentum_;
  Tensor<S> gamma_, beta_, running_mean_, running_var_;
};

// ---------------------------------------------------------------------------
// ReLU; subgradient 0 at 0.
// ---------------------------------------------------------------------------
template <typename S>
class ReLULayer final : public Layer<S> {
 public:
  LayerKind kind() const override { return LayerKind::ReLU; }

  Tensor<S> compute(Tape<S>& tape, TapeNode<S>& node, Mode) override {
    const Tensor<S>& x = tape.node(node.inputs.at(0)).value;
    Tensor<S> y(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > S{0} ? x.data[i] : S{0};
    return y;
  }

  BackwardIO<S> backward_rule(const Tape<S>& tape, const TapeNode<S>& node) const override {
    const Tensor<S>& x = tape.node(node.inputs[0]).value;
    const Tensor<S>& dy = node.out_grad;
    BackwardIO<S> io;
    Tensor<S> dx(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) dx.data[i] = x.data[i] > S{0} ? dy.data[i] : S{0};
    io.input_grads.push_back(std::move(dx));
    return io;
  }
};

// ---------------------------------------------------------------------------
// MaxPool / AvgPool over square windows, no padding. MaxPool routes the
// gradient to the argmax, ties broken by the first index in row-major window
// scan; AvgPool splits it evenly.
// ---------------------------------------------------------------------------
template <typename S>
class MaxPoolLayer final : public Layer<S> {
 public:
  MaxPoolLayer(int64_t kernel, int64_t stride) : k_(kernel), stride_(stride) {
    if (kernel <= 0 || stride <= 0) throw ShapeError("MaxPool: extents must be positive");
  }

  LayerKind kind() const override { return LayerKind::MaxPool; }

  Tensor<S> compute(Tape<S>& tape, TapeNode<S>& node, Mode) override {
    const Tensor<S>& x = tape.node(node.inputs.at(0)).value;
    if (x.rank() != 4) throw ShapeError("MaxPool: expected [N,C,H,W], got " + shape_str(x.shape));
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < k_ || w < k_)
      throw ShapeError("MaxPool: spatial extents must be >= kernel, got " + shape_str(x.shape));
    const int64_t oh = (h - k_) / stride_ + 1, ow = (w - k_) / stride_ + 1;
    Tensor<S> y({n, c, oh, ow});
    node.iaux.resize(static_cast<size_t>(n * c * oh * ow));
    int64_t out = 0;
    for (int64_t i = 0; i < n * c; ++i) {
      const S* plane = x.data.data() + i * h * w;
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox, ++out) {
          S best = -std::numeric_limits<S>::infinity();
          int32_t best_idx = 0;
          for (int64_t ki = 0; ki < k_; ++ki) {
            for (int64_t kj = 0; kj < k_; ++kj) {
              const int64_t idx = (oy * stride_ + ki) * w + (ox * stride_ + kj);
              if (plane[idx] > best) {  // strict: first index wins ties
                best = plane[idx];
                best_idx = static_cast<int32_t>(idx);
              }
            }
          }
          y.data[static_cast<size_t>(out)] = best;
          node.iaux[static_cast<size_t>(out)] = best_idx;
        }
      }
    }
    return y;
  }

  BackwardIO<S> backward_rule(const Tape<S>& tape, const TapeNode<S>& node) const override {
    const Tensor<S>& x = tape.node(node.inputs[0]).value;
    const Tensor<S>& dy = node.out_grad;
    const int64_t h = x.dim(2), w = x.dim(3);
    const int64_t per_plane = dy.dim(2) * dy.dim(3);
    BackwardIO<S> io;
    Tensor<S> dx(x.shape);
    for (int64_t i = 0; i < x.dim(0) * x.dim(1); ++i) {
      S* plane = dx.data.data() + i * h * w;
      for (int64_t o = 0; o < per_plane; ++o)
        plane[node.iaux[static_cast<size_t>(i * per_plane + o)]] +=
            dy.data[static_cast<size_t>(i * per_plane + o)];
    }
    io.input_grads.push_back(std::move(dx));
    return io;
  }

 private:
  int64_t k_, stride_;
};

template <typename S>
class AvgPoolLayer final : public Layer<S> {
 public:
  AvgPoolLayer(int64_t kernel, int64_t stride) : k_(kernel), stride_(stride) {
    if (kernel <= 0 || stride <= 0) throw ShapeError("AvgPool: extents must be positive");
  }

  LayerKind kind() const override { return LayerKind::AvgPool; }

  Tensor<S> compute(Tape<S>& tape, TapeNode<S>& node, Mode) override {
    const Tensor<S>& x = tape.node(node.inputs.at(0)).value;
    if (x.rank() != 4) throw ShapeError("AvgPool: expected [N,C,H,W], got " + shape_str(x.shape));
    const int64_t h = x.dim(2), w = x.dim(3);
    if (h < k_ || w < k_)
      throw ShapeError("AvgPool: spatial extents must be >= kernel, got " + shape_str(x.shape));
    const int64_t oh = (h - k_) / stride_ + 1, ow = (w - k_) / stride_ + 1;
    Tensor<S> y({x.dim(0), x.dim(1), oh, ow});
    const S scale = S{1} / static_cast<S>(k_ * k_);
    int64_t out = 0;
    for (int64_t i = 0; i < x.dim(0) * x.dim(1); ++i) {
      const S* plane = x.data.data() + i * h * w;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox, ++out) {
          S acc{0};
          for (int64_t ki = 0; ki < k_; ++ki)
            for (int64_t kj = 0; kj < k_; ++kj)
              acc += plane[(oy * stride_ + ki) * w + (ox * stride_ + kj)];
          y.data[static_cast<size_t>(out)] = acc * scale;
        }
    }
    return y;
  }

  BackwardIO<S> backward_rule(const Tape<S>& tape, const TapeNode<S>& node) const override {
    const Tensor<S>& x = tape.node(node.inputs[0]).value;
    const Tensor<S>& dy = node.out_grad;
    const int64_t h = x.dim(2), w = x.dim(3);
    const int64_t oh = dy.dim(2), ow = dy.dim(3);
    const S scale = S{1} / static_cast<S>(k_ * k_);
    BackwardIO<S> io;
    Tensor<S> dx(x.shape);
    for (int64_t i = 0; i < x.dim(0) * x.dim(1); ++i) {
      S* plane = dx.data.data() + i * h * w;
      const S* dyp = dy.data.data() + i * oh * ow;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          const S g = dyp[oy * ow + ox] * scale;
          for (int64_t ki = 0; ki < k_; ++ki)
            for (int64_t kj = 0; kj < k_; ++kj)
              plane[(oy * stride_ + ki) * w + (ox * stride_ + kj)] += g;
        }
    }
    io.input_grads.push_back(std::move(dx));
    return io;
  }

 private:
  int64_t k_, stride_;
};

// ---------------------------------------------------------------------------
// ResidualAdd: y = a + b
// ---------------------------------------------------------------------------
template <typename S>
class ResidualAddLayer final : public Layer<S> {
 public:
  LayerKind kind() const override { return LayerKind::ResidualAdd; }

  Tensor<S> compute(Tape<S>& tape, TapeNode<S>& node, Mode) override {
    const Tensor<S>& a = tape.node(node.inputs.at(0)).value;
    const Tensor<S>& b = tape.node(node.inputs.at(1)).value;
    if (!a.same_shape(b))
      throw ShapeError("ResidualAdd: shape mismatch " + shape_str(a.shape) + " vs " +
                       shape_str(b.shape));
    Tensor<S> y(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    return y;
  }

  BackwardIO<S> backward_rule(const Tape<S>&, const TapeNode<S>& node) const override {
    BackwardIO<S> io;
    Tensor<S> da = node.out_grad;
    Tensor<S> db = node.out_grad;
    io.input_grads.push_back(std::move(da));
    io.input_grads.push_back(std::move(db));
    return io;
  }
};

// ---------------------------------------------------------------------------
// Flatten to [N, rest]
// ---------------------------------------------------------------------------
template <typename S>
class FlattenLayer final : public Layer<S> {
 public:
  LayerKind kind() const override { return LayerKind::Flatten; }

  Tensor<S> compute(Tape<S>& tape, TapeNode<S>& node, Mode) override {
    const Tensor<S>& x = tape.node(node.inputs.at(0)).value;
    if (x.rank() < 2) throw ShapeError("Flatten: expected rank >= 2, got " + shape_str(x.shape));
    return x.reshaped({x.dim(0), x.numel() / x.dim(0)});
  }

  BackwardIO<S> backward_rule(const Tape<S>& tape, const TapeNode<S>& node) const override {
    BackwardIO<S> io;
    io.input_grads.push_back(node.out_grad.reshaped(tape.node(node.inputs[0]).value.shape));
    return io;
  }
};

// ---------------------------------------------------------------------------
// Softmax cross-entropy over [N,K] logits with integer labels; mean over the
// batch, max-subtraction stabilized. backward = (softmax - onehot)/N.
// ---------------------------------------------------------------------------
template <typename S>
class SoftmaxCELayer final : public Layer<S> {
 public:
  LayerKind kind() const override { return LayerKind::SoftmaxCE; }

  // Labels ride in as node iaux; use Tape::apply(..., labels).
  Tensor<S> compute(Tape<S>& tape, TapeNode<S>& node, Mode) override {
    const Tensor<S>& logits = tape.node(node.inputs.at(0)).value;
    if (logits.rank() != 2)
      throw ShapeError("SoftmaxCE: expected logits [N,K], got " + shape_str(logits.shape));
    const int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(node.iaux.size()) != n)
      throw ShapeError("SoftmaxCE: need one label per row, got " +
                       std::to_string(node.iaux.size()) + " for N=" + std::to_string(n));
    Tensor<S> probs(logits.shape);
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const int32_t label = node.iaux[static_cast<size_t>(i)];
      if (label < 0 || label >= k)
        throw ArgumentError("SoftmaxCE: label " + std::to_string(label) + " out of range [0," +
                            std::to_string(k) + ")");
      const S* row = logits.data.data() + i * k;
      S* prow = probs.data.data() + i * k;
      S maxv = row[0];
      for (int64_t j = 1; j < k; ++j) maxv = std::max(maxv, row[j]);
      double z = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        prow[j] = std::exp(row[j] - maxv);
        z += static_cast<double>(prow[j]);
      }
      for (int64_t j = 0; j < k; ++j) prow[j] = static_cast<S>(static_cast<double>(prow[j]) / z);
      total += std::log(z) - static_cast<double>(row[label] - maxv);
    }
    node.saved.push_back(std::move(probs));
    Tensor<S> loss({1});
    loss.data[0] = static_cast<S>(total / static_cast<double>(n));
    return loss;
  }

  BackwardIO<S> backward_rule(const Tape<S>&, const TapeNode<S>& node) const override {
    const Tensor<S>& probs = node.saved.at(0);
    const int64_t n = probs.dim(0), k = probs.dim(1);
    const S gout = node.out_grad.data[0];
    BackwardIO<S> io;
    Tensor<S> dlogits(probs.shape);
    const S inv_n = S{1} / static_cast<S>(n);
    for (int64_t i = 0; i < n; ++i) {
      const S* prow = probs.data.data() + i * k;
      S* drow = dlogits.data.data() + i * k;
      const int32_t label = node.iaux[static_cast<size_t>(i)];
      for (int64_t j = 0; j < k; ++j)
        drow[j] = gout * inv_n * (prow[j] - (j == label ? S{1} : S{0}));
    }
    io.input_grads.push_back(std::move(dlogits));
    return io;
  }
};

}  // namespace ampgrad
