// Copyright 2026 The stepfx Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>
#include <Eigen/QR>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stepfx/error.hpp"
#include "stepfx/nn/tensor.hpp"
#include "stepfx/random.hpp"

namespace stepfx::nn {

enum class Mode { kTrain, kInfer };

template <typename Scalar>
struct Param {
  Param(std::string n, Shape shape)
      : name(std::move(n)), value(shape), grad(shape) {}
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
};

template <typename Scalar>
using ParamList = std::vector<Param<Scalar>*>;

// ---------------------------------------------------------------------------
// Initializers

template <typename Scalar>
void glorot_uniform(Tensor<Scalar>& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    t[i] = static_cast<Scalar>(rng.uniform(-limit, limit));
  }
}

/// rows x cols matrix with orthonormal columns (rows >= cols) or rows.
template <typename Scalar>
void orthogonal(Tensor<Scalar>& t, int rows, int cols, Rng& rng) {
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small);
  for (int j = 0; j < small; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  if (rows < cols) q.transposeInPlace();
  t.mat(rows, cols) = q.cast<Scalar>();
}

// ---------------------------------------------------------------------------
// Layer interface

/// Single-input layer. forward() caches what backward() needs; infer() is
/// const and safe to call from many threads on a finished model.
template <typename Scalar>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const noexcept { return name_; }
  virtual std::string kind() const = 0;
  virtual nlohmann::json config() const { return nlohmann::json::object(); }

  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Rng& rng) = 0;
  /// Accumulates parameter gradients and returns the input gradient.
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& dy) = 0;
  virtual Tensor<Scalar> infer(const Tensor<Scalar>& x) const = 0;

  virtual ParamList<Scalar> params() { return {}; }
  virtual void init(Rng&) {}

  /// Hash of the piecewise branch taken by the last forward() (max-pool
  /// winners); 0 for smooth layers.
  virtual std::uint64_t branch_signature() const { return 0; }

  nlohmann::json describe() const {
    return {{"kind", kind()}, {"name", name_}, {"config", config()}};
  }

 protected:
  void require_forward(bool cached) const {
    if (!cached) throw Error(name_ + ": backward called before forward");
  }

 private:
  std::string name_;
};

// ---------------------------------------------------------------------------
// Convolution and pooling

namespace detail {

template <typename Scalar>
void im2col(const Scalar* img, int channels, int h, int w, int k,
            RowMatrix<Scalar>& cols) {
  const int pad = k / 2;
  cols.resize(static_cast<Eigen::Index>(channels) * k * k,
              static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.row((c * k + ky) * k + kx).data();
        for (int y = 0; y < h; ++y) {
          Scalar* d = dst + static_cast<std::ptrdiff_t>(y) * w;
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h) {
            std::fill(d, d + w, Scalar(0));
            continue;
          }
          const Scalar* s = img + (static_cast<std::ptrdiff_t>(c) * h + iy) * w;
          const int x0 = std::max(0, pad - kx);
          const int x1 = std::min(w, w + pad - kx);
          std::fill(d, d + x0, Scalar(0));
          std::copy(s + x0 + kx - pad, s + x1 + kx - pad, d + x0);
          std::fill(d + x1, d + w, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, int channels, int h, int w, int k,
            Scalar* img) {
  const int pad = k / 2;
  std::fill(img, img + static_cast<std::ptrdiff_t>(channels) * h * w, Scalar(0));
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.row((c * k + ky) * k + kx).data();
        for (int y = 0; y < h; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const Scalar* s = src + static_cast<std::ptrdiff_t>(y) * w;
          Scalar* d = img + (static_cast<std::ptrdiff_t>(c) * h + iy) * w;
          const int x0 = std::max(0, pad - kx);
          const int x1 = std::min(w, w + pad - kx);
          for (int x = x0; x < x1; ++x) d[x + kx - pad] += s[x];
        }
      }
    }
  }
}

}  // namespace detail

/// Same-padded stride-1 2-D convolution on (B, C, H, W).
template <typename Scalar>
class Conv2d : public Layer<Scalar> {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel = 3)
      : Layer<Scalar>(std::move(name)),
        in_(in_channels),
        out_(out_channels),
        k_(kernel),
        weight_(this->name() + ".weight", {out_channels, in_channels, kernel, kernel}),
        bias_(this->name() + ".bias", {out_channels}) {
    if (kernel < 1 || kernel % 2 == 0) {
      throw ValidationError("kernel", "convolution kernel must be odd");
    }
  }

  std::string kind() const override { return "conv2d"; }
  nlohmann::json config() const override {
    return {{"in", in_}, {"out", out_}, {"kernel", k_}};
  }

  /// The first layer of a model never needs its input gradient.
  void set_skip_input_grad(bool skip) { skip_input_grad_ = skip; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, Rng&) override {
    input_ = x;
    return infer(x);
  }

  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    expect_shape("conv2d input", x.shape(), {-1, in_, -1, -1});
    const int b = x.dim(0), h = x.dim(2), w = x.dim(3);
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    Tensor<Scalar> y({b, out_, h, w});
    const auto wm = weight_.value.mat(out_, in_ * k_ * k_);
    const auto bias = bias_.value.vec();
    RowMatrix<Scalar> cols;
    for (int n = 0; n < b; ++n) {
      detail::im2col(x.data() + n * in_ * hw, in_, h, w, k_, cols);
      MatrixMap<Scalar> yn(y.data() + n * out_ * hw, out_, hw);
      yn.noalias() = wm * cols;
      yn.colwise() += bias;
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(input_.size() > 0);
    const int b = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    expect_shape("conv2d grad", dy.shape(), {b, out_, h, w});
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    const auto wm = weight_.value.mat(out_, in_ * k_ * k_);
    auto dwm = weight_.grad.mat(out_, in_ * k_ * k_);
    auto& db = bias_.grad.vec();
    Tensor<Scalar> dx;
    if (!skip_input_grad_) dx = Tensor<Scalar>(input_.shape());
    RowMatrix<Scalar> cols;
    RowMatrix<Scalar> dcols;
    for (int n = 0; n < b; ++n) {
      detail::im2col(input_.data() + n * in_ * hw, in_, h, w, k_, cols);
      ConstMatrixMap<Scalar> dyn(dy.data() + n * out_ * hw, out_, hw);
      dwm.noalias() += dyn * cols.transpose();
      db += dyn.rowwise().sum();
      if (!skip_input_grad_) {
        dcols.noalias() = wm.transpose() * dyn;
        detail::col2im(dcols, in_, h, w, k_, dx.data() + n * in_ * hw);
      }
    }
    return dx;
  }

  ParamList<Scalar> params() override { return {&weight_, &bias_}; }
  void init(Rng& rng) override {
    glorot_uniform(weight_.value, in_ * k_ * k_, out_ * k_ * k_, rng);
    bias_.value.set_zero();
  }

 private:
  int in_, out_, k_;
  bool skip_input_grad_ = false;
  Param<Scalar> weight_, bias_;
  Tensor<Scalar> input_;
};

/// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
template <typename Scalar>
class MaxPool2d : public Layer<Scalar> {
 public:
  explicit MaxPool2d(std::string name) : Layer<Scalar>(std::move(name)) {}
  std::string kind() const override { return "maxpool2d"; }
  nlohmann::json config() const override { return {{"size", 2}}; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, Rng&) override {
    in_shape_ = x.shape();
    return pool(x, &argmax_);
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    return pool(x, nullptr);
  }
  std::uint64_t branch_signature() const override {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Eigen::Index i : argmax_) {
      h = (h ^ static_cast<std::uint64_t>(i)) * 0x100000001b3ULL;
    }
    return h;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(!in_shape_.empty());
    if (dy.size() != static_cast<Eigen::Index>(argmax_.size())) {
      throw ShapeError("maxpool2d grad: size mismatch");
    }
    Tensor<Scalar> dx(in_shape_);
    for (Eigen::Index i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
    return dx;
  }

 private:
  static Tensor<Scalar> pool(const Tensor<Scalar>& x,
                             std::vector<Eigen::Index>* argmax) {
    expect_shape("maxpool2d input", x.shape(), {-1, -1, -1, -1});
    const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = h / 2, wo = w / 2;
    if (ho < 1 || wo < 1) {
      throw ShapeError("maxpool2d input too small: " + shape_string(x.shape()));
    }
    Tensor<Scalar> y({x.dim(0), x.dim(1), ho, wo});
    if (argmax) argmax->resize(static_cast<std::size_t>(y.size()));
    Eigen::Index o = 0;
    for (int p = 0; p < planes; ++p) {
      const Eigen::Index base = static_cast<Eigen::Index>(p) * h * w;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++o) {
          Eigen::Index best = base + (2 * oy) * w + 2 * ox;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const Eigen::Index i = base + (2 * oy + dy) * w + 2 * ox + dx;
              if (x[i] > x[best]) best = i;
            }
          }
          y[o] = x[best];
          if (argmax) (*argmax)[static_cast<std::size_t>(o)] = best;
        }
      }
    }
    return y;
  }

  Shape in_shape_;
  std::vector<Eigen::Index> argmax_;
};

// ---------------------------------------------------------------------------
// Dense and shape layers

/// y = x W^T + b on (B, in).
template <typename Scalar>
class Dense : public Layer<Scalar> {
 public:
  Dense(std::string name, int in, int out)
      : Layer<Scalar>(std::move(name)),
        in_(in),
        out_(out),
        weight_(this->name() + ".weight", {out, in}),
        bias_(this->name() + ".bias", {out}) {}

  std::string kind() const override { return "dense"; }
  nlohmann::json config() const override { return {{"in", in_}, {"out", out_}}; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, Rng&) override {
    input_ = x;
    return infer(x);
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    expect_shape("dense input", x.shape(), {-1, in_});
    Tensor<Scalar> y({x.dim(0), out_});
    auto ym = y.mat();
    ym.noalias() = x.mat() * weight_.value.mat(out_, in_).transpose();
    ym.rowwise() += bias_.value.vec().transpose();
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(input_.size() > 0);
    expect_shape("dense grad", dy.shape(), {input_.dim(0), out_});
    weight_.grad.mat(out_, in_).noalias() += dy.mat().transpose() * input_.mat();
    bias_.grad.vec() += dy.mat().colwise().sum().transpose();
    Tensor<Scalar> dx(input_.shape());
    dx.mat().noalias() = dy.mat() * weight_.value.mat(out_, in_);
    return dx;
  }

  ParamList<Scalar> params() override { return {&weight_, &bias_}; }
  void init(Rng& rng) override {
    glorot_uniform(weight_.value, in_, out_, rng);
    bias_.value.set_zero();
  }

 private:
  int in_, out_;
  Param<Scalar> weight_, bias_;
  Tensor<Scalar> input_;
};

/// (B, ...) -> (B, prod(...)).
template <typename Scalar>
class Flatten : public Layer<Scalar> {
 public:
  explicit Flatten(std::string name) : Layer<Scalar>(std::move(name)) {}
  std::string kind() const override { return "flatten"; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, Rng&) override {
    in_shape_ = x.shape();
    return infer(x);
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    return x.reshaped({x.dim(0), static_cast<int>(x.size() / x.dim(0))});
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(!in_shape_.empty());
    return dy.reshaped(in_shape_);
  }

 private:
  Shape in_shape_;
};

/// (B, C, H, W) -> (B, C) mean over space.
template <typename Scalar>
class GlobalAvgPool : public Layer<Scalar> {
 public:
  explicit GlobalAvgPool(std::string name) : Layer<Scalar>(std::move(name)) {}
  std::string kind() const override { return "global-avg-pool"; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, Rng&) override {
    in_shape_ = x.shape();
    return infer(x);
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    expect_shape("global-avg-pool input", x.shape(), {-1, -1, -1, -1});
    const int planes = x.dim(0) * x.dim(1);
    const Eigen::Index area = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
    Tensor<Scalar> y({x.dim(0), x.dim(1)});
    y.vec() = x.mat(planes, area).rowwise().mean();
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(!in_shape_.empty());
    const int planes = in_shape_[0] * in_shape_[1];
    const Eigen::Index area = static_cast<Eigen::Index>(in_shape_[2]) * in_shape_[3];
    Tensor<Scalar> dx(in_shape_);
    dx.mat(planes, area).colwise() = dy.vec() / static_cast<Scalar>(area);
    return dx;
  }

 private:
  Shape in_shape_;
};

// ---------------------------------------------------------------------------
// Elementwise activations and dropout

template <typename Scalar>
class Elu : public Layer<Scalar> {
 public:
  explicit Elu(std::string name) : Layer<Scalar>(std::move(name)) {}
  std::string kind() const override { return "elu"; }
  nlohmann::json config() const override { return {{"alpha", 1.0}}; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, Rng&) override {
    output_ = infer(x);
    return output_;
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    Tensor<Scalar> y = x;
    y.vec() = x.vec().unaryExpr(
        [](Scalar v) { return v > Scalar(0) ? v : std::expm1(v); });
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(output_.size() > 0);
    Tensor<Scalar> dx = dy;
    dx.vec() = dy.vec().binaryExpr(output_.vec(), [](Scalar g, Scalar y) {
      return y > Scalar(0) ? g : g * (y + Scalar(1));
    });
    return dx;
  }

 private:
  Tensor<Scalar> output_;
};

template <typename Scalar>
Scalar stable_sigmoid(Scalar v) {
  if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
class Sigmoid : public Layer<Scalar> {
 public:
  explicit Sigmoid(std::string name) : Layer<Scalar>(std::move(name)) {}
  std::string kind() const override { return "sigmoid"; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, Rng&) override {
    output_ = infer(x);
    return output_;
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    Tensor<Scalar> y = x;
    y.vec() = x.vec().unaryExpr([](Scalar v) { return stable_sigmoid(v); });
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(output_.size() > 0);
    Tensor<Scalar> dx = dy;
    dx.vec().array() *= output_.vec().array() * (Scalar(1) - output_.vec().array());
    return dx;
  }

 private:
  Tensor<Scalar> output_;
};

/// Softmax over the last axis, max-subtracted.
template <typename Scalar>
class Softmax : public Layer<Scalar> {
 public:
  explicit Softmax(std::string name) : Layer<Scalar>(std::move(name)) {}
  std::string kind() const override { return "softmax"; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, Rng&) override {
    output_ = infer(x);
    return output_;
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    const int n = x.dim(-1);
    Tensor<Scalar> y = x;
    auto m = y.mat(y.size() / n, n);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      auto row = m.row(r).array();
      row = (row - row.maxCoeff()).exp();
      row /= row.sum();
    }
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(output_.size() > 0);
    const int n = output_.dim(-1);
    const auto y = output_.mat(output_.size() / n, n);
    const auto g = dy.mat(dy.size() / n, n);
    Tensor<Scalar> dx(dy.shape());
    auto d = dx.mat(dx.size() / n, n);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot =
        (y.array() * g.array()).rowwise().sum();
    d = (y.array() * (g.array().colwise() - dot.array())).matrix();
    return dx;
  }

 private:
  Tensor<Scalar> output_;
};

/// Inverted dropout: kept units are scaled by 1/(1-rate) in training.
template <typename Scalar>
class Dropout : public Layer<Scalar> {
 public:
  Dropout(std::string name, double rate)
      : Layer<Scalar>(std::move(name)), rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ValidationError("rate", "dropout rate must be in [0, 1)");
    }
  }
  std::string kind() const override { return "dropout"; }
  nlohmann::json config() const override { return {{"rate", rate_}}; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Rng& rng) override {
    mask_ = Tensor<Scalar>(x.shape(), Scalar(1));
    if (mode == Mode::kTrain && rate_ > 0.0) {
      const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - rate_));
      for (Eigen::Index i = 0; i < mask_.size(); ++i) {
        mask_[i] = rng.uniform() < rate_ ? Scalar(0) : keep;
      }
    }
    Tensor<Scalar> y = x;
    y.vec().array() *= mask_.vec().array();
    return y;
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override { return x; }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(mask_.size() > 0);
    Tensor<Scalar> dx = dy;
    dx.vec().array() *= mask_.vec().array();
    return dx;
  }
  const Tensor<Scalar>& mask() const noexcept { return mask_; }

 private:
  double rate_;
  Tensor<Scalar> mask_;
};

// ---------------------------------------------------------------------------
// Containers

template <typename Scalar>
class Sequential : public Layer<Scalar> {
 public:
  explicit Sequential(std::string name) : Layer<Scalar>(std::move(name)) {}
  std::string kind() const override { return "sequential"; }
  nlohmann::json config() const override {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) layers.push_back(l->describe());
    return {{"layers", layers}};
  }

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  Layer<Scalar>& append(std::unique_ptr<Layer<Scalar>> layer) {
    layers_.push_back(std::move(layer));
    return *layers_.back();
  }
  std::size_t size() const noexcept { return layers_.size(); }
  Layer<Scalar>& at(std::size_t i) { return *layers_.at(i); }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Rng& rng) override {
    Tensor<Scalar> h = x;
    for (auto& l : layers_) h = l->forward(h, mode, rng);
    return h;
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    Tensor<Scalar> h = x;
    for (const auto& l : layers_) h = l->infer(h);
    return h;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      g = (*it)->backward(g);
    }
    return g;
  }
  ParamList<Scalar> params() override {
    ParamList<Scalar> out;
    for (auto& l : layers_) {
      auto p = l->params();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
  void init(Rng& rng) override {
    for (auto& l : layers_) l->init(rng);
  }
  std::uint64_t branch_signature() const override {
    std::uint64_t h = 0;
    for (const auto& l : layers_) h = mix_seed(h ^ l->branch_signature());
    return h;
  }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

/// Applies an inner layer to every step of (B, T, ...).
template <typename Scalar>
class TimeDistributed : public Layer<Scalar> {
 public:
  TimeDistributed(std::string name, std::unique_ptr<Layer<Scalar>> inner)
      : Layer<Scalar>(std::move(name)), inner_(std::move(inner)) {}
  std::string kind() const override { return "time-distributed"; }
  nlohmann::json config() const override { return {{"inner", inner_->describe()}}; }
  Layer<Scalar>& inner() { return *inner_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Rng& rng) override {
    bt_ = {x.dim(0), x.dim(1)};
    return unfold(inner_->forward(fold(x), mode, rng));
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    const int b = x.dim(0), t = x.dim(1);
    Tensor<Scalar> y = inner_->infer(fold(x));
    Shape s{b, t};
    s.insert(s.end(), y.shape().begin() + 1, y.shape().end());
    return y.reshaped(std::move(s));
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(!bt_.empty());
    Tensor<Scalar> g = inner_->backward(fold(dy));
    if (g.size() == 0) return g;
    return unfold(std::move(g));
  }
  ParamList<Scalar> params() override { return inner_->params(); }
  void init(Rng& rng) override { inner_->init(rng); }
  std::uint64_t branch_signature() const override {
    return inner_->branch_signature();
  }

 private:
  static Tensor<Scalar> fold(const Tensor<Scalar>& x) {
    if (x.rank() < 3) throw ShapeError("time-distributed input needs rank >= 3");
    Shape s{x.dim(0) * x.dim(1)};
    s.insert(s.end(), x.shape().begin() + 2, x.shape().end());
    return x.reshaped(std::move(s));
  }
  Tensor<Scalar> unfold(Tensor<Scalar> y) const {
    Shape s = bt_;
    s.insert(s.end(), y.shape().begin() + 1, y.shape().end());
    y.reshape(std::move(s));
    return y;
  }

  std::unique_ptr<Layer<Scalar>> inner_;
  Shape bt_;
};

// ---------------------------------------------------------------------------
// Bidirectional LSTM

/// Bidirectional LSTM on (B, T, in) with gate order i, f, g, o. Output is
/// (B, T, 2H) for sequences, or (B, 2H) = [forward h at T-1, backward h at 0].
template <typename Scalar>
class BiLstm : public Layer<Scalar> {
 public:
  BiLstm(std::string name, int in, int hidden, bool return_sequences)
      : Layer<Scalar>(std::move(name)),
        in_(in),
        hidden_(hidden),
        sequences_(return_sequences),
        dirs_{Direction(this->name() + ".fw", in, hidden),
              Direction(this->name() + ".bw", in, hidden)} {}

  std::string kind() const override { return "bilstm"; }
  nlohmann::json config() const override {
    return {{"in", in_}, {"hidden", hidden_}, {"return_sequences", sequences_}};
  }
  int hidden() const noexcept { return hidden_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, Rng&) override {
    input_ = x;
    return run(x, caches_);
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    std::array<Cache, 2> scratch;
    return run(x, scratch);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(input_.size() > 0);
    const int b = input_.dim(0), t_len = input_.dim(1), h = hidden_;
    if (sequences_) {
      expect_shape("bilstm grad", dy.shape(), {b, t_len, 2 * h});
    } else {
      expect_shape("bilstm grad", dy.shape(), {b, 2 * h});
    }
    Tensor<Scalar> dx(input_.shape());
    for (int d = 0; d < 2; ++d) {
      Direction& dir = dirs_[static_cast<std::size_t>(d)];
      const Cache& cache = caches_[static_cast<std::size_t>(d)];
      const auto w = dir.kernel.value.mat(4 * h, in_);
      const auto u = dir.recurrent.value.mat(4 * h, h);
      auto dw = dir.kernel.grad.mat(4 * h, in_);
      auto du = dir.recurrent.grad.mat(4 * h, h);
      auto& db = dir.bias.grad.vec();
      RowMatrix<Scalar> dh_next = RowMatrix<Scalar>::Zero(b, h);
      RowMatrix<Scalar> dc_next = RowMatrix<Scalar>::Zero(b, h);
      RowMatrix<Scalar> dz(b, 4 * h);
      for (int s = t_len - 1; s >= 0; --s) {
        const int t = d == 0 ? s : t_len - 1 - s;
        RowMatrix<Scalar> dh = dh_next;
        if (sequences_) {
          dh += step_view(dy, t, t_len, 2 * h).middleCols(d * h, h);
        } else if (s == t_len - 1) {
          dh += dy.mat().middleCols(d * h, h);
        }
        const auto& gates = cache.gates[static_cast<std::size_t>(s)];
        const auto ig = gates.leftCols(h).array();
        const auto fg = gates.middleCols(h, h).array();
        const auto gg = gates.middleCols(2 * h, h).array();
        const auto og = gates.rightCols(h).array();
        const auto& c = cache.c[static_cast<std::size_t>(s)];
        const RowMatrix<Scalar> tc = c.array().tanh().matrix();
        const RowMatrix<Scalar> dc =
            (dh.array() * og * (Scalar(1) - tc.array().square()) +
             dc_next.array())
                .matrix();
        const RowMatrix<Scalar> c_prev =
            s > 0 ? cache.c[static_cast<std::size_t>(s) - 1]
                  : RowMatrix<Scalar>::Zero(b, h);
        const RowMatrix<Scalar> h_prev =
            s > 0 ? cache.h[static_cast<std::size_t>(s) - 1]
                  : RowMatrix<Scalar>::Zero(b, h);
        dz.leftCols(h) = (dc.array() * gg * ig * (Scalar(1) - ig)).matrix();
        dz.middleCols(h, h) =
            (dc.array() * c_prev.array() * fg * (Scalar(1) - fg)).matrix();
        dz.middleCols(2 * h, h) =
            (dc.array() * ig * (Scalar(1) - gg.square())).matrix();
        dz.rightCols(h) =
            (dh.array() * tc.array() * og * (Scalar(1) - og)).matrix();
        const auto xt = step_view(input_, t, t_len, in_);
        dw.noalias() += dz.transpose() * xt;
        du.noalias() += dz.transpose() * h_prev;
        db += dz.colwise().sum().transpose();
        auto dxt = step_view(dx, t, t_len, in_);
        dxt.noalias() += dz * w;
        dh_next.noalias() = dz * u;
        dc_next = (dc.array() * fg).matrix();
      }
    }
    return dx;
  }

  ParamList<Scalar> params() override {
    return {&dirs_[0].kernel, &dirs_[0].recurrent, &dirs_[0].bias,
            &dirs_[1].kernel, &dirs_[1].recurrent, &dirs_[1].bias};
  }
  void init(Rng& rng) override {
    for (auto& d : dirs_) {
      glorot_uniform(d.kernel.value, in_, 4 * hidden_, rng);
      orthogonal(d.recurrent.value, 4 * hidden_, hidden_, rng);
      d.bias.value.set_zero();
      d.bias.value.vec().segment(hidden_, hidden_).setOnes();
    }
  }

 private:
  struct Direction {
    Direction(const std::string& prefix, int in, int hidden)
        : kernel(prefix + ".kernel", {4 * hidden, in}),
          recurrent(prefix + ".recurrent", {4 * hidden, hidden}),
          bias(prefix + ".bias", {4 * hidden}) {}
    Param<Scalar> kernel, recurrent, bias;
  };
  struct Cache {
    std::vector<RowMatrix<Scalar>> gates, c, h;
  };
  using StepMap = Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
  using ConstStepMap =
      Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;

  static StepMap step_view(Tensor<Scalar>& x, int t, int t_len, int width) {
    return StepMap(x.data() + static_cast<std::ptrdiff_t>(t) * width, x.dim(0),
                   width, Eigen::OuterStride<>(t_len * width));
  }
  static ConstStepMap step_view(const Tensor<Scalar>& x, int t, int t_len,
                                int width) {
    return ConstStepMap(x.data() + static_cast<std::ptrdiff_t>(t) * width,
                        x.dim(0), width, Eigen::OuterStride<>(t_len * width));
  }

  Tensor<Scalar> run(const Tensor<Scalar>& x, std::array<Cache, 2>& caches) const {
    expect_shape("bilstm input", x.shape(), {-1, -1, in_});
    const int b = x.dim(0), t_len = x.dim(1), h = hidden_;
    if (t_len < 1) throw ShapeError("bilstm input needs at least one step");
    Tensor<Scalar> y = sequences_ ? Tensor<Scalar>({b, t_len, 2 * h})
                                  : Tensor<Scalar>({b, 2 * h});
    for (int d = 0; d < 2; ++d) {
      const Direction& dir = dirs_[static_cast<std::size_t>(d)];
      Cache& cache = caches[static_cast<std::size_t>(d)];
      cache.gates.assign(static_cast<std::size_t>(t_len), {});
      cache.c.assign(static_cast<std::size_t>(t_len), {});
      cache.h.assign(static_cast<std::size_t>(t_len), {});
      const auto w = dir.kernel.value.mat(4 * h, in_);
      const auto u = dir.recurrent.value.mat(4 * h, h);
      const auto bias = dir.bias.value.vec().transpose();
      RowMatrix<Scalar> hs = RowMatrix<Scalar>::Zero(b, h);
      RowMatrix<Scalar> cs = RowMatrix<Scalar>::Zero(b, h);
      for (int s = 0; s < t_len; ++s) {
        const int t = d == 0 ? s : t_len - 1 - s;
        RowMatrix<Scalar> z(b, 4 * h);
        z.noalias() = step_view(x, t, t_len, in_) * w.transpose();
        z.noalias() += hs * u.transpose();
        z.rowwise() += bias;
        auto sig = [](Scalar v) { return stable_sigmoid(v); };
        z.leftCols(2 * h) = z.leftCols(2 * h).unaryExpr(sig);
        z.middleCols(2 * h, h) = z.middleCols(2 * h, h).array().tanh().matrix();
        z.rightCols(h) = z.rightCols(h).unaryExpr(sig);
        cs = (z.middleCols(h, h).array() * cs.array() +
              z.leftCols(h).array() * z.middleCols(2 * h, h).array())
                 .matrix();
        hs = (z.rightCols(h).array() * cs.array().tanh()).matrix();
        if (sequences_) {
          step_view(y, t, t_len, 2 * h).middleCols(d * h, h) = hs;
        }
        cache.gates[static_cast<std::size_t>(s)] = std::move(z);
        cache.c[static_cast<std::size_t>(s)] = cs;
        cache.h[static_cast<std::size_t>(s)] = hs;
      }
      if (!sequences_) y.mat().middleCols(d * h, h) = hs;
    }
    return y;
  }

  int in_, hidden_;
  bool sequences_;
  std::array<Direction, 2> dirs_;
  std::array<Cache, 2> caches_;
  Tensor<Scalar> input_;
};

// ---------------------------------------------------------------------------
// Two-input concatenation

/// Joins (..., A) and (..., B) into (..., A + B) along the last axis.
template <typename Scalar>
class Concat {
 public:
  static constexpr const char* kKind = "concat";

  static Tensor<Scalar> apply(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.rank() != b.rank() || a.rank() < 2 ||
        !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
      throw ShapeError("concat: incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
    }
    const int wa = a.dim(-1), wb = b.dim(-1);
    const Eigen::Index rows = a.size() / wa;
    Shape s = a.shape();
    s.back() = wa + wb;
    Tensor<Scalar> y(s);
    auto m = y.mat(rows, wa + wb);
    m.leftCols(wa) = a.mat(rows, wa);
    m.rightCols(wb) = b.mat(rows, wb);
    return y;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    shape_a_ = a.shape();
    shape_b_ = b.shape();
    return apply(a, b);
  }

  std::pair<Tensor<Scalar>, Tensor<Scalar>> backward(const Tensor<Scalar>& dy) const {
    if (shape_a_.empty()) throw Error("concat: backward called before forward");
    const int wa = shape_a_.back(), wb = shape_b_.back();
    const Eigen::Index rows = dy.size() / (wa + wb);
    const auto m = dy.mat(rows, wa + wb);
    Tensor<Scalar> da(shape_a_), db(shape_b_);
    da.mat(rows, wa) = m.leftCols(wa);
    db.mat(rows, wb) = m.rightCols(wb);
    return {std::move(da), std::move(db)};
  }

 private:
  Shape shape_a_, shape_b_;
};

// ---------------------------------------------------------------------------
// Output heads

enum class HeadKind { kContinuous, kBinary, kCategorical };

/// A slice of the final logits; continuous and binary heads are one sigmoid
/// unit, categorical heads a softmax over `width` units.
struct HeadSlice {
  std::string name;
  HeadKind kind = HeadKind::kContinuous;
  int offset = 0;
  int width = 1;
};

using HeadLayout = std::vector<HeadSlice>;

inline int head_width(const HeadLayout& layout) {
  int w = 0;
  for (const auto& s : layout) w = std::max(w, s.offset + s.width);
  return w;
}

/// Sigmoid or softmax per slice of (B, total).
template <typename Scalar>
class OutputHeads : public Layer<Scalar> {
 public:
  OutputHeads(std::string name, HeadLayout layout)
      : Layer<Scalar>(std::move(name)), layout_(std::move(layout)) {}
  std::string kind() const override { return "output-heads"; }
  nlohmann::json config() const override {
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& s : layout_) {
      heads.push_back({{"name", s.name},
                       {"kind", s.kind == HeadKind::kCategorical ? "softmax"
                                                                 : "sigmoid"},
                       {"offset", s.offset},
                       {"width", s.width}});
    }
    return {{"heads", heads}};
  }
  const HeadLayout& layout() const noexcept { return layout_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, Rng&) override {
    output_ = infer(x);
    return output_;
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    expect_shape("output-heads input", x.shape(), {-1, head_width(layout_)});
    Tensor<Scalar> y = x;
    auto m = y.mat();
    for (const auto& s : layout_) {
      auto block = m.middleCols(s.offset, s.width);
      if (s.kind == HeadKind::kCategorical) {
        for (Eigen::Index r = 0; r < block.rows(); ++r) {
          auto row = block.row(r).array();
          row = (row - row.maxCoeff()).exp();
          row /= row.sum();
        }
      } else {
        block = block.unaryExpr([](Scalar v) { return stable_sigmoid(v); });
      }
    }
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(output_.size() > 0);
    Tensor<Scalar> dx = dy;
    const auto y = output_.mat();
    auto d = dx.mat();
    for (const auto& s : layout_) {
      const auto ys = y.middleCols(s.offset, s.width).array();
      auto ds = d.middleCols(s.offset, s.width);
      if (s.kind == HeadKind::kCategorical) {
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot =
            (ys * ds.array()).rowwise().sum();
        ds = (ys * (ds.array().colwise() - dot.array())).matrix();
      } else {
        ds = (ds.array() * ys * (Scalar(1) - ys)).matrix();
      }
    }
    return dx;
  }

 private:
  HeadLayout layout_;
  Tensor<Scalar> output_;
};

}  // namespace stepfx::nn
