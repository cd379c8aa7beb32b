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

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stepfx/error.hpp"
#include "stepfx/nn/layers.hpp"

namespace stepfx::nn {

inline constexpr double kProbClamp = 1e-7;

template <typename Scalar>
struct LossResult {
  double value = 0.0;
  Tensor<Scalar> grad;
};

namespace detail {
inline void expect_same(const char* what, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": prediction " + shape_string(a) +
                     " vs target " + shape_string(b));
  }
}
template <typename Scalar>
Scalar clamp_prob(Scalar p) {
  return std::clamp(p, static_cast<Scalar>(kProbClamp),
                    static_cast<Scalar>(1.0 - kProbClamp));
}
template <typename Scalar>
bool in_clamp(Scalar p) {
  return p > static_cast<Scalar>(kProbClamp) &&
         p < static_cast<Scalar>(1.0 - kProbClamp);
}
}  // namespace detail

/// Mean over all elements of (p - t)^2.
template <typename Scalar>
LossResult<Scalar> loss_mse(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  detail::expect_same("mse", pred.shape(), target.shape());
  LossResult<Scalar> r;
  const auto diff = (pred.vec() - target.vec()).template cast<double>();
  const double n = static_cast<double>(pred.size());
  r.value = diff.squaredNorm() / n;
  r.grad = Tensor<Scalar>(pred.shape(), ((2.0 / n) * diff).template cast<Scalar>());
  return r;
}

/// Mean over all elements of -t ln p - (1 - t) ln(1 - p), p clamped.
template <typename Scalar>
LossResult<Scalar> loss_bce(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  detail::expect_same("bce", pred.shape(), target.shape());
  LossResult<Scalar> r;
  r.grad = Tensor<Scalar>(pred.shape());
  const double n = static_cast<double>(pred.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double p = detail::clamp_prob<double>(pred[i]);
    const double t = target[i];
    sum += -t * std::log(p) - (1.0 - t) * std::log(1.0 - p);
    r.grad[i] = detail::in_clamp<double>(pred[i])
                    ? static_cast<Scalar>((-t / p + (1.0 - t) / (1.0 - p)) / n)
                    : Scalar(0);
  }
  r.value = sum / n;
  return r;
}

/// Mean over rows of -sum t ln p along the last axis, p clamped.
template <typename Scalar>
LossResult<Scalar> loss_cce(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  detail::expect_same("cce", pred.shape(), target.shape());
  LossResult<Scalar> r;
  r.grad = Tensor<Scalar>(pred.shape());
  const double rows = static_cast<double>(pred.size() / pred.dim(-1));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double t = target[i];
    if (t == 0.0) continue;
    const double p = detail::clamp_prob<double>(pred[i]);
    sum += -t * std::log(p);
    r.grad[i] = detail::in_clamp<double>(pred[i])
                    ? static_cast<Scalar>(-t / p / rows)
                    : Scalar(0);
  }
  r.value = sum / rows;
  return r;
}

/// Per-head losses (MSE for continuous, BCE for binary, CCE for
/// categorical) summed into one total.
template <typename Scalar>
struct HeadLossResult {
  double total = 0.0;
  std::vector<double> per_head;
  Tensor<Scalar> grad;
};

template <typename Scalar>
HeadLossResult<Scalar> head_loss(const Tensor<Scalar>& pred,
                                 const Tensor<Scalar>& target,
                                 const HeadLayout& layout) {
  detail::expect_same("head loss", pred.shape(), target.shape());
  const int b = pred.dim(0), width = pred.dim(1);
  HeadLossResult<Scalar> r;
  r.grad = Tensor<Scalar>(pred.shape());
  for (const auto& s : layout) {
    Tensor<Scalar> p({b, s.width}), t({b, s.width});
    p.mat() = pred.mat(b, width).middleCols(s.offset, s.width);
    t.mat() = target.mat(b, width).middleCols(s.offset, s.width);
    LossResult<Scalar> l = s.kind == HeadKind::kContinuous ? loss_mse(p, t)
                           : s.kind == HeadKind::kBinary   ? loss_bce(p, t)
                                                           : loss_cce(p, t);
    r.per_head.push_back(l.value);
    r.total += l.value;
    r.grad.mat(b, width).middleCols(s.offset, s.width) = l.grad.mat();
  }
  return r;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moments are created on the first step and keyed
/// by position in the parameter list.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const noexcept { return config_; }
  long steps() const noexcept { return steps_; }
  const std::vector<Tensor<Scalar>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<Scalar>>& second_moments() const noexcept { return v_; }

  void step(const ParamList<Scalar>& params) {
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    if (m_.size() != params.size()) {
      throw ShapeError("adam: parameter list changed between steps");
    }
    for (const auto* p : params) {
      if (!p->grad.all_finite()) {
        throw TrainingError("non-finite gradient in " + p->name);
      }
    }
    ++steps_;
    const Scalar b1 = static_cast<Scalar>(config_.beta1);
    const Scalar b2 = static_cast<Scalar>(config_.beta2);
    const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(config_.beta1, steps_));
    const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(config_.beta2, steps_));
    const Scalar lr = static_cast<Scalar>(config_.learning_rate);
    const Scalar eps = static_cast<Scalar>(config_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto m = m_[i].vec().array();
      auto v = v_[i].vec().array();
      const auto g = params[i]->grad.vec().array();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
      params[i]->value.vec().array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    }
  }

 private:
  AdamConfig config_;
  long steps_ = 0;
  std::vector<Tensor<Scalar>> m_, v_;
};

template <typename Scalar>
void zero_grads(const ParamList<Scalar>& params) {
  for (auto* p : params) p->grad.set_zero();
}

template <typename Scalar>
std::size_t count_params(const ParamList<Scalar>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

}  // namespace stepfx::nn
