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

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stepfx/nn/layers.hpp"
#include "stepfx/nn/optim.hpp"

namespace stepfx::nn {

/// Multi-input differentiable fragment.
template <typename Scalar>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<Scalar> forward(const std::vector<Tensor<Scalar>>& inputs,
                                 Mode mode, Rng& rng) = 0;
  /// One gradient per input; an empty tensor means "not computed".
  virtual std::vector<Tensor<Scalar>> backward(const Tensor<Scalar>& dy) = 0;
  virtual ParamList<Scalar> params() = 0;
  virtual void init(Rng& rng) = 0;
  virtual std::uint64_t branch_signature() const { return 0; }
};

/// Adapts a single-input layer.
template <typename Scalar>
class LayerModule : public Module<Scalar> {
 public:
  explicit LayerModule(Layer<Scalar>& layer) : layer_(layer) {}
  Tensor<Scalar> forward(const std::vector<Tensor<Scalar>>& inputs, Mode mode,
                         Rng& rng) override {
    return layer_.forward(inputs.at(0), mode, rng);
  }
  std::vector<Tensor<Scalar>> backward(const Tensor<Scalar>& dy) override {
    return {layer_.backward(dy)};
  }
  ParamList<Scalar> params() override { return layer_.params(); }
  void init(Rng& rng) override { layer_.init(rng); }
  std::uint64_t branch_signature() const override {
    return layer_.branch_signature();
  }

 private:
  Layer<Scalar>& layer_;
};

/// Scalar loss of the fragment output; fills `grad` when non-null.
template <typename Scalar>
using CheckLoss = std::function<double(const Tensor<Scalar>& y, Tensor<Scalar>* grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;      // "param[index]" or "input<k>[index]"
  std::size_t checked = 0;
  std::size_t refined = 0;  // probes that needed a smaller step
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares backward() against central differences for every parameter and
/// input element. The default loss is L = sum(r * y) with a fixed random r.
/// Dropout masks repeat exactly because every forward pass reseeds.
///
/// A probe whose +/- step changes a max-pool winner straddles a point where
/// the function is not differentiable; such a probe is repeated with the
/// step divided by 100 (up to three times) until both sides take the same
/// branch as the unperturbed pass.
template <typename Scalar>
GradCheckReport grad_check(Module<Scalar>& fragment,
                           const std::vector<Shape>& input_shapes,
                           std::uint64_t seed, CheckLoss<Scalar> loss = {},
                           double epsilon = 1e-3) {
  Rng init_rng(derive_seed(seed, 1));
  fragment.init(init_rng);
  Rng input_rng(derive_seed(seed, 2));
  std::vector<Tensor<Scalar>> inputs;
  for (const auto& s : input_shapes) {
    Tensor<Scalar> t(s);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      t[i] = static_cast<Scalar>(input_rng.normal());
    }
    inputs.push_back(std::move(t));
  }
  const std::uint64_t mask_seed = derive_seed(seed, 3);
  auto run = [&] {
    Rng rng(mask_seed);
    return fragment.forward(inputs, Mode::kTrain, rng);
  };

  Tensor<Scalar> y = run();
  const std::uint64_t base_branch = fragment.branch_signature();
  if (!loss) {
    Rng r_rng(derive_seed(seed, 4));
    Tensor<Scalar> r(y.shape());
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      r[i] = static_cast<Scalar>(r_rng.normal());
    }
    loss = [r](const Tensor<Scalar>& out, Tensor<Scalar>* grad) {
      if (grad) *grad = r;
      return (out.vec().template cast<double>().array() *
              r.vec().template cast<double>().array())
          .sum();
    };
  }

  const ParamList<Scalar> params = fragment.params();
  zero_grads(params);
  Tensor<Scalar> dy;
  loss(y, &dy);
  const std::vector<Tensor<Scalar>> dx = fragment.backward(dy);

  GradCheckReport report;
  auto probe = [&](Scalar& slot, double analytic, const std::string& label) {
    const Scalar saved = slot;
    double step = epsilon;
    double plus = 0.0, minus = 0.0;
    for (int attempt = 0;; ++attempt) {
      slot = static_cast<Scalar>(saved + step);
      plus = loss(run(), nullptr);
      const bool same_plus = fragment.branch_signature() == base_branch;
      slot = static_cast<Scalar>(saved - step);
      minus = loss(run(), nullptr);
      const bool same_minus = fragment.branch_signature() == base_branch;
      if ((same_plus && same_minus) || attempt == 3) break;
      step /= 100.0;
    }
    slot = saved;
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = relative_error(analytic, numeric);
    ++report.checked;
    if (step != epsilon) ++report.refined;
    if (err >= report.max_rel_error) {
      report.max_rel_error = err;
      report.worst = label;
    }
  };
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      probe(p->value[i], static_cast<double>(p->grad[i]),
            p->name + "[" + std::to_string(i) + "]");
    }
  }
  for (std::size_t k = 0; k < inputs.size() && k < dx.size(); ++k) {
    if (dx[k].size() == 0) continue;
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      probe(inputs[k][i], static_cast<double>(dx[k][i]),
            "input" + std::to_string(k) + "[" + std::to_string(i) + "]");
    }
  }
  return report;
}

}  // namespace stepfx::nn
