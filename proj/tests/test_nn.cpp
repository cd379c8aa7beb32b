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

#include <cmath>
#include <limits>

#include "doctest.h"
#include "stepfx/nn/gradcheck.hpp"
#include "stepfx/nn/layers.hpp"
#include "stepfx/nn/optim.hpp"

using namespace stepfx;
using namespace stepfx::nn;

namespace {

constexpr double kGradTol = 1e-3;
constexpr std::uint64_t kSeeds[] = {11, 23, 37};

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

template <typename L>
double check_layer(L& layer, const Shape& in, std::uint64_t seed) {
  LayerModule<double> m(layer);
  const GradCheckReport r = grad_check<double>(m, {in}, seed);
  INFO(layer.kind(), " worst ", r.worst, " err ", r.max_rel_error);
  return r.max_rel_error;
}

}  // namespace

TEST_CASE("elu limits") {
  Elu<float> elu("elu");
  Tensor<float> x({1, 3});
  x[0] = 0.0f;
  x[1] = 1.0f;
  x[2] = -std::numeric_limits<float>::infinity();
  const Tensor<float> y = elu.infer(x);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 1.0f);
  CHECK(y[2] == -1.0f);
}

TEST_CASE("softmax normalizes and survives large inputs") {
  Softmax<float> sm("softmax");
  Tensor<float> x = random_tensor({4, 7}, 3);
  x[0] = 1e4f;
  x[8] = -1e4f;
  const Tensor<float> y = sm.infer(x);
  REQUIRE(y.all_finite());
  for (int r = 0; r < 4; ++r) {
    CHECK(std::abs(y.mat().row(r).sum() - 1.0f) <= 1e-6f);
  }
}

TEST_CASE("conv2d identity kernel reproduces the input") {
  Conv2d<float> conv("conv", 1, 1, 3);
  conv.params()[0]->value.set_zero();
  conv.params()[0]->value[4] = 1.0f;
  const Tensor<float> x = random_tensor({2, 1, 6, 5}, 5);
  CHECK(conv.infer(x) == x);
}

TEST_CASE("conv2d matches direct summation") {
  Conv2d<double> conv("conv", 2, 3, 3);
  Rng rng(9);
  conv.init(rng);
  conv.params()[1]->value.vec().setLinSpaced(-0.5, 0.5);
  const Tensor<double> x = random_tensor({1, 2, 5, 4}, 8).cast<double>();
  const Tensor<double> y = conv.infer(x);
  const Tensor<double>& w = conv.params()[0]->value;
  const Tensor<double>& b = conv.params()[1]->value;
  double worst = 0.0;
  for (int o = 0; o < 3; ++o) {
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 4; ++c) {
        double acc = b[o];
        for (int i = 0; i < 2; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int rr = r + ky - 1, cc = c + kx - 1;
              if (rr < 0 || rr >= 5 || cc < 0 || cc >= 4) continue;
              acc += w[((o * 2 + i) * 3 + ky) * 3 + kx] * x[(i * 5 + rr) * 4 + cc];
            }
          }
        }
        worst = std::max(worst, std::abs(acc - y[(o * 5 + r) * 4 + c]));
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("maxpool floors odd sizes") {
  MaxPool2d<float> pool("pool");
  const Tensor<float> y = pool.infer(random_tensor({1, 2, 5, 7}, 1));
  CHECK(y.shape() == Shape{1, 2, 2, 3});
}

TEST_CASE("shape errors name expected and actual shapes") {
  Dense<float> dense("fc", 4, 3);
  try {
    dense.infer(Tensor<float>({2, 5}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(-1, 4)") != std::string::npos);
    CHECK(msg.find("(2, 5)") != std::string::npos);
  }
}

TEST_CASE("backward before forward is rejected") {
  Dense<float> dense("fc", 4, 3);
  CHECK_THROWS_AS(dense.backward(Tensor<float>({1, 3})), Error);
  BiLstm<float> lstm("lstm", 2, 3, false);
  CHECK_THROWS_AS(lstm.backward(Tensor<float>({1, 6})), Error);
}

TEST_CASE("dropout") {
  CHECK_THROWS_AS(Dropout<float>("d", 1.0), ValidationError);
  CHECK_THROWS_AS(Dropout<float>("d", -0.1), ValidationError);

  Dropout<float> drop("d", 0.5);
  const Tensor<float> x = random_tensor({8, 64}, 2);
  Rng rng(4);
  const Tensor<float> y = drop.forward(x, Mode::kTrain, rng);
  const Tensor<float> g = drop.backward(Tensor<float>(x.shape(), 1.0f));
  int dropped = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (drop.mask()[i] == 0.0f) {
      ++dropped;
      CHECK(y[i] == 0.0f);
      CHECK(g[i] == 0.0f);
    } else {
      CHECK(y[i] == x[i] * 2.0f);
      CHECK(g[i] == 2.0f);
    }
  }
  CHECK(dropped > 200);
  CHECK(dropped < 312);

  Rng rng2(4);
  CHECK(drop.forward(x, Mode::kTrain, rng2) == y);
  CHECK(drop.infer(x) == x);
  Rng rng3(4);
  CHECK(drop.forward(x, Mode::kInfer, rng3) == x);
}

TEST_CASE("losses") {
  const Tensor<float> x = random_tensor({3, 4}, 6);
  CHECK(loss_mse(x, x).value == 0.0);

  Tensor<float> onehot({2, 3});
  onehot[1] = 1.0f;
  onehot[5] = 1.0f;
  CHECK(loss_cce(onehot, onehot).value <= 1e-6);

  Tensor<float> half({1, 1}, 0.5f), one({1, 1}, 1.0f);
  CHECK(loss_bce(half, one).value == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  CHECK_THROWS_AS(loss_mse(x, Tensor<float>({4, 3})), ShapeError);
}

TEST_CASE("loss gradients match central differences") {
  for (const std::uint64_t seed : kSeeds) {
    Rng rng(seed);
    Tensor<double> p({3, 4}), t({3, 4}), onehot({3, 4});
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      p[i] = rng.uniform(0.05, 0.95);
      t[i] = rng.uniform();
    }
    for (int r = 0; r < 3; ++r) onehot[r * 4 + static_cast<int>(rng.index(4))] = 1.0;
    using Fn = LossResult<double> (*)(const Tensor<double>&, const Tensor<double>&);
    const std::pair<Fn, const Tensor<double>*> cases[] = {
        {&loss_mse<double>, &t}, {&loss_bce<double>, &t}, {&loss_cce<double>, &onehot}};
    for (const auto& [fn, target] : cases) {
      const LossResult<double> r = fn(p, *target);
      CHECK(r.value >= 0.0);
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        Tensor<double> hi = p, lo = p;
        hi[i] += 1e-3;
        lo[i] -= 1e-3;
        const double num = (fn(hi, *target).value - fn(lo, *target).value) / 2e-3;
        CHECK(relative_error(r.grad[i], num) < kGradTol);
      }
    }
  }
}

TEST_CASE("adam first step moves by the learning rate") {
  Param<float> w("w", {1});
  w.grad[0] = 1.0f;
  Adam<float> adam;
  adam.step({&w});
  // m = 0.1, v = 0.001; corrected m = 1, v = 1; w = -lr / (1 + 1e-8).
  CHECK(w.value[0] == doctest::Approx(-0.001).epsilon(1e-6));
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  Param<float> w("w", {3});
  w.value.vec() << 1.0f, -2.0f, 0.5f;
  const Tensor<float> before = w.value;
  Adam<float> adam;
  for (int i = 0; i < 5; ++i) adam.step({&w});
  CHECK(w.value == before);
}

TEST_CASE("adam non-finite gradient names the parameter") {
  Param<float> w("head.weight", {2});
  w.grad[1] = std::numeric_limits<float>::quiet_NaN();
  Adam<float> adam;
  try {
    adam.step({&w});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("head.weight") != std::string::npos);
  }
}

TEST_CASE("adam on a quadratic follows the scalar recurrence") {
  // Oracle: the textbook update in double, written out independently.
  auto oracle = [](double lr, int steps) {
    double w = 0.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= steps; ++t) {
      const double g = 2.0 * (w - 3.0);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1.0 - std::pow(0.9, t));
      const double vh = v / (1.0 - std::pow(0.999, t));
      w -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
    return w;
  };
  for (const double lr : {1e-3, 0.1}) {
    Param<double> w("w", {1});
    Adam<double> adam(AdamConfig{.learning_rate = lr});
    for (int t = 0; t < 200; ++t) {
      w.grad[0] = 2.0 * (w.value[0] - 3.0);
      adam.step({&w});
    }
    CHECK(w.value[0] == doctest::Approx(oracle(lr, 200)).epsilon(1e-12));
  }
  // Each step moves at most about lr, so the default rate cannot get close
  // to 3 in 200 steps; a rate of 0.1 does.
  CHECK(std::abs(oracle(1e-3, 200) - 3.0) > 2.5);
  CHECK(std::abs(oracle(0.1, 200) - 3.0) < 0.5);
}

TEST_CASE("grad check: every layer kind on three seeds") {
  for (const std::uint64_t seed : kSeeds) {
    CAPTURE(seed);
    {
      Dense<double> l("fc", 4, 3);
      CHECK(check_layer(l, {2, 4}, seed) < kGradTol);
    }
    {
      Conv2d<double> l("conv", 2, 3, 3);
      CHECK(check_layer(l, {2, 2, 5, 6}, seed) < kGradTol);
    }
    {
      MaxPool2d<double> l("pool");
      CHECK(check_layer(l, {2, 2, 4, 5}, seed) < kGradTol);
    }
    {
      Elu<double> l("elu");
      CHECK(check_layer(l, {3, 7}, seed) < kGradTol);
    }
    {
      Sigmoid<double> l("sig");
      CHECK(check_layer(l, {3, 7}, seed) < kGradTol);
    }
    {
      Softmax<double> l("softmax");
      CHECK(check_layer(l, {3, 5}, seed) < kGradTol);
    }
    {
      Dropout<double> l("drop", 0.5);
      CHECK(check_layer(l, {4, 6}, seed) < kGradTol);
    }
    {
      Flatten<double> l("flat");
      CHECK(check_layer(l, {2, 3, 2, 2}, seed) < kGradTol);
    }
    {
      GlobalAvgPool<double> l("gap");
      CHECK(check_layer(l, {2, 3, 3, 4}, seed) < kGradTol);
    }
    {
      BiLstm<double> l("lstm", 8, 4, true);
      CHECK(check_layer(l, {2, 5, 8}, seed) < kGradTol);
    }
    {
      BiLstm<double> l("lstm", 8, 4, false);
      CHECK(check_layer(l, {2, 5, 8}, seed) < kGradTol);
    }
    {
      auto inner = std::make_unique<Sequential<double>>("step");
      inner->add<Conv2d<double>>("step.conv", 2, 2, 3);
      inner->add<GlobalAvgPool<double>>("step.gap");
      inner->add<Dense<double>>("step.fc", 2, 3);
      TimeDistributed<double> l("td", std::move(inner));
      CHECK(check_layer(l, {2, 3, 2, 4, 4}, seed) < kGradTol);
    }
  }
}

TEST_CASE("grad check: composites") {
  for (const std::uint64_t seed : kSeeds) {
    CAPTURE(seed);
    {  // conv, elu, pool stack
      Sequential<double> s("stack");
      s.add<Conv2d<double>>("c1", 2, 4, 3);
      s.add<Elu<double>>("e1");
      s.add<MaxPool2d<double>>("p1");
      s.add<Conv2d<double>>("c2", 4, 4, 3);
      s.add<Elu<double>>("e2");
      s.add<MaxPool2d<double>>("p2");
      CHECK(check_layer(s, {2, 2, 8, 10}, seed) < kGradTol);
    }
    {  // softmax with categorical cross-entropy
      Sequential<double> s("cls");
      s.add<Dense<double>>("fc", 6, 5);
      s.add<Softmax<double>>("sm");
      Tensor<double> target({3, 5});
      target[1] = target[5 + 4] = target[10 + 0] = 1.0;
      LayerModule<double> m(s);
      const auto r = grad_check<double>(
          m, {{3, 6}}, seed, [&](const Tensor<double>& y, Tensor<double>* g) {
            auto l = loss_cce(y, target);
            if (g) *g = l.grad;
            return l.value;
          });
      CHECK(r.max_rel_error < kGradTol);
    }
    {  // mixed output heads with summed head losses
      const HeadLayout layout{{"mode", HeadKind::kCategorical, 0, 4},
                              {"drive", HeadKind::kContinuous, 4, 1},
                              {"boost", HeadKind::kBinary, 5, 1}};
      Sequential<double> s("heads");
      s.add<Dense<double>>("fc", 5, 6);
      s.add<Dropout<double>>("drop", 0.5);
      s.add<OutputHeads<double>>("out", layout);
      Tensor<double> target({3, 6});
      Rng rng(seed);
      for (int r = 0; r < 3; ++r) {
        target[r * 6 + static_cast<int>(rng.index(4))] = 1.0;
        target[r * 6 + 4] = rng.uniform();
        target[r * 6 + 5] = rng.uniform() < 0.5 ? 0.0 : 1.0;
      }
      LayerModule<double> m(s);
      const auto r = grad_check<double>(
          m, {{3, 5}}, seed, [&](const Tensor<double>& y, Tensor<double>* g) {
            auto l = head_loss(y, target, layout);
            if (g) *g = l.grad;
            return l.total;
          });
      CHECK(r.max_rel_error < kGradTol);
    }
  }
}

TEST_CASE("bilstm output width and direction symmetry") {
  BiLstm<double> lstm("lstm", 3, 4, true);
  Rng rng(2);
  lstm.init(rng);
  const Tensor<double> x = random_tensor({2, 5, 3}, 12).cast<double>();
  const Tensor<double> y = lstm.infer(x);
  CHECK(y.shape() == Shape{2, 5, 8});

  // Swap the two directions' weights and reverse time: the halves swap.
  BiLstm<double> swapped("lstm", 3, 4, true);
  auto a = lstm.params();
  auto b = swapped.params();
  for (int i = 0; i < 3; ++i) {
    b[static_cast<std::size_t>(i)]->value = a[static_cast<std::size_t>(i) + 3]->value;
    b[static_cast<std::size_t>(i) + 3]->value = a[static_cast<std::size_t>(i)]->value;
  }
  Tensor<double> xr(x.shape());
  for (int n = 0; n < 2; ++n) {
    for (int t = 0; t < 5; ++t) {
      for (int c = 0; c < 3; ++c) xr[(n * 5 + t) * 3 + c] = x[(n * 5 + 4 - t) * 3 + c];
    }
  }
  const Tensor<double> yr = swapped.infer(xr);
  double worst = 0.0;
  for (int n = 0; n < 2; ++n) {
    for (int t = 0; t < 5; ++t) {
      for (int k = 0; k < 4; ++k) {
        const int mirror = 4 - t;
        worst = std::max(worst, std::abs(y[(n * 5 + t) * 8 + k] -
                                         yr[(n * 5 + mirror) * 8 + 4 + k]));
        worst = std::max(worst, std::abs(y[(n * 5 + t) * 8 + 4 + k] -
                                         yr[(n * 5 + mirror) * 8 + k]));
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("bilstm forget bias and orthogonal recurrence") {
  BiLstm<double> lstm("lstm", 3, 4, false);
  Rng rng(1);
  lstm.init(rng);
  const auto p = lstm.params();
  const Eigen::VectorXd bias = p[2]->value.vec();
  CHECK(bias.segment(0, 4).isZero());
  CHECK(bias.segment(4, 4).isOnes());
  CHECK(bias.segment(8, 8).isZero());
  const auto u = p[1]->value.mat(16, 4);
  CHECK((u.transpose() * u).isIdentity(1e-12));
}

TEST_CASE("infer equals forward in inference mode") {
  Sequential<float> s("net");
  s.add<Conv2d<float>>("c", 2, 3, 3);
  s.add<Elu<float>>("e");
  s.add<MaxPool2d<float>>("p");
  s.add<Flatten<float>>("f");
  s.add<Dense<float>>("d", 3 * 2 * 3, 4);
  s.add<Dropout<float>>("drop", 0.5);
  s.add<Softmax<float>>("sm");
  Rng rng(3);
  s.init(rng);
  const Tensor<float> x = random_tensor({2, 2, 4, 6}, 7);
  Rng r2(5);
  CHECK(s.forward(x, Mode::kInfer, r2) == s.infer(x));
}

TEST_CASE("concat splits gradients back to its inputs") {
  const Tensor<float> a = random_tensor({2, 3, 4}, 1);
  const Tensor<float> b = random_tensor({2, 3, 2}, 2);
  Concat<float> cat;
  const Tensor<float> y = cat.forward(a, b);
  CHECK(y.shape() == Shape{2, 3, 6});
  const auto [da, db] = cat.backward(y);
  CHECK(da == a);
  CHECK(db == b);
  CHECK_THROWS_AS(Concat<float>::apply(a, random_tensor({2, 2, 2}, 3)), ShapeError);
}
