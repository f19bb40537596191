#include <doctest.h>

#include <random>

#include "grad_cases.hpp"
#include "oracles.hpp"
#include "padtts/errors.hpp"
#include "padtts/tensor.hpp"

using namespace padtts;

namespace {

Tensor rand_t(Shape shape, std::mt19937_64& rng) {
  const auto n = shape_numel(shape);
  return Tensor::from(std::move(shape), oracle::uniform(n, rng));
}

}  // namespace

TEST_CASE("elementwise examples") {
  auto r = ops::relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{0, 0, 2});

  auto s = ops::softmax(Tensor::from({3}, {0.7, 0.7, 0.7}));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto c = ops::concat({Tensor::from({2}, {1, 2}), Tensor::from({1}, {3})});
  CHECK(c.shape() == Shape{3});
}

TEST_CASE("shape errors name the op and both shapes") {
  auto a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 2});
  try {
    ops::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(2, 2)") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  CHECK_THROWS_AS(ops::concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 1})}), ShapeError);
}

TEST_CASE("backward examples") {
  auto x = Tensor::scalar(3.0, true);
  ops::mul(x, x).backward();
  CHECK(x.grad()[0] == 6.0);

  auto y = Tensor::scalar(-1.0, true);
  ops::sum(ops::relu(y)).backward();
  CHECK(y.grad()[0] == 0.0);

  CHECK_THROWS_AS(ops::relu(Tensor::from({2}, {1, 2}, true)).backward(), ShapeError);
}

TEST_CASE("leaf gradients accumulate across backward passes") {
  std::mt19937_64 rng(1);
  auto w = rand_t({3, 4}, rng);
  w.set_requires_grad(true);
  auto x = rand_t({2, 3}, rng);
  auto loss = ops::sum(ops::tanh(ops::matmul(x, w)));
  loss.backward();
  std::vector<double> once(w.grad().begin(), w.grad().end());
  loss.backward();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0 * once[i]);
  w.zero_grad();
  for (double g : w.grad()) CHECK(g == 0.0);
}

TEST_CASE("every op matches central finite differences") {
  for (auto& c : gradcases::op_cases()) {
    INFO(c.name);
    CHECK(oracle::gradcheck(c.f, c.in) < 1e-4);
  }
}

TEST_CASE("two-layer tanh network matches finite differences") {
  auto c = gradcases::two_layer_net();
  CHECK(oracle::gradcheck(c.f, c.in) < 1e-4);
}

TEST_CASE("no-grad guard records no history") {
  auto w = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  Tensor y;
  {
    NoGradGuard g;
    CHECK(NoGradGuard::active());
    y = ops::matmul(w, w);
  }
  CHECK_FALSE(NoGradGuard::active());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("dropout is keyed by seed, step and layer") {
  auto x = Tensor::full({1, 256}, 1.0);
  DropoutContext a(5, 1, 0.5), b(5, 1, 0.5), c(5, 2, 0.5);
  auto ya = ops::dropout(x, &a), yb = ops::dropout(x, &b), yc = ops::dropout(x, &c);
  CHECK(std::equal(ya.data().begin(), ya.data().end(), yb.data().begin()));
  CHECK_FALSE(std::equal(ya.data().begin(), ya.data().end(), yc.data().begin()));
  std::size_t kept = 0;
  for (double v : ya.data()) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 96);
  CHECK(kept < 160);
  auto same = ops::dropout(x, nullptr);
  CHECK(same.id() == x.id());
}

TEST_CASE("identical inputs give bit-identical forward and backward") {
  auto run = [] {
    std::mt19937_64 rng(3);
    auto w = rand_t({6, 6}, rng);
    w.set_requires_grad(true);
    auto x = rand_t({3, 6}, rng);
    auto l = ops::sum(ops::softmax(ops::tanh(ops::matmul(x, w))));
    l.backward();
    return std::make_pair(l.item(), std::vector<double>(w.grad().begin(), w.grad().end()));
  };
  CHECK(run() == run());
}
