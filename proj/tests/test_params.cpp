#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "padtts/errors.hpp"
#include "padtts/params.hpp"

using namespace padtts;

namespace {

void set_grad(ParameterSet& ps, const std::string& name, double g) {
  auto t = ps.get(name).value;
  ops::sum(ops::scale(t, g)).backward();
}

}  // namespace

TEST_CASE("sgd step") {
  ParameterSet ps;
  ps.add("w", Tensor::scalar(1.0));
  set_grad(ps, "w", 1.0);
  Sgd(0.1).step(ps);
  CHECK(ps.get("w").value.item() == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("frozen parameter is untouched") {
  ParameterSet ps;
  ps.add("w", Tensor::scalar(1.0));
  ps.add("v", Tensor::scalar(1.0));
  ps.set_frozen("w", true);
  CHECK_FALSE(ps.get("w").value.requires_grad());
  set_grad(ps, "v", 1.0);
  Sgd(0.1).step(ps);
  Adam().step(ps);
  CHECK(ps.get("w").value.item() == 1.0);
  CHECK(ps.get("v").value.item() != 1.0);
}

TEST_CASE("missing gradient on a trainable parameter is an error") {
  ParameterSet ps;
  ps.add("w", Tensor::scalar(1.0));
  CHECK_THROWS_AS(Sgd(0.1).step(ps), Error);
  CHECK_THROWS_AS(Adam().step(ps), Error);
}

TEST_CASE("adam first step matches the closed form") {
  ParameterSet ps;
  ps.add("w", Tensor::scalar(1.0));
  set_grad(ps, "w", 0.5);
  Adam(AdamConfig{1e-3, 0.9, 0.999, 1e-8}).step(ps);
  // m = 0.1 g, v = 0.001 g^2; bias corrected m_hat = g, v_hat = g^2.
  const double g = 0.5;
  const double m_hat = (0.1 * g) / (1 - 0.9);
  const double v_hat = (0.001 * g * g) / (1 - 0.999);
  const double expected = 1.0 - 1e-3 * m_hat / (std::sqrt(v_hat) + 1e-8);
  CHECK(ps.get("w").value.item() == doctest::Approx(expected).epsilon(1e-14));
  CHECK(1.0 - ps.get("w").value.item() == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("adam second step uses accumulated moments") {
  ParameterSet ps;
  ps.add("w", Tensor::scalar(0.0));
  Adam opt({0.01, 0.9, 0.999, 1e-8});
  double m = 0, v = 0, w = 0;
  for (int t = 1; t <= 3; ++t) {
    const double g = 0.3 * t - 0.5;
    ps.zero_grad();
    set_grad(ps, "w", g);
    opt.step(ps);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK(ps.get("w").value.item() == doctest::Approx(w).epsilon(1e-13));
}

TEST_CASE("parameter set bookkeeping") {
  ParameterSet ps;
  ps.add("style.W1", Tensor::zeros({3, 7}));
  ps.add("style.W2", Tensor::zeros({32, 3}));
  ps.add("decoder.w", Tensor::zeros({4, 4}));
  CHECK_THROWS_AS(ps.add("style.W1", Tensor::zeros({1})), ConfigError);
  CHECK(ps.scalar_count() == 21 + 96 + 16);
  CHECK(ps.scalar_count("style.") == 117);
  ps.set_frozen_prefix("style.", true, /*invert=*/true);
  CHECK(ps.get("decoder.w").frozen);
  CHECK_FALSE(ps.get("style.W1").frozen);
}

TEST_CASE("checkpoint round trip and corruption") {
  std::mt19937_64 rng(4);
  ParameterSet ps;
  ps.add("a", Tensor::from({2, 3}, oracle::uniform(6, rng)));
  ps.add("b", Tensor::from({5}, oracle::uniform(5, rng)));
  auto ck = Checkpoint::capture(ps, {{"stage", "base"}, {"config_hash", "x"}});
  const auto bytes = ck.serialize();
  CHECK(bytes.substr(0, 8) == "PADTTSCK");

  auto back = Checkpoint::deserialize(bytes);
  CHECK(back.meta == ck.meta);
  CHECK(back.serialize() == bytes);
  CHECK(back.payload_bytes("a") == ck.payload_bytes("a"));
  CHECK(ck.payload_bytes("b").size() == 5 * 8);

  ParameterSet other;
  other.add("a", Tensor::zeros({2, 3}));
  other.add("b", Tensor::zeros({5}));
  back.restore(other);
  for (std::size_t i = 0; i < 6; ++i) CHECK(other.get("a").value.data()[i] == ps.get("a").value.data()[i]);

  CHECK_THROWS_AS(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(Checkpoint::deserialize(bytes + "x"), FormatError);
  CHECK_THROWS_AS(Checkpoint::deserialize("NOTACKPT" + bytes.substr(8)), FormatError);

  ParameterSet wrong;
  wrong.add("a", Tensor::zeros({3, 2}));
  wrong.add("b", Tensor::zeros({5}));
  CHECK_THROWS_AS(back.restore(wrong), FormatError);

  const auto dir = oracle::temp_dir("ckpt");
  ck.save(dir / "x.ckpt");
  CHECK(Checkpoint::load(dir / "x.ckpt").serialize() == bytes);
}

TEST_CASE("payload is little-endian float64") {
  ParameterSet ps;
  ps.add("one", Tensor::scalar(1.0));
  const auto p = Checkpoint::capture(ps, nlohmann::json::object()).payload_bytes("one");
  // 1.0 = 0x3FF0000000000000
  const unsigned char expect[8] = {0, 0, 0, 0, 0, 0, 0xF0, 0x3F};
  for (int i = 0; i < 8; ++i) CHECK(static_cast<unsigned char>(p[i]) == expect[i]);
}

TEST_CASE("glorot is deterministic and bounded") {
  std::mt19937_64 a(9), b(9);
  auto x = glorot(10, 20, a), y = glorot(10, 20, b);
  const double limit = std::sqrt(6.0 / 30.0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(x.data()[i] == y.data()[i]);
    CHECK(std::abs(x.data()[i]) <= limit);
  }
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}
