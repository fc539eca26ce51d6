#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "core/common.hpp"
#include "core/optim.hpp"

using namespace digl;

TEST_CASE("adam: first step moves by about lr") {
  ParameterStore store;
  Tensor& w = add_parameter(store, "w", Tensor::row({1.0, -0.5, 2.0}));
  w.ensure_grad();
  w.grad = {0.3, -1.7, 0.001};
  AdamState state;
  state.lr = 0.01;
  adam_step(store, state);
  CHECK(state.step == 1);
  const std::vector<double> expect = {1.0, -0.5, 2.0};
  for (int i = 0; i < 3; ++i) {
    const double moved = std::abs(store.at("w").values[i] - expect[i]);
    CHECK(moved == doctest::Approx(0.01).epsilon(0.01));
  }
  // gradients cleared
  CHECK(store.at("w").grad.empty());
}

TEST_CASE("adam: zero gradient and zero decay is a fixed point") {
  ParameterStore store;
  Tensor& w = add_parameter(store, "w", Tensor::row({0.25, -3.0}));
  w.ensure_grad();
  AdamState state;
  adam_step(store, state);
  CHECK(store.at("w").values[0] == 0.25);
  CHECK(store.at("w").values[1] == -3.0);
}

TEST_CASE("adam: two identical-gradient steps follow the hand recurrence") {
  ParameterStore store;
  Tensor& w = add_parameter(store, "w", Tensor::row({1.0}));
  AdamState state;
  state.lr = 0.1;
  const double g = 0.5;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  // hand-computed two-step Adam with constant gradient
  double m = 0.0, v = 0.0, theta = 1.0;
  for (int step = 1; step <= 2; ++step) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, step));
    const double vhat = v / (1 - std::pow(b2, step));
    theta -= state.lr * mhat / (std::sqrt(vhat) + eps);
  }

  w.ensure_grad();
  w.grad = {g};
  adam_step(store, state);
  const double after_one = store.at("w").values[0];
  w.ensure_grad();
  w.grad = {g};
  adam_step(store, state);
  CHECK(state.step == 2);
  CHECK(store.at("w").values[0] == doctest::Approx(theta).epsilon(1e-12));
  // monotone movement against the gradient sign
  CHECK(after_one < 1.0);
  CHECK(store.at("w").values[0] < after_one);
}

TEST_CASE("adam: missing gradient is an error") {
  ParameterStore store;
  add_parameter(store, "w", Tensor::row({1.0}));
  AdamState state;
  CHECK_THROWS_AS(adam_step(store, state), UsageError);
}

TEST_CASE("adam: weight decay enters the gradient") {
  ParameterStore store;
  Tensor& w = add_parameter(store, "w", Tensor::row({2.0}));
  w.ensure_grad();  // zero gradient; only decay drives the step
  AdamState state;
  state.lr = 0.01;
  state.weight_decay = 0.1;
  adam_step(store, state);
  CHECK(store.at("w").values[0] < 2.0);
}

TEST_CASE("finite_diff_check: quadratic loss is exact to rounding") {
  ParameterStore store;
  Tensor& w = add_parameter(store, "w", Tensor::row({0.5, -1.0, 2.0}));
  const std::vector<double> x = {1.0, 2.0, 3.0};
  const double target = 1.5;
  auto loss_fn = [&](Tape& tape) {
    Var wv = tape.leaf(w);
    Var xv = tape.constant(Tensor::row(x));
    Var pred = tape.sum_all(tape.mul(wv, xv));
    Var diff = tape.sub(pred, tape.constant_scalar(target));
    return tape.mul(diff, diff);
  };
  auto report = finite_diff_check(store, loss_fn, 1e-6, 1e-6);
  CHECK(report.all_pass);
  CHECK(report.worst() < 1e-9);
  CHECK(report.entries.size() == 1);
}

TEST_CASE("finite_diff_check: corrupted gradient is reported") {
  ParameterStore store;
  Tensor& w = add_parameter(store, "w", Tensor::row({0.7, 1.3}));
  // custom op whose backward is off by a factor of 2
  auto loss_fn = [&](Tape& tape) {
    Var wv = tape.leaf(w);
    double s = 0.0;
    for (double v : tape.value(wv).values) s += v * v;
    return tape.custom(Tensor::scalar(s), [wv](Tape& t, Tape::Node& self) {
      auto& g = t.grad_buffer(wv);
      const auto& vals = t.value(wv).values;
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * 4.0 * vals[i];
    });
  };
  auto report = finite_diff_check(store, loss_fn, 1e-6, 1e-4);
  CHECK(!report.all_pass);
}

TEST_CASE("finite_diff_check: non-deterministic loss is an error") {
  ParameterStore store;
  add_parameter(store, "w", Tensor::row({1.0}));
  int calls = 0;
  auto loss_fn = [&](Tape& tape) {
    return tape.constant_scalar(static_cast<double>(calls++));
  };
  CHECK_THROWS_AS(finite_diff_check(store, loss_fn, 1e-6, 1e-4), ValidationError);
}

TEST_CASE("finite_diff_check: large tensors are subsampled") {
  ParameterStore store;
  std::mt19937_64 rng(3);
  Tensor big({20, 20});
  init_fan_in(big, 20, rng);
  Tensor& w = add_parameter(store, "big", big);
  auto loss_fn = [&](Tape& tape) {
    Var wv = tape.leaf(w);
    return tape.sum_all(tape.mul(wv, wv));
  };
  auto report = finite_diff_check(store, loss_fn, 1e-6, 1e-5);
  CHECK(report.all_pass);
  CHECK(report.entries[0].checked <= 200);
}

TEST_CASE("parameter store: duplicate path rejected, iteration is sorted") {
  ParameterStore store;
  add_parameter(store, "b", Tensor::row({1.0}));
  add_parameter(store, "a", Tensor::row({1.0}));
  CHECK_THROWS_AS(add_parameter(store, "a", Tensor::row({2.0})), UsageError);
  std::vector<std::string> paths;
  for (auto& [p, t] : store) paths.push_back(p);
  CHECK(paths == std::vector<std::string>{"a", "b"});
  for (auto& [p, t] : store) CHECK(t.requires_grad);
}
