#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracle.hpp"
#include "retain/errors.hpp"
#include "retain/lstm.hpp"

using namespace retain;

namespace {

// d = 1, h = 1: every gate sees 0.5 * x + 0.25 * h_prev.
LstmParameters unit_layer() {
  return {Tensor::matrix(4, 1, {0.5, 0.5, 0.5, 0.5}), Tensor::matrix(4, 1, {0.25, 0.25, 0.25, 0.25}),
          Tensor(Shape{4})};
}

LstmParameters random_layer(std::size_t d, std::size_t h, std::mt19937_64& rng) {
  return {oracle::random_tensor({4 * h, d}, rng, 0.6), oracle::random_tensor({4 * h, h}, rng, 0.6),
          oracle::random_tensor({4 * h}, rng, 0.3)};
}

// Time-major stack of B random sequences.
Tensor stacked_inputs(std::size_t steps, std::size_t batch, std::size_t d, std::mt19937_64& rng) {
  return oracle::random_tensor({steps * batch, d}, rng);
}

}  // namespace

TEST_CASE("single step against hand-computed gates") {
  const LstmState s = lstm_step(unit_layer(), {Tensor::vector({0.0}), Tensor::vector({0.0})},
                                Tensor::vector({1.0}));
  // i = f = o = sigmoid(0.5) = 0.62245933, g = tanh(0.5) = 0.46211716
  CHECK(s.cell[0] == doctest::Approx(0.28764913664496794).epsilon(1e-14));
  CHECK(s.hidden[0] == doctest::Approx(0.17426971865610508).epsilon(1e-14));
  const LstmState s2 = lstm_step(unit_layer(), s, Tensor::vector({1.0}));
  CHECK(s2.cell[0] == doctest::Approx(0.4955691288577211).epsilon(1e-14));
  CHECK(s2.hidden[0] == doctest::Approx(0.2901456338191652).epsilon(1e-14));
}

TEST_CASE("value-level unrolling matches the reference loop") {
  std::mt19937_64 rng(7);
  const LstmParameters a = random_layer(3, 5, rng), b = random_layer(5, 5, rng);
  const Tensor xs = oracle::random_tensor({9, 3}, rng);
  const std::vector<LstmParameters> layers{a, b};
  const Tensor got = lstm_sequence(layers, xs);
  const oracle::Mat want = oracle::lstm_run(b, oracle::lstm_run(a, oracle::to_mat(xs)));
  for (std::size_t t = 0; t < 9; ++t)
    for (std::size_t j = 0; j < 5; ++j) CHECK(got.at(t, j) == doctest::Approx(want[t][j]).epsilon(1e-13));
}

TEST_CASE("fused layer agrees with chained steps in values and gradients") {
  std::mt19937_64 rng(19);
  const std::size_t steps = 6, batch = 3, d = 2, h = 4;
  const LstmParameters p = random_layer(d, h, rng);
  const Tensor xs = stacked_inputs(steps, batch, d, rng);
  Tensor weights = oracle::random_tensor({steps * batch, h}, rng);

  Tape fused;
  const LstmLayer<Var> pf = bind(fused, p);
  const Var xf = fused.leaf(xs);
  const Var hf = lstm_layer(pf, xf, batch);
  fused.backward(sum(mul(hf, fused.constant(weights))));

  Tape chained;
  const LstmLayer<Var> pc = bind(chained, p);
  const Var xc = chained.leaf(xs);
  std::vector<Var> inputs;
  for (std::size_t t = 0; t < steps; ++t) inputs.push_back(slice_rows(xc, t * batch, (t + 1) * batch));
  const std::vector<Var> hs = lstm_sequence(std::span(&pc, 1), inputs);
  Var loss;
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor w(Shape{batch, h});
    std::copy_n(weights.raw() + t * batch * h, batch * h, w.raw());
    const Var term = sum(mul(hs[t], chained.constant(std::move(w))));
    loss = t == 0 ? term : add(loss, term);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < h; ++j)
        CHECK(hf.value().at(t * batch + b, j) == doctest::Approx(hs[t].value().at(b, j)).epsilon(1e-14));
  }
  chained.backward(loss);
  CHECK(max_abs_diff(fused.grad(xf), chained.grad(xc)) < 1e-13);
  CHECK(max_abs_diff(fused.grad(pf.input_weights), chained.grad(pc.input_weights)) < 1e-13);
  CHECK(max_abs_diff(fused.grad(pf.recurrent_weights), chained.grad(pc.recurrent_weights)) < 1e-13);
  CHECK(max_abs_diff(fused.grad(pf.bias), chained.grad(pc.bias)) < 1e-13);
}

TEST_CASE("fused layer gradients match central differences") {
  std::mt19937_64 rng(23);
  const std::size_t steps = 4, batch = 2, d = 3, h = 3;
  const LstmParameters p = random_layer(d, h, rng);
  const Tensor xs = stacked_inputs(steps, batch, d, rng);
  const Tensor w = oracle::random_tensor({steps * batch, h}, rng);
  const auto build = [&](Tape& t, const std::vector<Var>& v) {
    const LstmLayer<Var> layer{v[1], v[2], v[3]};
    return sum(mul(lstm_layer(layer, v[0], batch), t.constant(w)));
  };
  CHECK(gradcheck::worst_error(build, {xs, p.input_weights, p.recurrent_weights, p.bias}) < 1e-8);
}

TEST_CASE("hidden states are causal") {
  std::mt19937_64 rng(31);
  const std::size_t steps = 8, batch = 2;
  const LstmParameters p = random_layer(2, 3, rng);
  Tensor xs = stacked_inputs(steps, batch, 2, rng);
  Tape t1(false);
  const Tensor before = lstm_layer(bind(t1, p), t1.constant(xs), batch).value();
  xs.at(5 * batch + 1, 0) += 3.0;  // step 5 of sequence 1
  Tape t2(false);
  const Tensor after = lstm_layer(bind(t2, p), t2.constant(xs), batch).value();
  for (std::size_t r = 0; r < steps * batch; ++r) {
    const bool may_change = r / batch >= 5 && r % batch == 1;
    for (std::size_t j = 0; j < 3; ++j) {
      if (!may_change) CHECK(after.at(r, j) == before.at(r, j));
    }
  }
  CHECK(after.at(5 * batch + 1, 0) != before.at(5 * batch + 1, 0));
}

TEST_CASE("initialization") {
  std::mt19937_64 rng(1);
  const LstmParameters p = init_lstm(5, 8, rng);
  validate_lstm(p);
  CHECK(lstm_input_size(p) == 5);
  CHECK(lstm_hidden_size(p) == 8);
  for (std::size_t k = 0; k < 32; ++k) CHECK(p.bias[k] == (k >= 8 && k < 16 ? 1.0 : 0.0));
  for (double v : p.input_weights.data()) CHECK(std::abs(v) <= 1.0 / std::sqrt(5.0));
  for (double v : p.recurrent_weights.data()) CHECK(std::abs(v) <= 1.0 / std::sqrt(8.0));
  std::mt19937_64 again(1);
  CHECK(init_lstm(5, 8, again).input_weights == p.input_weights);
}

TEST_CASE("shape errors") {
  std::mt19937_64 rng(2);
  LstmParameters p = init_lstm(2, 3, rng);
  p.bias = Tensor(Shape{11});
  CHECK_THROWS_AS(validate_lstm(p), ShapeError);
  const LstmParameters q = init_lstm(2, 3, rng);
  Tape t;
  CHECK_THROWS_AS(lstm_layer(bind(t, q), t.constant(Tensor(Shape{5, 2})), 2), ShapeError);
  CHECK_THROWS_AS(lstm_layer(bind(t, q), t.constant(Tensor(Shape{4, 3})), 2), ShapeError);
  CHECK_THROWS_AS(init_lstm(0, 3, rng), ContractError);
}
