#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracle.hpp"
#include "retain/errors.hpp"
#include "retain/model.hpp"

using namespace retain;

namespace {

ModelDimensions small_dims(std::size_t h = 5, std::size_t m = 3, std::size_t p = 4) {
  ModelDimensions d;
  d.history = h;
  d.embedding = m;
  d.hidden = p;
  return d;
}

// Pushes every weight away from the (tiny) initialization scale.
RetainParameters random_retain(const ModelDimensions& d, std::uint64_t seed) {
  RetainParameters p = init_retain(d, seed);
  std::mt19937_64 rng(seed + 100);
  std::normal_distribution<double> n(0.0, 0.5);
  for_each_tensor([&](Tensor& t) { for (double& v : t.data()) v = n(rng); }, p);
  return p;
}

}  // namespace

TEST_CASE("RETAIN forward on a hand example") {
  // Zero recurrent weights give zero hidden states: uniform alpha and
  // beta = tanh(beta_bias).
  ModelDimensions d = small_dims(2, 1, 1);
  d.inputs = 1;
  RetainParameters p = init_retain(d, 1);
  for_each_tensor([](Tensor& t) { std::fill(t.data().begin(), t.data().end(), 0.0); }, p);
  p.embedding[0] = 2.0;
  p.beta_bias[0] = std::atanh(0.5);
  p.output_weight[0] = 3.0;
  p.output_bias[0] = 1.0;
  const ForwardTrace tr = retain_forward(p, Tensor::matrix(2, 1, {1.0, 3.0}));
  CHECK(tr.alphas[0] == doctest::Approx(0.5));
  CHECK(tr.betas[1] == doctest::Approx(0.5));
  // c = 0.5 * 0.5 * 2 + 0.5 * 0.5 * 6 = 2, y = 3 * 2 + 1
  CHECK(tr.context[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(tr.prediction == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("RETAIN forward matches the reference implementation") {
  const ModelDimensions d = small_dims(7, 4, 5);
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const RetainParameters p = random_retain(d, seed);
    const Tensor x = oracle::random_tensor({7, 3}, rng);
    const ForwardTrace tr = retain_forward(p, x);
    const oracle::RetainOut want = oracle::retain(p, x);
    CHECK(tr.prediction == doctest::Approx(want.prediction).epsilon(1e-12));
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(tr.alphas[i] == doctest::Approx(want.alpha[i]).epsilon(1e-12));
      for (std::size_t k = 0; k < 4; ++k) {
        CHECK(tr.betas.at(i, k) == doctest::Approx(want.beta[i][k]).epsilon(1e-12));
        CHECK(tr.embeddings.at(i, k) == doctest::Approx(want.v[i][k]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("batched traces equal single-window traces") {
  const ModelDimensions d = small_dims(6, 3, 4);
  const RetainParameters p = random_retain(d, 9);
  std::mt19937_64 rng(1);
  std::vector<Tensor> xs;
  for (int i = 0; i < 5; ++i) xs.push_back(oracle::random_tensor({6, 3}, rng));
  std::vector<const Tensor*> ptr;
  for (const Tensor& x : xs) ptr.push_back(&x);
  const std::vector<ForwardTrace> batch = retain_forward(p, ptr);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const ForwardTrace one = retain_forward(p, xs[k]);
    CHECK(batch[k].prediction == doctest::Approx(one.prediction).epsilon(1e-13));
    CHECK(max_abs_diff(batch[k].alphas, one.alphas) < 1e-14);
    CHECK(max_abs_diff(batch[k].betas, one.betas) < 1e-14);
  }
}

TEST_CASE("attention contract") {
  const ModelDimensions d = small_dims(9, 4, 6);
  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ForwardTrace tr = retain_forward(random_retain(d, seed), oracle::random_tensor({9, 3}, rng, 3.0));
    double s = 0.0;
    for (double a : tr.alphas.data()) {
      CHECK(a > 0.0);
      s += a;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    for (double b : tr.betas.data()) CHECK(std::abs(b) < 1.0);
  }
}

TEST_CASE("RETAIN loss gradients match central differences") {
  const ModelDimensions d = small_dims(4, 2, 3);
  const RetainParameters p = random_retain(d, 4);
  std::mt19937_64 rng(8);
  const Tensor x0 = oracle::random_tensor({4, 3}, rng), x1 = oracle::random_tensor({4, 3}, rng);
  const Tensor y = Tensor::matrix(2, 1, {0.3, -0.7});
  std::vector<Tensor> inputs;
  for_each_tensor([&](const Tensor& t) { inputs.push_back(t); }, p);
  const auto build = [&](Tape& t, const std::vector<Var>& v) {
    RetainWeights<Var> w;
    std::size_t k = 0;
    for_each_tensor([&](Var& slot) { slot = v[k++]; }, w);
    const Tensor* windows[] = {&x0, &x1};
    return mse(retain_forward(w, stack_steps(t, windows), 2).prediction, t.constant(y));
  };
  CHECK(gradcheck::worst_error(build, inputs) < 1e-7);
}

TEST_CASE("baseline forward matches the reference implementation") {
  const ModelDimensions d = small_dims(6, 3, 4);
  std::mt19937_64 rng(12);
  BaselineParameters p = init_baseline(d, 2, 3);
  std::normal_distribution<double> n(0.0, 0.5);
  for_each_tensor([&](Tensor& t) { for (double& v : t.data()) v = n(rng); }, p);
  const Tensor x = oracle::random_tensor({6, 3}, rng);
  CHECK(baseline_forward(p, x) == doctest::Approx(oracle::baseline(p, x)).epsilon(1e-12));
}

TEST_CASE("baseline gradients match central differences") {
  const ModelDimensions d = small_dims(3, 2, 2);
  BaselineParameters p = init_baseline(d, 2, 5);
  std::mt19937_64 rng(6);
  const Tensor x0 = oracle::random_tensor({3, 3}, rng), x1 = oracle::random_tensor({3, 3}, rng);
  std::vector<Tensor> inputs;
  for_each_tensor([&](const Tensor& t) { inputs.push_back(t); }, p);
  const auto build = [&](Tape& t, const std::vector<Var>& v) {
    BaselineWeights<Var> w;
    w.layers.resize(2);
    std::size_t k = 0;
    for_each_tensor([&](Var& slot) { slot = v[k++]; }, w);
    const Tensor* windows[] = {&x0, &x1};
    return mse(baseline_forward(w, stack_steps(t, windows), 2),
               t.constant(Tensor::matrix(2, 1, {1.0, -1.0})));
  };
  CHECK(gradcheck::worst_error(build, inputs) < 1e-7);
}

TEST_CASE("initialization is seeded and shaped") {
  const ModelDimensions d = small_dims();
  validate(init_retain(d, 1), d);
  validate(init_baseline(d, 2, 1), d);
  CHECK(init_retain(d, 1).embedding == init_retain(d, 1).embedding);
  CHECK(init_retain(d, 1).embedding != init_retain(d, 2).embedding);
  CHECK_THROWS_AS(validate(init_retain(d, 1), small_dims(5, 3, 5)), ShapeError);
  CHECK_THROWS_AS(make_model(ModelKind::retain, small_dims(0), 1), ContractError);
  CHECK(parse_model_kind("lstm") == ModelKind::lstm);
  CHECK(to_string(ModelKind::retain) == "retain");
  CHECK_THROWS_AS(parse_model_kind("gru"), ContractError);
}

TEST_CASE("weight files round-trip bit for bit") {
  const auto dir = std::filesystem::temp_directory_path() / "retain_test_model";
  std::filesystem::create_directories(dir);
  for (ModelKind kind : {ModelKind::retain, ModelKind::lstm}) {
    const Model m = make_model(kind, small_dims(), 17);
    const auto path = dir / (to_string(kind) + ".rtnw");
    save_model(path, m);
    const Model back = load_model(path);
    CHECK(kind_of(back) == kind);
    CHECK(dimensions(back) == small_dims());
    CHECK(serialize_model(back) == serialize_model(m));
    std::mt19937_64 rng(2);
    const Tensor x = oracle::random_tensor({5, 3}, rng);
    CHECK(predict(back, x) == predict(m, x));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt weight files are rejected") {
  const auto bytes = serialize_model(make_model(ModelKind::retain, small_dims(), 1));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(bad), FormatError);
  CHECK_THROWS_AS(deserialize_model(std::span(bytes).first(bytes.size() - 3)), FormatError);
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(deserialize_model(longer), FormatError);
  auto version = bytes;
  version[4] = 99;
  CHECK_THROWS_AS(deserialize_model(version), FormatError);
  CHECK_THROWS_AS(load_model("/nonexistent/model.rtnw"), FormatError);
}
