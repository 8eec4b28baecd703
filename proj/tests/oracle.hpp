#pragma once

// Reference implementations for the tests. Plain loops over std::vector,
// sharing nothing with the library's kernels or tape.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "retain/model.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const retain::Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.data()[r * t.cols() + c];
  return m;
}

inline Vec to_vec(const retain::Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

inline Vec matvec(const Mat& a, const Vec& x) {
  Vec y(a.size(), 0.0);
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < x.size(); ++c) y[r] += a[r][c] * x[c];
  return y;
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Cell {
  Vec h, c;
};

inline Cell lstm_cell(const retain::LstmParameters& p, const Cell& s, const Vec& x) {
  const Mat w = to_mat(p.input_weights), u = to_mat(p.recurrent_weights);
  const Vec b = to_vec(p.bias);
  const std::size_t h = s.h.size();
  const Vec wx = matvec(w, x), uh = matvec(u, s.h);
  Cell out{Vec(h), Vec(h)};
  for (std::size_t j = 0; j < h; ++j) {
    const double i = logistic(wx[j] + uh[j] + b[j]);
    const double f = logistic(wx[h + j] + uh[h + j] + b[h + j]);
    const double g = std::tanh(wx[2 * h + j] + uh[2 * h + j] + b[2 * h + j]);
    const double o = logistic(wx[3 * h + j] + uh[3 * h + j] + b[3 * h + j]);
    out.c[j] = f * s.c[j] + i * g;
    out.h[j] = o * std::tanh(out.c[j]);
  }
  return out;
}

/// Hidden state after every row of xs.
inline Mat lstm_run(const retain::LstmParameters& p, const Mat& xs) {
  const std::size_t h = p.recurrent_weights.cols();
  Cell s{Vec(h, 0.0), Vec(h, 0.0)};
  Mat out;
  for (const Vec& x : xs) {
    s = lstm_cell(p, s, x);
    out.push_back(s.h);
  }
  return out;
}

struct RetainOut {
  double prediction = 0.0;
  Vec alpha;
  Mat beta;
  Mat v;
};

inline RetainOut retain(const retain::RetainParameters& p, const retain::Tensor& window) {
  const Mat x = to_mat(window), emb = to_mat(p.embedding);
  RetainOut out;
  for (const Vec& row : x) out.v.push_back(matvec(emb, row));
  const Mat g = lstm_run(p.alpha_rnn, out.v), hb = lstm_run(p.beta_rnn, out.v);
  const Vec wa = to_vec(p.alpha_weight);
  const Mat wb = to_mat(p.beta_weight);
  const Vec bb = to_vec(p.beta_bias), wo = to_vec(p.output_weight);
  Vec e;
  for (const Vec& gi : g) {
    double s = p.alpha_bias.item();
    for (std::size_t k = 0; k < gi.size(); ++k) s += wa[k] * gi[k];
    e.push_back(s);
  }
  double emax = e[0];
  for (double v : e) emax = std::max(emax, v);
  double z = 0.0;
  for (double v : e) z += std::exp(v - emax);
  for (double v : e) out.alpha.push_back(std::exp(v - emax) / z);
  for (const Vec& hi : hb) {
    Vec b = matvec(wb, hi);
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = std::tanh(b[k] + bb[k]);
    out.beta.push_back(b);
  }
  Vec c(wo.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += out.alpha[i] * out.beta[i][k] * out.v[i][k];
  out.prediction = p.output_bias.item();
  for (std::size_t k = 0; k < c.size(); ++k) out.prediction += wo[k] * c[k];
  return out;
}

/// Last hidden state through the stacked baseline.
inline double baseline(const retain::BaselineParameters& p, const retain::Tensor& window) {
  Mat seq;
  for (const Vec& row : to_mat(window)) seq.push_back(matvec(to_mat(p.embedding), row));
  for (const auto& layer : p.layers) seq = lstm_run(layer, seq);
  const Vec wo = to_vec(p.output_weight);
  double y = p.output_bias.item();
  for (std::size_t k = 0; k < wo.size(); ++k) y += wo[k] * seq.back()[k];
  return y;
}

/// Central difference of f with respect to *value.
inline double central_difference(const std::function<double()>& f, double* value, double step) {
  const double keep = *value;
  *value = keep + step;
  const double up = f();
  *value = keep - step;
  const double down = f();
  *value = keep;
  return (up - down) / (2.0 * step);
}

inline retain::Tensor random_tensor(retain::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  retain::Tensor t(std::move(shape));
  for (double& v : t.data()) v = n(rng);
  return t;
}

}  // namespace oracle
