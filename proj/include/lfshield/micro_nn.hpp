#pragma once

// One-hidden-layer MLP classifier: input -> hidden ReLU -> softmax.
// Forward, exact analytic backward and momentum SGD, all double precision.
// The output layer is addressable neuron by neuron, which is what the
// defense inspects.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "lfshield/linalg.hpp"
#include "lfshield/rng.hpp"

namespace lfshield {

struct ModelShape {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t classes = 0;

  bool operator==(const ModelShape&) const = default;
};

struct ModelParams {
  Matrix w1;               // [hidden x input]
  std::vector<double> b1;  // [hidden]
  Matrix w2;               // [classes x hidden]
  std::vector<double> b2;  // [classes]

  static ModelParams zeros(const ModelShape& s) {
    ModelParams p;
    p.w1 = Matrix(s.hidden, s.input);
    p.b1.assign(s.hidden, 0.0);
    p.w2 = Matrix(s.classes, s.hidden);
    p.b2.assign(s.classes, 0.0);
    return p;
  }

  ModelShape shape() const { return {w1.cols(), w1.rows(), w2.rows()}; }

  std::size_t size() const {
    return w1.data().size() + b1.size() + w2.data().size() + b2.size();
  }

  bool all_finite() const {
    return lfshield::all_finite(w1.data()) && lfshield::all_finite(b1) &&
           lfshield::all_finite(w2.data()) && lfshield::all_finite(b2);
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(size());
    out.insert(out.end(), w1.data().begin(), w1.data().end());
    out.insert(out.end(), b1.begin(), b1.end());
    out.insert(out.end(), w2.data().begin(), w2.data().end());
    out.insert(out.end(), b2.begin(), b2.end());
    return out;
  }

  static ModelParams unflatten(const ModelShape& s, std::span<const double> flat) {
    ModelParams p = zeros(s);
    if (flat.size() != p.size())
      throw std::invalid_argument("unflatten: flat size does not match shape");
    std::size_t k = 0;
    for (auto& v : p.w1.data()) v = flat[k++];
    for (auto& v : p.b1) v = flat[k++];
    for (auto& v : p.w2.data()) v = flat[k++];
    for (auto& v : p.b2) v = flat[k++];
    return p;
  }

  // this += s * other
  void add_scaled(const ModelParams& other, double s) {
    auto axpy = [s](std::vector<double>& dst, const std::vector<double>& src) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
    };
    axpy(w1.data(), other.w1.data());
    axpy(b1, other.b1);
    axpy(w2.data(), other.w2.data());
    axpy(b2, other.b2);
  }

  void scale(double s) {
    for (auto& v : w1.data()) v *= s;
    for (auto& v : b1) v *= s;
    for (auto& v : w2.data()) v *= s;
    for (auto& v : b2) v *= s;
  }
};

// Gradients and SGD velocities share the parameter layout.
using ModelGrads = ModelParams;

struct ForwardTrace {
  std::vector<double> input;       // copy of x, consumed by backward
  std::vector<double> hidden_pre;  // w1 x + b1
  std::vector<double> hidden_act;  // ReLU(hidden_pre)
  std::vector<double> logits;      // o
  std::vector<double> probs;       // p = softmax(o)
};

struct Hyperparams {
  double lr = 0.01;
  double momentum = 0.9;
  int local_epochs = 3;
  std::size_t batch_size = 32;
};

// Glorot-style uniform weights, zero biases.
inline ModelParams init_params(const ModelShape& s, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = ModelParams::zeros(s);
  const double lim1 = std::sqrt(6.0 / static_cast<double>(s.input + s.hidden));
  for (auto& v : p.w1.data()) v = rng.uniform(-lim1, lim1);
  const double lim2 = std::sqrt(6.0 / static_cast<double>(s.hidden + s.classes));
  for (auto& v : p.w2.data()) v = rng.uniform(-lim2, lim2);
  return p;
}

inline ForwardTrace forward(const ModelParams& params, std::span<const double> x) {
  const ModelShape s = params.shape();
  if (x.size() != s.input) throw std::invalid_argument("forward: input dimension mismatch");

  ForwardTrace t;
  t.input.assign(x.begin(), x.end());
  t.hidden_pre.resize(s.hidden);
  t.hidden_act.resize(s.hidden);
  for (std::size_t j = 0; j < s.hidden; ++j) {
    t.hidden_pre[j] = dot(params.w1.row(j), x) + params.b1[j];
    t.hidden_act[j] = t.hidden_pre[j] > 0.0 ? t.hidden_pre[j] : 0.0;
  }

  t.logits.resize(s.classes);
  for (std::size_t i = 0; i < s.classes; ++i)
    t.logits[i] = dot(params.w2.row(i), t.hidden_act) + params.b2[i];

  // Softmax with max-logit subtraction.
  double mx = -std::numeric_limits<double>::infinity();
  for (double o : t.logits) mx = std::max(mx, o);
  t.probs.resize(s.classes);
  double z = 0.0;
  for (std::size_t i = 0; i < s.classes; ++i) {
    t.probs[i] = std::exp(t.logits[i] - mx);
    z += t.probs[i];
  }
  for (auto& p : t.probs) p /= z;
  return t;
}

inline bool is_one_hot(std::span<const double> y) {
  std::size_t ones = 0;
  for (double v : y) {
    if (v == 1.0)
      ++ones;
    else if (v != 0.0)
      return false;
  }
  return ones == 1;
}

inline std::vector<double> one_hot(std::size_t classes, std::size_t label) {
  if (label >= classes) throw std::invalid_argument("one_hot: label out of range");
  std::vector<double> y(classes, 0.0);
  y[label] = 1.0;
  return y;
}

inline constexpr double kProbClamp = 1e-12;

inline double cross_entropy(std::span<const double> probs, std::span<const double> y) {
  if (probs.size() != y.size()) throw std::invalid_argument("cross_entropy: size mismatch");
  if (!is_one_hot(y)) throw std::invalid_argument("cross_entropy: y is not one-hot");
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] == 1.0) loss -= std::log(std::max(probs[i], kProbClamp));
  return loss;
}

// delta = probs - y at the output; hidden deltas gated by ReLU'.
inline ModelGrads backward(const ModelParams& params, const ForwardTrace& trace,
                           std::span<const double> y) {
  const ModelShape s = params.shape();
  if (y.size() != s.classes) throw std::invalid_argument("backward: label dimension mismatch");
  if (trace.input.size() != s.input || trace.hidden_act.size() != s.hidden)
    throw std::invalid_argument("backward: trace does not match params shape");

  ModelGrads g = ModelParams::zeros(s);

  std::vector<double> delta(s.classes);
  for (std::size_t i = 0; i < s.classes; ++i) delta[i] = trace.probs[i] - y[i];

  for (std::size_t i = 0; i < s.classes; ++i) {
    g.b2[i] = delta[i];
    auto row = g.w2.row(i);
    for (std::size_t j = 0; j < s.hidden; ++j) row[j] = delta[i] * trace.hidden_act[j];
  }

  for (std::size_t j = 0; j < s.hidden; ++j) {
    if (trace.hidden_pre[j] > 0.0) {
      double dh = 0.0;
      for (std::size_t i = 0; i < s.classes; ++i) dh += params.w2(i, j) * delta[i];
      g.b1[j] = dh;
      auto row = g.w1.row(j);
      for (std::size_t k = 0; k < s.input; ++k) row[k] = dh * trace.input[k];
    }
  }
  return g;
}

// v <- mu v + g; theta <- theta - eta v
inline void sgd_step(ModelParams& params, ModelGrads& velocity, const ModelGrads& grad,
                     const Hyperparams& hp) {
  auto step = [&](std::vector<double>& theta, std::vector<double>& v,
                  const std::vector<double>& g) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = hp.momentum * v[i] + g[i];
      theta[i] -= hp.lr * v[i];
    }
  };
  step(params.w1.data(), velocity.w1.data(), grad.w1.data());
  step(params.b1, velocity.b1, grad.b1);
  step(params.w2.data(), velocity.w2.data(), grad.w2.data());
  step(params.b2, velocity.b2, grad.b2);
}

}  // namespace lfshield
