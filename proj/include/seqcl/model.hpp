#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "seqcl/errors.hpp"
#include "seqcl/rng.hpp"

namespace seqcl {

enum class Activation { kTanh, kRelu };
enum class HeadKind { kSequenceClassification, kTokenLabeling };

// One block of the flat parameter vector: a weight matrix (rows x cols) or a
// bias vector (rows x 1).
struct LayoutEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t count() const { return rows * cols; }
};

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;  // may be empty (linear model)
  std::size_t num_labels = 0;
  Activation activation = Activation::kTanh;
  HeadKind head_kind = HeadKind::kSequenceClassification;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
    if (num_labels < 2) throw ConfigError("model: num_labels must be >= 2");
    for (std::size_t h : hidden_dims) {
      if (h == 0) throw ConfigError("model: hidden dims must be positive");
    }
  }

  // Layer widths including input and output.
  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d;
    d.push_back(input_dim);
    for (std::size_t h : hidden_dims) d.push_back(h);
    d.push_back(num_labels);
    return d;
  }

  std::vector<LayoutEntry> layout() const {
    std::vector<LayoutEntry> out;
    auto d = dims();
    for (std::size_t l = 0; l + 1 < d.size(); ++l) {
      out.push_back({"W" + std::to_string(l), d[l + 1], d[l]});
      out.push_back({"b" + std::to_string(l), d[l + 1], 1});
    }
    return out;
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& e : layout()) n += e.count();
    return n;
  }
};

// Flat model weights plus the layout describing how the flat array maps onto
// per-layer matrices and bias vectors.
struct ParameterVector {
  std::vector<double> values;
  std::vector<LayoutEntry> layout;

  bool operator==(const ParameterVector& other) const {
    return values == other.values;
  }
};

// One labeled example. Both task styles share this shape: a sequence task has
// exactly one prediction point (features.size() == 1), a token task one per
// token.
struct Example {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  std::string task_id;
};

struct GradientVector {
  std::vector<double> values;
};

namespace detail {

inline void check_example(const ModelConfig& cfg, const Example& ex) {
  if (ex.features.empty())
    throw DataError("example has no prediction points (task " + ex.task_id + ")");
  if (ex.features.size() != ex.labels.size())
    throw DataError("example features/labels length mismatch (task " + ex.task_id + ")");
  for (const auto& f : ex.features) {
    if (f.size() != cfg.input_dim)
      throw DataError("example feature dim " + std::to_string(f.size()) +
                      " does not match input_dim " + std::to_string(cfg.input_dim));
  }
}

inline void check_labels(const ModelConfig& cfg, const Example& ex) {
  for (int y : ex.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= cfg.num_labels)
      throw DataError("label id " + std::to_string(y) + " out of range [0, " +
                      std::to_string(cfg.num_labels) + ")");
  }
}

inline double activate(Activation a, double x) {
  return a == Activation::kTanh ? std::tanh(x) : (x > 0.0 ? x : 0.0);
}

// Derivative expressed through the activation output.
inline double activate_grad(Activation a, double out) {
  return a == Activation::kTanh ? 1.0 - out * out : (out > 0.0 ? 1.0 : 0.0);
}

// Offsets of (W, b) per layer inside the flat array.
struct LayerView {
  std::size_t w_off, b_off, rows, cols;
};

inline std::vector<LayerView> layer_views(const ModelConfig& cfg) {
  std::vector<LayerView> views;
  auto d = cfg.dims();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < d.size(); ++l) {
    LayerView v;
    v.rows = d[l + 1];
    v.cols = d[l];
    v.w_off = off;
    off += v.rows * v.cols;
    v.b_off = off;
    off += v.rows;
    views.push_back(v);
  }
  return views;
}

inline void check_theta(const ModelConfig& cfg, const ParameterVector& theta) {
  if (theta.values.size() != cfg.num_params())
    throw DataError("parameter vector length " + std::to_string(theta.values.size()) +
                    " does not match model layout (" + std::to_string(cfg.num_params()) + ")");
}

// Forward pass for one prediction point; keeps per-layer activations when a
// caller needs them for backprop. acts[0] is the input, acts.back() the
// softmax probabilities.
inline void forward_point(const ModelConfig& cfg, const std::vector<LayerView>& views,
                          const std::vector<double>& theta, const std::vector<double>& x,
                          std::vector<std::vector<double>>& acts) {
  acts.clear();
  acts.push_back(x);
  for (std::size_t l = 0; l < views.size(); ++l) {
    const LayerView& v = views[l];
    const std::vector<double>& in = acts.back();
    std::vector<double> out(v.rows);
    for (std::size_t r = 0; r < v.rows; ++r) {
      double z = theta[v.b_off + r];
      const double* wrow = &theta[v.w_off + r * v.cols];
      for (std::size_t c = 0; c < v.cols; ++c) z += wrow[c] * in[c];
      out[r] = z;
    }
    bool last = (l + 1 == views.size());
    if (!last) {
      for (double& z : out) z = activate(cfg.activation, z);
    }
    acts.push_back(std::move(out));
  }
  // Stable softmax on the logits in place.
  std::vector<double>& logits = acts.back();
  double m = logits[0];
  for (double z : logits) m = std::max(m, z);
  double sum = 0.0;
  for (double& z : logits) {
    z = std::exp(z - m);
    sum += z;
  }
  for (double& z : logits) z /= sum;
}

}  // namespace detail

// Deterministic initialization: per layer, weights uniform in [-a, a] with
// a = sqrt(6 / (fan_in + fan_out)); biases zero.
inline ParameterVector init_model(const ModelConfig& cfg) {
  cfg.validate();
  ParameterVector theta;
  theta.layout = cfg.layout();
  theta.values.assign(cfg.num_params(), 0.0);
  Rng rng(cfg.init_seed);
  auto views = detail::layer_views(cfg);
  for (const auto& v : views) {
    double a = std::sqrt(6.0 / static_cast<double>(v.rows + v.cols));
    for (std::size_t i = 0; i < v.rows * v.cols; ++i)
      theta.values[v.w_off + i] = rng.uniform(-a, a);
    // biases stay zero
  }
  return theta;
}

// Probability vector per prediction point, each summing to 1.
inline std::vector<std::vector<double>> forward(const ParameterVector& theta,
                                                const ModelConfig& cfg,
                                                const Example& ex) {
  detail::check_theta(cfg, theta);
  detail::check_example(cfg, ex);
  auto views = detail::layer_views(cfg);
  std::vector<std::vector<double>> out;
  out.reserve(ex.features.size());
  std::vector<std::vector<double>> acts;
  for (const auto& x : ex.features) {
    detail::forward_point(cfg, views, theta.values, x, acts);
    out.push_back(acts.back());
  }
  return out;
}

// Mean negative log-likelihood over the batch and its exact analytic
// gradient. Token examples average over their tokens first, so every example
// contributes equal weight regardless of length.
inline std::pair<double, GradientVector> loss_and_grad(const ParameterVector& theta,
                                                       const ModelConfig& cfg,
                                                       const std::vector<Example>& batch) {
  if (batch.empty()) throw DataError("loss_and_grad: empty batch");
  detail::check_theta(cfg, theta);
  auto views = detail::layer_views(cfg);

  double loss = 0.0;
  GradientVector grad;
  grad.values.assign(theta.values.size(), 0.0);

  std::vector<std::vector<double>> acts;
  std::vector<double> delta, delta_prev;
  double batch_w = 1.0 / static_cast<double>(batch.size());

  for (const Example& ex : batch) {
    detail::check_example(cfg, ex);
    detail::check_labels(cfg, ex);
    double point_w = batch_w / static_cast<double>(ex.features.size());
    for (std::size_t p = 0; p < ex.features.size(); ++p) {
      detail::forward_point(cfg, views, theta.values, ex.features[p], acts);
      int y = ex.labels[p];
      // acts.back() holds probabilities; NLL from them is safe because the
      // softmax was computed max-shifted.
      const std::vector<double>& probs = acts.back();
      loss -= point_w * std::log(probs[static_cast<std::size_t>(y)]);

      // dL/dlogit = p - onehot(y), scaled by this point's weight.
      delta.assign(probs.begin(), probs.end());
      for (double& d : delta) d *= point_w;
      delta[static_cast<std::size_t>(y)] -= point_w;

      for (std::size_t li = views.size(); li-- > 0;) {
        const detail::LayerView& v = views[li];
        const std::vector<double>& in = acts[li];
        for (std::size_t r = 0; r < v.rows; ++r) {
          double d = delta[r];
          grad.values[v.b_off + r] += d;
          double* grow = &grad.values[v.w_off + r * v.cols];
          for (std::size_t c = 0; c < v.cols; ++c) grow[c] += d * in[c];
        }
        if (li == 0) break;
        delta_prev.assign(v.cols, 0.0);
        for (std::size_t r = 0; r < v.rows; ++r) {
          double d = delta[r];
          const double* wrow = &theta.values[v.w_off + r * v.cols];
          for (std::size_t c = 0; c < v.cols; ++c) delta_prev[c] += wrow[c] * d;
        }
        // acts[li] is the activated output of layer li-1.
        for (std::size_t c = 0; c < v.cols; ++c)
          delta_prev[c] *= detail::activate_grad(cfg.activation, in[c]);
        delta.swap(delta_prev);
      }
    }
  }
  return {loss, std::move(grad)};
}

// Plain gradient descent update, out[i] = theta[i] - lr * grad[i].
inline ParameterVector sgd_step(const ParameterVector& theta, const GradientVector& grad,
                                double lr) {
  if (grad.values.size() != theta.values.size())
    throw DataError("sgd_step: gradient/parameter length mismatch");
  if (!(lr > 0.0)) throw DataError("sgd_step: learning rate must be positive");
  for (double g : grad.values) {
    if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite gradient component");
  }
  ParameterVector out = theta;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] -= lr * grad.values[i];
    if (!std::isfinite(out.values[i]))
      throw NumericError("sgd_step: non-finite parameter after update");
  }
  return out;
}

// Argmax per prediction point; ties break toward the lowest label id.
inline std::vector<int> predict(const ParameterVector& theta, const ModelConfig& cfg,
                                const Example& ex) {
  auto probs = forward(theta, cfg, ex);
  std::vector<int> out;
  out.reserve(probs.size());
  for (const auto& p : probs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
      if (p[i] > p[best]) best = i;
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace seqcl
