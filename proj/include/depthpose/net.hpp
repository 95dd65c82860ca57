#pragma once

// Minimal CPU network engine: valid 2-D convolution (stride 1), ReLU,
// max-pooling (window = stride), fully-connected and inverted dropout, with
// Xavier initialisation, exact backward pass and SGD with momentum.
//
// Tensors are NHWC. Parameters and activations are f32; every reduction
// (dot products, gradient sums) accumulates in f64.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthpose/error.hpp"
#include "depthpose/random.hpp"

namespace depthpose {

enum class LayerKind { Conv, MaxPool, ReLU, FullyConnected, Dropout };

inline const char *to_string(LayerKind k) {
  switch (k) {
  case LayerKind::Conv: return "conv";
  case LayerKind::MaxPool: return "maxpool";
  case LayerKind::ReLU: return "relu";
  case LayerKind::FullyConnected: return "fc";
  case LayerKind::Dropout: return "dropout";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int kernel_h = 0, kernel_w = 0; // Conv
  int channels = 0;               // Conv output channels
  int pool = 0;                   // MaxPool window and stride
  int units = 0;                  // FullyConnected outputs
  double rate = 0.0;              // Dropout drop probability

  static LayerSpec conv(int kh, int kw, int out) { return {LayerKind::Conv, kh, kw, out, 0, 0, 0.0}; }
  static LayerSpec maxpool(int size) { return {LayerKind::MaxPool, 0, 0, 0, size, 0, 0.0}; }
  static LayerSpec relu() { return {LayerKind::ReLU, 0, 0, 0, 0, 0, 0.0}; }
  static LayerSpec fc(int units) { return {LayerKind::FullyConnected, 0, 0, 0, 0, units, 0.0}; }
  static LayerSpec dropout(double rate) { return {LayerKind::Dropout, 0, 0, 0, 0, 0, rate}; }

  bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::FullyConnected; }
  friend bool operator==(const LayerSpec &, const LayerSpec &) = default;
};

struct Shape3 {
  int h = 0, w = 0, c = 0;
  std::size_t size() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c); }
  friend bool operator==(const Shape3 &, const Shape3 &) = default;
};

struct NetworkSpec {
  std::string name;
  Shape3 input{100, 100, 1};
  std::vector<LayerSpec> layers;

  /// Activation shape after every layer (index i = output of layer i).
  /// Throws ValidationError if the chain is inconsistent.
  std::vector<Shape3> shapes() const {
    detail::require(input.h > 0 && input.w > 0 && input.c > 0, "network input shape must be positive");
    detail::require(!layers.empty(), "network has no layers");
    detail::require(layers.back().kind == LayerKind::FullyConnected, "final layer must be fully-connected");
    std::vector<Shape3> out;
    Shape3 s = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto &l = layers[i];
      const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
      switch (l.kind) {
      case LayerKind::Conv:
        detail::require(l.kernel_h >= 1 && l.kernel_w >= 1 && l.channels >= 1, where + ": bad conv parameters");
        detail::require(s.h >= l.kernel_h && s.w >= l.kernel_w, where + ": kernel larger than input");
        s = {s.h - l.kernel_h + 1, s.w - l.kernel_w + 1, l.channels};
        break;
      case LayerKind::MaxPool:
        detail::require(l.pool >= 1, where + ": pool size must be >= 1");
        detail::require(s.h >= l.pool && s.w >= l.pool, where + ": pool window larger than input");
        s = {s.h / l.pool, s.w / l.pool, s.c};
        break;
      case LayerKind::ReLU: break;
      case LayerKind::FullyConnected:
        detail::require(l.units >= 1, where + ": units must be >= 1");
        s = {1, 1, l.units};
        break;
      case LayerKind::Dropout:
        detail::require(l.rate >= 0.0 && l.rate < 1.0, where + ": dropout rate must be in [0, 1)");
        break;
      }
      out.push_back(s);
    }
    return out;
  }

  void validate() const { (void)shapes(); }
  int output_size() const { return layers.back().units; }
  friend bool operator==(const NetworkSpec &, const NetworkSpec &) = default;
};

/// Weight and bias counts of layer i given its input shape.
inline std::pair<std::size_t, std::size_t> layer_param_counts(const LayerSpec &l, const Shape3 &in) {
  switch (l.kind) {
  case LayerKind::Conv:
    return {static_cast<std::size_t>(l.kernel_h) * static_cast<std::size_t>(l.kernel_w) *
                static_cast<std::size_t>(in.c) * static_cast<std::size_t>(l.channels),
            static_cast<std::size_t>(l.channels)};
  case LayerKind::FullyConnected:
    return {in.size() * static_cast<std::size_t>(l.units), static_cast<std::size_t>(l.units)};
  default: return {0, 0};
  }
}

inline std::size_t param_count(const NetworkSpec &spec) {
  const auto shapes = spec.shapes();
  std::size_t total = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto [w, b] = layer_param_counts(spec.layers[i], i == 0 ? spec.input : shapes[i - 1]);
    total += w + b;
  }
  return total;
}

/// Full-size architecture: 100x100 input, five conv blocks (ReLU, optional
/// 2x2 pool), FC 1024 + dropout 0.2, FC 256, FC `outputs`.
inline NetworkSpec ddp_paper_spec(int outputs) {
  using L = LayerSpec;
  return {"ddp-paper",
          {100, 100, 1},
          {L::conv(7, 7, 96), L::relu(), L::maxpool(2), L::conv(5, 5, 192), L::relu(), L::maxpool(2),
           L::conv(3, 3, 512), L::relu(), L::maxpool(2), L::conv(2, 2, 1024), L::relu(), L::conv(2, 2, 2048),
           L::relu(), L::fc(1024), L::relu(), L::dropout(0.2), L::fc(256), L::relu(), L::fc(outputs)}};
}

/// Desk-scale variant for 32x32 inputs: 32 -> 28 -> 14 -> 12 -> 6 -> 4 -> 3 -> 2.
inline NetworkSpec ddp_desk_spec(int outputs) {
  using L = LayerSpec;
  return {"ddp-desk",
          {32, 32, 1},
          {L::conv(5, 5, 16), L::relu(), L::maxpool(2), L::conv(3, 3, 32), L::relu(), L::maxpool(2),
           L::conv(3, 3, 64), L::relu(), L::conv(2, 2, 64), L::relu(), L::conv(2, 2, 64), L::relu(),
           L::fc(128), L::relu(), L::dropout(0.2), L::fc(64), L::relu(), L::fc(outputs)}};
}

inline NetworkSpec network_preset(const std::string &name, int outputs) {
  if (name == "ddp-paper")
    return ddp_paper_spec(outputs);
  if (name == "ddp-desk")
    return ddp_desk_spec(outputs);
  throw ValidationError("unknown network preset '" + name + "'");
}

// ---------------------------------------------------------------------------

/// Batch tensor, NHWC, f32.
struct Tensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int h_, int w_, int c_, float fill = 0.0f)
      : n(n_), h(h_), w(w_), c(c_), data(static_cast<std::size_t>(n_) * sample_size_of(h_, w_, c_), fill) {}

  static std::size_t sample_size_of(int h, int w, int c) {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c);
  }
  std::size_t sample_size() const { return sample_size_of(h, w, c); }
  std::span<const float> sample(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * sample_size(), sample_size()};
  }
  std::span<float> sample(int i) { return {data.data() + static_cast<std::size_t>(i) * sample_size(), sample_size()}; }
};

struct LayerParams {
  std::vector<float> weight, bias;
  std::vector<float> weight_velocity, bias_velocity;
  friend bool operator==(const LayerParams &, const LayerParams &) = default;
};

struct NetworkState {
  NetworkSpec spec;
  std::vector<LayerParams> layers; ///< one per spec layer; empty for parameter-free layers
  std::uint64_t version = 0;       ///< bumped by every parameter update

  friend bool operator==(const NetworkState &a, const NetworkState &b) {
    return a.spec == b.spec && a.layers == b.layers;
  }
};

/// Xavier-normal weights, sigma = sqrt(2 / (fan_in + fan_out)), zero biases.
/// For convolutions fan_in = kh*kw*c_in and fan_out = kh*kw*c_out.
inline NetworkState init_network(const NetworkSpec &spec, std::uint64_t seed) {
  const auto shapes = spec.shapes();
  NetworkState st{spec, std::vector<LayerParams>(spec.layers.size()), 0};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto &l = spec.layers[i];
    if (!l.has_params())
      continue;
    const Shape3 in = i == 0 ? spec.input : shapes[i - 1];
    const auto [nw, nb] = layer_param_counts(l, in);
    double fan_in = 0, fan_out = 0;
    if (l.kind == LayerKind::Conv) {
      fan_in = static_cast<double>(l.kernel_h * l.kernel_w * in.c);
      fan_out = static_cast<double>(l.kernel_h * l.kernel_w * l.channels);
    } else {
      fan_in = static_cast<double>(in.size());
      fan_out = static_cast<double>(l.units);
    }
    const double sigma = std::sqrt(2.0 / (fan_in + fan_out));
    Rng rng = make_rng(seed, "init", i);
    auto &p = st.layers[i];
    p.weight.resize(nw);
    for (auto &w : p.weight)
      w = static_cast<float>(sigma * standard_normal(rng));
    p.bias.assign(nb, 0.0f);
    p.weight_velocity.assign(nw, 0.0f);
    p.bias_velocity.assign(nb, 0.0f);
  }
  return st;
}

enum class Mode { Train, Eval };

/// Per-sample intermediate values kept for the backward pass.
struct SampleCache {
  std::vector<std::vector<float>> inputs;       ///< input of every layer
  std::vector<std::vector<std::uint32_t>> argmax; ///< MaxPool: flat input index per output
  std::vector<std::vector<float>> masks;        ///< Dropout: per-element multiplier
  std::vector<float> output;
};

struct ForwardCache {
  std::uint64_t version = 0;
  Mode mode = Mode::Eval;
  std::vector<SampleCache> samples;
};

/// Parameter gradients (f64) for every layer; `input` holds dL/dinput for
/// the batch when requested.
struct Gradients {
  std::vector<std::vector<double>> weight, bias;
  std::vector<double> input;

  static Gradients zeros_like(const NetworkState &st) {
    Gradients g;
    for (const auto &l : st.layers) {
      g.weight.emplace_back(l.weight.size(), 0.0);
      g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
  }

  void set_zero() {
    for (auto &v : weight)
      std::fill(v.begin(), v.end(), 0.0);
    for (auto &v : bias)
      std::fill(v.begin(), v.end(), 0.0);
    std::fill(input.begin(), input.end(), 0.0);
  }

  void add(const Gradients &o) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      for (std::size_t k = 0; k < weight[i].size(); ++k)
        weight[i][k] += o.weight[i][k];
      for (std::size_t k = 0; k < bias[i].size(); ++k)
        bias[i][k] += o.bias[i][k];
    }
  }

  void scale(double s) {
    for (auto &v : weight)
      for (auto &x : v)
        x *= s;
    for (auto &v : bias)
      for (auto &x : v)
        x *= s;
    for (auto &x : input)
      x *= s;
  }
};

namespace detail {

inline void conv_forward(const LayerSpec &l, const Shape3 &in, const Shape3 &out, const LayerParams &p,
                         std::span<const float> x, std::span<float> y) {
  const int cin = in.c, cout = out.c;
  const std::size_t row_len = static_cast<std::size_t>(l.kernel_w) * static_cast<std::size_t>(cin);
  std::vector<double> acc(static_cast<std::size_t>(cout));
  for (int oy = 0; oy < out.h; ++oy)
    for (int ox = 0; ox < out.w; ++ox) {
      for (int o = 0; o < cout; ++o)
        acc[static_cast<std::size_t>(o)] = p.bias[static_cast<std::size_t>(o)];
      for (int ky = 0; ky < l.kernel_h; ++ky) {
        const float *src = x.data() + (static_cast<std::size_t>(oy + ky) * static_cast<std::size_t>(in.w) +
                                       static_cast<std::size_t>(ox)) * static_cast<std::size_t>(cin);
        const float *wbase = p.weight.data() + static_cast<std::size_t>(ky) * row_len * static_cast<std::size_t>(cout);
        for (std::size_t j = 0; j < row_len; ++j) {
          const double v = src[j];
          const float *wrow = wbase + j * static_cast<std::size_t>(cout);
          for (int o = 0; o < cout; ++o)
            acc[static_cast<std::size_t>(o)] += v * static_cast<double>(wrow[o]);
        }
      }
      float *dst = y.data() + (static_cast<std::size_t>(oy) * static_cast<std::size_t>(out.w) + static_cast<std::size_t>(ox)) *
                                  static_cast<std::size_t>(cout);
      for (int o = 0; o < cout; ++o)
        dst[o] = static_cast<float>(acc[static_cast<std::size_t>(o)]);
    }
}

inline void conv_backward(const LayerSpec &l, const Shape3 &in, const Shape3 &out, const LayerParams &p,
                          std::span<const float> x, std::span<const double> gy, std::vector<double> &gw,
                          std::vector<double> &gb, std::vector<double> *gx) {
  const int cin = in.c, cout = out.c;
  const std::size_t row_len = static_cast<std::size_t>(l.kernel_w) * static_cast<std::size_t>(cin);
  for (int oy = 0; oy < out.h; ++oy)
    for (int ox = 0; ox < out.w; ++ox) {
      const double *g = gy.data() + (static_cast<std::size_t>(oy) * static_cast<std::size_t>(out.w) + static_cast<std::size_t>(ox)) *
                                        static_cast<std::size_t>(cout);
      for (int o = 0; o < cout; ++o)
        gb[static_cast<std::size_t>(o)] += g[o];
      for (int ky = 0; ky < l.kernel_h; ++ky) {
        const std::size_t src_off = (static_cast<std::size_t>(oy + ky) * static_cast<std::size_t>(in.w) +
                                     static_cast<std::size_t>(ox)) * static_cast<std::size_t>(cin);
        const std::size_t wrow0 = static_cast<std::size_t>(ky) * row_len * static_cast<std::size_t>(cout);
        for (std::size_t j = 0; j < row_len; ++j) {
          const double v = x[src_off + j];
          double *gwrow = gw.data() + wrow0 + j * static_cast<std::size_t>(cout);
          for (int o = 0; o < cout; ++o)
            gwrow[o] += v * g[o];
          if (gx) {
            const float *wrow = p.weight.data() + wrow0 + j * static_cast<std::size_t>(cout);
            double s = 0.0;
            for (int o = 0; o < cout; ++o)
              s += static_cast<double>(wrow[o]) * g[o];
            (*gx)[src_off + j] += s;
          }
        }
      }
    }
}

inline void fc_forward(const LayerParams &p, std::size_t n_in, std::size_t n_out, std::span<const float> x,
                       std::span<float> y) {
  std::vector<double> acc(p.bias.begin(), p.bias.end());
  for (std::size_t i = 0; i < n_in; ++i) {
    const double v = x[i];
    if (v == 0.0)
      continue;
    const float *wrow = p.weight.data() + i * n_out;
    for (std::size_t o = 0; o < n_out; ++o)
      acc[o] += v * static_cast<double>(wrow[o]);
  }
  for (std::size_t o = 0; o < n_out; ++o)
    y[o] = static_cast<float>(acc[o]);
}

inline void fc_backward(const LayerParams &p, std::size_t n_in, std::size_t n_out, std::span<const float> x,
                        std::span<const double> gy, std::vector<double> &gw, std::vector<double> &gb,
                        std::vector<double> *gx) {
  for (std::size_t o = 0; o < n_out; ++o)
    gb[o] += gy[o];
  for (std::size_t i = 0; i < n_in; ++i) {
    const double v = x[i];
    double *gwrow = gw.data() + i * n_out;
    if (v != 0.0)
      for (std::size_t o = 0; o < n_out; ++o)
        gwrow[o] += v * gy[o];
    if (gx) {
      const float *wrow = p.weight.data() + i * n_out;
      double s = 0.0;
      for (std::size_t o = 0; o < n_out; ++o)
        s += static_cast<double>(wrow[o]) * gy[o];
      (*gx)[i] += s;
    }
  }
}

} // namespace detail

/// Forward pass of one sample. In Mode::Train, dropout masks are drawn from
/// `dropout_rng`; in Mode::Eval dropout is the identity.
inline SampleCache forward_sample(const NetworkState &st, std::span<const float> input, Mode mode,
                                  Rng *dropout_rng = nullptr) {
  const auto &spec = st.spec;
  const auto shapes = spec.shapes();
  detail::require(input.size() == spec.input.size(), "forward: input size does not match the network input");
  SampleCache cache;
  cache.inputs.resize(spec.layers.size());
  cache.argmax.resize(spec.layers.size());
  cache.masks.resize(spec.layers.size());
  std::vector<float> cur(input.begin(), input.end());
  Shape3 in = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto &l = spec.layers[i];
    const Shape3 out = shapes[i];
    std::vector<float> next(out.size());
    switch (l.kind) {
    case LayerKind::Conv: detail::conv_forward(l, in, out, st.layers[i], cur, next); break;
    case LayerKind::FullyConnected: detail::fc_forward(st.layers[i], in.size(), out.size(), cur, next); break;
    case LayerKind::ReLU:
      for (std::size_t k = 0; k < cur.size(); ++k)
        next[k] = cur[k] > 0.0f ? cur[k] : 0.0f;
      break;
    case LayerKind::MaxPool: {
      auto &arg = cache.argmax[i];
      arg.resize(out.size());
      for (int oy = 0; oy < out.h; ++oy)
        for (int ox = 0; ox < out.w; ++ox)
          for (int c = 0; c < out.c; ++c) {
            std::size_t best_idx = 0;
            float best = 0.0f;
            bool first = true;
            for (int dy = 0; dy < l.pool; ++dy)
              for (int dx = 0; dx < l.pool; ++dx) {
                const std::size_t idx = (static_cast<std::size_t>(oy * l.pool + dy) * static_cast<std::size_t>(in.w) +
                                         static_cast<std::size_t>(ox * l.pool + dx)) * static_cast<std::size_t>(in.c) +
                                        static_cast<std::size_t>(c);
                if (first || cur[idx] > best) {
                  best = cur[idx];
                  best_idx = idx;
                  first = false;
                }
              }
            const std::size_t o = (static_cast<std::size_t>(oy) * static_cast<std::size_t>(out.w) + static_cast<std::size_t>(ox)) *
                                      static_cast<std::size_t>(out.c) + static_cast<std::size_t>(c);
            next[o] = best;
            arg[o] = static_cast<std::uint32_t>(best_idx);
          }
      break;
    }
    case LayerKind::Dropout:
      if (mode == Mode::Train && l.rate > 0.0) {
        detail::require(dropout_rng != nullptr, "forward: training mode needs a dropout RNG");
        const float keep_scale = static_cast<float>(1.0 / (1.0 - l.rate));
        auto &m = cache.masks[i];
        m.resize(cur.size());
        for (std::size_t k = 0; k < cur.size(); ++k) {
          m[k] = uniform01(*dropout_rng) < l.rate ? 0.0f : keep_scale;
          next[k] = cur[k] * m[k];
        }
      } else {
        next = cur;
      }
      break;
    }
    cache.inputs[i] = std::move(cur);
    cur = std::move(next);
    in = out;
  }
  cache.output = std::move(cur);
  return cache;
}

/// Backward pass of one sample: adds dL/dtheta into `grads` (which must be
/// shaped like the state) and, when `input_grad` is non-null, writes dL/dx.
inline void backward_sample(const NetworkState &st, const SampleCache &cache, std::span<const double> output_grad,
                            Gradients &grads, std::vector<double> *input_grad = nullptr) {
  const auto &spec = st.spec;
  const auto shapes = spec.shapes();
  detail::require(output_grad.size() == cache.output.size(), "backward: output gradient size mismatch");
  std::vector<double> g(output_grad.begin(), output_grad.end());
  for (std::size_t ii = spec.layers.size(); ii-- > 0;) {
    const auto &l = spec.layers[ii];
    const Shape3 in = ii == 0 ? spec.input : shapes[ii - 1];
    const Shape3 out = shapes[ii];
    const auto &x = cache.inputs[ii];
    const bool want_gx = ii > 0 || input_grad != nullptr;
    std::vector<double> gx(want_gx ? in.size() : 0, 0.0);
    switch (l.kind) {
    case LayerKind::Conv:
      detail::conv_backward(l, in, out, st.layers[ii], x, g, grads.weight[ii], grads.bias[ii], want_gx ? &gx : nullptr);
      break;
    case LayerKind::FullyConnected:
      detail::fc_backward(st.layers[ii], in.size(), out.size(), x, g, grads.weight[ii], grads.bias[ii],
                          want_gx ? &gx : nullptr);
      break;
    case LayerKind::ReLU:
      if (want_gx)
        for (std::size_t k = 0; k < gx.size(); ++k)
          gx[k] = x[k] > 0.0f ? g[k] : 0.0;
      break;
    case LayerKind::MaxPool:
      if (want_gx)
        for (std::size_t o = 0; o < g.size(); ++o)
          gx[cache.argmax[ii][o]] += g[o];
      break;
    case LayerKind::Dropout:
      if (want_gx) {
        const auto &m = cache.masks[ii];
        for (std::size_t k = 0; k < gx.size(); ++k)
          gx[k] = m.empty() ? g[k] : g[k] * static_cast<double>(m[k]);
      }
      break;
    }
    g = std::move(gx);
  }
  if (input_grad)
    *input_grad = std::move(g);
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers (contiguous
/// static chunks). fn must only write to per-index state.
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)> &fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i)
      fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (count + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk, hi = std::min(count, lo + chunk);
    if (lo >= hi)
      break;
    pool.emplace_back([&fn, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i)
        fn(i);
    });
  }
  for (auto &th : pool)
    th.join();
}

/// Batch forward. Dropout masks for sample i come from the sub-stream
/// (dropout_seed, "dropout", i), so results do not depend on `threads`.
inline std::pair<Tensor, ForwardCache> forward(const NetworkState &st, const Tensor &batch, Mode mode,
                                               std::uint64_t dropout_seed = 0, unsigned threads = 1) {
  const auto &in = st.spec.input;
  if (batch.h != in.h || batch.w != in.w || batch.c != in.c)
    throw ValidationError("forward: batch shape (" + std::to_string(batch.h) + "x" + std::to_string(batch.w) + "x" +
                          std::to_string(batch.c) + ") does not match the network input");
  ForwardCache cache{st.version, mode, std::vector<SampleCache>(static_cast<std::size_t>(batch.n))};
  parallel_for(static_cast<std::size_t>(batch.n), threads, [&](std::size_t i) {
    Rng rng = make_rng(dropout_seed, "dropout", i);
    cache.samples[i] = forward_sample(st, batch.sample(static_cast<int>(i)), mode, &rng);
  });
  Tensor out(batch.n, 1, 1, st.spec.output_size());
  for (int i = 0; i < batch.n; ++i)
    std::copy(cache.samples[static_cast<std::size_t>(i)].output.begin(),
              cache.samples[static_cast<std::size_t>(i)].output.end(), out.sample(i).begin());
  return {std::move(out), std::move(cache)};
}

/// Batch backward: gradients summed over samples in index order; the input
/// gradient (batch-major, NHWC) is always filled.
inline Gradients backward(const NetworkState &st, const ForwardCache &cache, std::span<const double> output_grad,
                          unsigned threads = 1) {
  if (cache.version != st.version)
    throw ValidationError("backward: stale cache (network was updated after the forward pass)");
  const std::size_t n = cache.samples.size();
  const std::size_t k = static_cast<std::size_t>(st.spec.output_size());
  detail::require(output_grad.size() == n * k, "backward: output gradient size mismatch");
  Gradients total = Gradients::zeros_like(st);
  const std::size_t in_size = st.spec.input.size();
  total.input.assign(n * in_size, 0.0);
  std::vector<Gradients> per(n, Gradients::zeros_like(st));
  std::vector<std::vector<double>> gx(n);
  parallel_for(n, threads, [&](std::size_t i) {
    backward_sample(st, cache.samples[i], output_grad.subspan(i * k, k), per[i], &gx[i]);
  });
  for (std::size_t i = 0; i < n; ++i) {
    total.add(per[i]);
    std::copy(gx[i].begin(), gx[i].end(), total.input.begin() + static_cast<std::ptrdiff_t>(i * in_size));
  }
  return total;
}

/// v <- momentum * v + g;  theta <- theta - lr * v.  Updates `st` in place
/// and bumps its version, invalidating outstanding forward caches.
inline void sgd_step(NetworkState &st, const Gradients &grads, double lr, double momentum) {
  detail::require(grads.weight.size() == st.layers.size() && grads.bias.size() == st.layers.size(),
                  "sgd_step: gradient layer count mismatch");
  for (std::size_t i = 0; i < st.layers.size(); ++i) {
    detail::require(grads.weight[i].size() == st.layers[i].weight.size() &&
                        grads.bias[i].size() == st.layers[i].bias.size(),
                    "sgd_step: gradient shape mismatch in layer " + std::to_string(i));
    for (const auto *v : {&grads.weight[i], &grads.bias[i]})
      for (double x : *v)
        if (!std::isfinite(x))
          throw ValidationError("sgd_step: non-finite gradient in layer " + std::to_string(i) + " (" +
                                to_string(st.spec.layers[i].kind) + ")");
  }
  auto update = [&](std::vector<float> &theta, std::vector<float> &vel, const std::vector<double> &g) {
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double v = momentum * static_cast<double>(vel[k]) + g[k];
      vel[k] = static_cast<float>(v);
      theta[k] = static_cast<float>(static_cast<double>(theta[k]) - lr * v);
    }
  };
  for (std::size_t i = 0; i < st.layers.size(); ++i) {
    update(st.layers[i].weight, st.layers[i].weight_velocity, grads.weight[i]);
    update(st.layers[i].bias, st.layers[i].bias_velocity, grads.bias[i]);
  }
  ++st.version;
}

// ---------------------------------------------------------------------------
// JSON form of a spec (used in training configs and model metadata).

inline void to_json(nlohmann::json &j, const LayerSpec &l) {
  j = {{"type", to_string(l.kind)}};
  switch (l.kind) {
  case LayerKind::Conv: j["kernel"] = {l.kernel_h, l.kernel_w}; j["channels"] = l.channels; break;
  case LayerKind::MaxPool: j["size"] = l.pool; break;
  case LayerKind::FullyConnected: j["units"] = l.units; break;
  case LayerKind::Dropout: j["rate"] = l.rate; break;
  case LayerKind::ReLU: break;
  }
}

inline void from_json(const nlohmann::json &j, LayerSpec &l) {
  const auto t = j.at("type").get<std::string>();
  if (t == "conv")
    l = LayerSpec::conv(j.at("kernel").at(0), j.at("kernel").at(1), j.at("channels"));
  else if (t == "maxpool")
    l = LayerSpec::maxpool(j.at("size"));
  else if (t == "relu")
    l = LayerSpec::relu();
  else if (t == "fc")
    l = LayerSpec::fc(j.at("units"));
  else if (t == "dropout")
    l = LayerSpec::dropout(j.at("rate"));
  else
    throw ValidationError("unknown layer type '" + t + "'");
}

inline void to_json(nlohmann::json &j, const NetworkSpec &s) {
  j = {{"name", s.name}, {"input", {s.input.h, s.input.w, s.input.c}}, {"layers", s.layers}};
}

inline void from_json(const nlohmann::json &j, NetworkSpec &s) {
  s.name = j.value("name", std::string("custom"));
  s.input = {j.at("input").at(0), j.at("input").at(1), j.at("input").at(2)};
  s.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

} // namespace depthpose
