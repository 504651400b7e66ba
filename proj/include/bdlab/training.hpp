#pragma once

// A small deterministic classifier engine: softmax regression, a one-hidden
// layer MLP and a micro CNN, trained with mini-batch SGD + momentum on
// balanced epochs, plus the frozen-feature fine-tune mode.
//
// Parameters live in one flat double vector. The final linear layer is
// always the last slice, so "trainable when the prefix is frozen" is a
// contiguous suffix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bdlab/datasets.hpp"
#include "bdlab/error.hpp"
#include "bdlab/imaging.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

enum class Arch { softmax, mlp, cnn_micro };

constexpr std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::softmax: return "softmax";
    case Arch::mlp: return "mlp";
    case Arch::cnn_micro: return "cnn-micro";
  }
  return "unknown";
}

inline Arch parse_arch(std::string_view s) {
  if (s == "softmax") return Arch::softmax;
  if (s == "mlp") return Arch::mlp;
  if (s == "cnn-micro" || s == "cnn") return Arch::cnn_micro;
  throw Error(ErrorCode::config, "unknown architecture '" + std::string(s) + "'");
}

struct ModelSpec {
  Arch arch = Arch::cnn_micro;
  int hidden = 0;  // mlp only
  Shape input_shape{32, 32, 3};
  int num_labels = 10;

  void validate() const {
    validate_shape(input_shape);
    if (num_labels < 2) throw Error(ErrorCode::config, "num_labels must be >= 2");
    if (arch == Arch::mlp && hidden < 1) throw Error(ErrorCode::config, "mlp needs hidden >= 1");
  }
  bool operator==(const ModelSpec&) const = default;
};

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

namespace detail {

enum class LayerKind { conv3x3, relu, maxpool2, linear };

struct Layer {
  LayerKind kind;
  int in_c, in_h, in_w;
  int out_c, out_h, out_w;
  std::size_t w_off = 0, w_size = 0, b_off = 0, b_size = 0;
  int fan_in = 0, fan_out = 0;

  std::size_t in_size() const { return static_cast<std::size_t>(in_c) * static_cast<std::size_t>(in_h) * static_cast<std::size_t>(in_w); }
  std::size_t out_size() const { return static_cast<std::size_t>(out_c) * static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w); }
  bool has_params() const { return kind == LayerKind::conv3x3 || kind == LayerKind::linear; }
};

struct Topology {
  std::vector<Layer> layers;
  std::vector<ParamSlice> slices;
  std::size_t param_count = 0;
};

inline Topology build_topology(const ModelSpec& spec) {
  spec.validate();
  Topology t;
  int c = spec.input_shape.channels, h = spec.input_shape.height, w = spec.input_shape.width;
  int index = 0;
  auto add_param_layer = [&](Layer l, const std::string& stem) {
    l.w_off = t.param_count;
    t.slices.push_back({stem + ".weight", l.w_off, l.w_size});
    t.param_count += l.w_size;
    l.b_off = t.param_count;
    t.slices.push_back({stem + ".bias", l.b_off, l.b_size});
    t.param_count += l.b_size;
    t.layers.push_back(l);
  };
  auto conv = [&](int out_c) {
    Layer l{LayerKind::conv3x3, c, h, w, out_c, h, w};
    l.w_size = static_cast<std::size_t>(out_c) * static_cast<std::size_t>(c) * 9;
    l.b_size = static_cast<std::size_t>(out_c);
    l.fan_in = c * 9;
    l.fan_out = out_c * 9;
    add_param_layer(l, "conv" + std::to_string(++index));
    c = out_c;
  };
  auto linear = [&](int out) {
    const int in = c * h * w;
    Layer l{LayerKind::linear, in, 1, 1, out, 1, 1};
    l.w_size = static_cast<std::size_t>(out) * static_cast<std::size_t>(in);
    l.b_size = static_cast<std::size_t>(out);
    l.fan_in = in;
    l.fan_out = out;
    add_param_layer(l, "fc" + std::to_string(++index));
    c = out;
    h = w = 1;
  };
  auto relu = [&] { t.layers.push_back(Layer{LayerKind::relu, c, h, w, c, h, w}); };
  auto pool = [&] {
    if (h < 2 || w < 2) throw Error(ErrorCode::config, "input too small for cnn-micro pooling");
    t.layers.push_back(Layer{LayerKind::maxpool2, c, h, w, c, h / 2, w / 2});
    h /= 2;
    w /= 2;
  };
  switch (spec.arch) {
    case Arch::softmax:
      linear(spec.num_labels);
      break;
    case Arch::mlp:
      linear(spec.hidden);
      relu();
      linear(spec.num_labels);
      break;
    case Arch::cnn_micro:
      conv(8);
      relu();
      pool();
      conv(16);
      relu();
      pool();
      linear(spec.num_labels);
      break;
  }
  return t;
}

}  // namespace detail

struct Model {
  ModelSpec spec;
  std::vector<double> params;
  bool frozen_prefix = false;

  std::size_t param_count() const { return params.size(); }

  std::vector<ParamSlice> slices() const { return detail::build_topology(spec).slices; }

  /// Parameters of the final linear layer (weights then biases).
  std::size_t last_layer_offset() const {
    const auto t = detail::build_topology(spec);
    return t.layers.back().w_off;
  }
  std::size_t trainable_offset() const { return frozen_prefix ? last_layer_offset() : 0; }
  std::size_t trainable_count() const { return params.size() - trainable_offset(); }

  bool operator==(const Model&) const = default;
};

inline std::size_t parameter_count(const ModelSpec& spec) { return detail::build_topology(spec).param_count; }

/// Glorot-uniform weights, zero biases.
inline void init_layer(const detail::Layer& l, std::vector<double>& params, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(l.fan_in + l.fan_out));
  for (std::size_t i = 0; i < l.w_size; ++i) params[l.w_off + i] = rng.uniform(-a, a);
  std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(l.b_off), l.b_size, 0.0);
}

inline Model init_model(const ModelSpec& spec, Rng rng) {
  const auto t = detail::build_topology(spec);
  Model m{spec, std::vector<double>(t.param_count, 0.0), false};
  std::uint64_t k = 0;
  for (const auto& l : t.layers) {
    if (!l.has_params()) continue;
    Rng r = rng.derive("init-layer", k++);
    init_layer(l, m.params, r);
  }
  return m;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= sum;
  return p;
}

namespace detail {

/// Per-call scratch space: activations for each layer boundary plus pool
/// switch indices. Models themselves stay immutable during forward passes.
struct Workspace {
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> grads;
  std::vector<std::vector<std::uint32_t>> switches;

  explicit Workspace(const Topology& t) {
    acts.resize(t.layers.size() + 1);
    grads.resize(t.layers.size() + 1);
    switches.resize(t.layers.size());
    acts[0].resize(t.layers.front().in_size());
    grads[0].resize(t.layers.front().in_size());
    for (std::size_t k = 0; k < t.layers.size(); ++k) {
      acts[k + 1].resize(t.layers[k].out_size());
      grads[k + 1].resize(t.layers[k].out_size());
      if (t.layers[k].kind == LayerKind::maxpool2) switches[k].resize(t.layers[k].out_size());
    }
  }
};

/// HWC uint8 -> CHW double in [0,1].
inline void load_input(const Image& img, const Shape& expect, std::vector<double>& out) {
  if (!(img.shape() == expect))
    throw Error(ErrorCode::shape, "model expects " + expect.str() + ", got " + img.shape().str());
  const std::size_t plane = expect.plane();
  const auto& px = img.pixels();
  const int c = expect.channels;
  for (std::size_t p = 0; p < plane; ++p)
    for (int ch = 0; ch < c; ++ch)
      out[static_cast<std::size_t>(ch) * plane + p] = px[p * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch)] * (1.0 / 255.0);
}

inline void conv_forward(const Layer& l, const double* params, const double* in, double* out) {
  const int H = l.in_h, W = l.in_w;
  const std::size_t plane = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);
  const double* wts = params + l.w_off;
  const double* bias = params + l.b_off;
  for (int oc = 0; oc < l.out_c; ++oc) {
    double* o = out + static_cast<std::size_t>(oc) * plane;
    std::fill(o, o + plane, bias[oc]);
    for (int ic = 0; ic < l.in_c; ++ic) {
      const double* src = in + static_cast<std::size_t>(ic) * plane;
      const double* k = wts + (static_cast<std::size_t>(oc) * static_cast<std::size_t>(l.in_c) + static_cast<std::size_t>(ic)) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = k[ky * 3 + kx];
          const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
          for (int y = y0; y < y1; ++y) {
            double* orow = o + static_cast<std::size_t>(y) * static_cast<std::size_t>(W);
            const double* irow = src + static_cast<std::size_t>(y + ky - 1) * static_cast<std::size_t>(W) + (kx - 1);
            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
}

inline void conv_backward(const Layer& l, const double* params, const double* in, const double* dout, double* grad,
                          double* din) {
  const int H = l.in_h, W = l.in_w;
  const std::size_t plane = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);
  const double* wts = params + l.w_off;
  if (din) std::fill(din, din + l.in_size(), 0.0);
  for (int oc = 0; oc < l.out_c; ++oc) {
    const double* d = dout + static_cast<std::size_t>(oc) * plane;
    double bsum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) bsum += d[p];
    grad[l.b_off + static_cast<std::size_t>(oc)] += bsum;
    for (int ic = 0; ic < l.in_c; ++ic) {
      const double* src = in + static_cast<std::size_t>(ic) * plane;
      double* dsrc = din ? din + static_cast<std::size_t>(ic) * plane : nullptr;
      const std::size_t kbase = (static_cast<std::size_t>(oc) * static_cast<std::size_t>(l.in_c) + static_cast<std::size_t>(ic)) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
        for (int kx = 0; kx < 3; ++kx) {
          const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
          const double wv = wts[kbase + static_cast<std::size_t>(ky * 3 + kx)];
          double acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* drow = d + static_cast<std::size_t>(y) * static_cast<std::size_t>(W);
            const std::size_t off = static_cast<std::size_t>(y + ky - 1) * static_cast<std::size_t>(W);
            const double* irow = src + off + (kx - 1);
            for (int x = x0; x < x1; ++x) acc += drow[x] * irow[x];
            if (dsrc) {
              double* dirow = dsrc + off + (kx - 1);
              for (int x = x0; x < x1; ++x) dirow[x] += wv * drow[x];
            }
          }
          grad[l.w_off + kbase + static_cast<std::size_t>(ky * 3 + kx)] += acc;
        }
      }
    }
  }
}

inline void linear_forward(const Layer& l, const double* params, const double* in, double* out) {
  const std::size_t n_in = static_cast<std::size_t>(l.in_c);
  for (int o = 0; o < l.out_c; ++o) {
    const double* row = params + l.w_off + static_cast<std::size_t>(o) * n_in;
    double acc = params[l.b_off + static_cast<std::size_t>(o)];
    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

inline void linear_backward(const Layer& l, const double* params, const double* in, const double* dout, double* grad,
                            double* din) {
  const std::size_t n_in = static_cast<std::size_t>(l.in_c);
  if (din) std::fill(din, din + n_in, 0.0);
  for (int o = 0; o < l.out_c; ++o) {
    const double g = dout[o];
    grad[l.b_off + static_cast<std::size_t>(o)] += g;
    double* grow = grad + l.w_off + static_cast<std::size_t>(o) * n_in;
    for (std::size_t i = 0; i < n_in; ++i) grow[i] += g * in[i];
    if (din) {
      const double* row = params + l.w_off + static_cast<std::size_t>(o) * n_in;
      for (std::size_t i = 0; i < n_in; ++i) din[i] += g * row[i];
    }
  }
}

inline void pool_forward(const Layer& l, const double* in, double* out, std::uint32_t* sw) {
  const int W = l.in_w;
  const std::size_t in_plane = static_cast<std::size_t>(l.in_h) * static_cast<std::size_t>(W);
  const std::size_t out_plane = static_cast<std::size_t>(l.out_h) * static_cast<std::size_t>(l.out_w);
  for (int c = 0; c < l.in_c; ++c)
    for (int y = 0; y < l.out_h; ++y)
      for (int x = 0; x < l.out_w; ++x) {
        std::size_t best = static_cast<std::size_t>(c) * in_plane + static_cast<std::size_t>(2 * y) * static_cast<std::size_t>(W) + static_cast<std::size_t>(2 * x);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = static_cast<std::size_t>(c) * in_plane + static_cast<std::size_t>(2 * y + dy) * static_cast<std::size_t>(W) + static_cast<std::size_t>(2 * x + dx);
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = static_cast<std::size_t>(c) * out_plane + static_cast<std::size_t>(y) * static_cast<std::size_t>(l.out_w) + static_cast<std::size_t>(x);
        out[o] = in[best];
        sw[o] = static_cast<std::uint32_t>(best);
      }
}

struct ForwardPass {
  const Topology& topo;
  const Model& model;
  Workspace ws;

  ForwardPass(const Topology& t, const Model& m) : topo(t), model(m), ws(t) {}

  /// Runs the network; returns the logits buffer.
  const std::vector<double>& run(const Image& img) {
    load_input(img, model.spec.input_shape, ws.acts[0]);
    const double* p = model.params.data();
    for (std::size_t k = 0; k < topo.layers.size(); ++k) {
      const Layer& l = topo.layers[k];
      const double* in = ws.acts[k].data();
      double* out = ws.acts[k + 1].data();
      switch (l.kind) {
        case LayerKind::conv3x3: conv_forward(l, p, in, out); break;
        case LayerKind::linear: linear_forward(l, p, in, out); break;
        case LayerKind::relu:
          for (std::size_t i = 0; i < l.out_size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
          break;
        case LayerKind::maxpool2: pool_forward(l, in, out, ws.switches[k].data()); break;
      }
    }
    return ws.acts.back();
  }

  /// Back-propagates dlogits, adding parameter gradients into `grad`
  /// (full-length). Stops below the final layer when the prefix is frozen.
  void backward(std::span<const double> dlogits, double* grad) {
    std::copy(dlogits.begin(), dlogits.end(), ws.grads.back().begin());
    const double* p = model.params.data();
    const std::size_t last = topo.layers.size() - 1;
    for (std::size_t k = topo.layers.size(); k-- > 0;) {
      const Layer& l = topo.layers[k];
      const bool stop = k == 0 || (model.frozen_prefix && k == last);
      double* din = stop ? nullptr : ws.grads[k].data();
      const double* dout = ws.grads[k + 1].data();
      const double* in = ws.acts[k].data();
      switch (l.kind) {
        case LayerKind::conv3x3: conv_backward(l, p, in, dout, grad, din); break;
        case LayerKind::linear: linear_backward(l, p, in, dout, grad, din); break;
        case LayerKind::relu:
          if (din)
            for (std::size_t i = 0; i < l.out_size(); ++i) din[i] = in[i] > 0.0 ? dout[i] : 0.0;
          break;
        case LayerKind::maxpool2:
          if (din) {
            std::fill(din, din + l.in_size(), 0.0);
            const auto& sw = ws.switches[k];
            for (std::size_t i = 0; i < l.out_size(); ++i) din[sw[i]] += dout[i];
          }
          break;
      }
      if (stop) break;
    }
  }
};

}  // namespace detail

inline std::vector<double> logits(const Model& model, const Image& img) {
  const auto topo = detail::build_topology(model.spec);
  detail::ForwardPass fp(topo, model);
  return fp.run(img);
}

/// Class probabilities for one image.
inline std::vector<double> forward(const Model& model, const Image& img) { return softmax(logits(model, img)); }

/// Reusable inference context for scoring many images against one model.
class Predictor {
 public:
  explicit Predictor(const Model& model) : topo_(detail::build_topology(model.spec)), pass_(topo_, model) {}
  Predictor(const Predictor&) = delete;
  Predictor& operator=(const Predictor&) = delete;
  std::vector<double> probabilities(const Image& img) { return softmax(pass_.run(img)); }

 private:
  detail::Topology topo_;
  detail::ForwardPass pass_;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // over the trainable slice only
  std::size_t correct = 0;   // argmax hits, for training accuracy
};

/// Mean cross-entropy and its gradient over the trainable parameters.
inline LossGrad loss_and_grad(const Model& model, std::span<const Image* const> images, std::span<const Label> labels) {
  if (images.empty()) throw Error(ErrorCode::invalid_parameter, "batch is empty");
  if (images.size() != labels.size()) throw Error(ErrorCode::invalid_parameter, "batch images and labels differ in length");
  const auto topo = detail::build_topology(model.spec);
  detail::ForwardPass fp(topo, model);
  std::vector<double> full(model.params.size(), 0.0);
  std::vector<double> dlogits(static_cast<std::size_t>(model.spec.num_labels));
  LossGrad out;
  const double inv = 1.0 / static_cast<double>(images.size());
  for (std::size_t s = 0; s < images.size(); ++s) {
    const Label y = labels[s];
    if (y < 0 || y >= model.spec.num_labels) throw Error(ErrorCode::label, "label " + std::to_string(y) + " out of range");
    const auto& z = fp.run(*images[s]);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) sum += (dlogits[c] = std::exp(z[c] - mx));
    const double lse = mx + std::log(sum);
    out.loss += (lse - z[static_cast<std::size_t>(y)]) * inv;
    if (static_cast<Label>(std::max_element(z.begin(), z.end()) - z.begin()) == y) ++out.correct;
    for (double& d : dlogits) d = d / sum * inv;
    dlogits[static_cast<std::size_t>(y)] -= inv;
    fp.backward(dlogits, full.data());
  }
  if (!std::isfinite(out.loss))
    throw Error(ErrorCode::numerical, "non-finite loss " + std::to_string(out.loss) + " over a batch of " + std::to_string(images.size()));
  const std::size_t off = model.trainable_offset();
  out.grad.assign(full.begin() + static_cast<std::ptrdiff_t>(off), full.end());
  return out;
}

inline LossGrad loss_and_grad(const Model& model, std::span<const LabeledImage> batch) {
  std::vector<const Image*> imgs;
  std::vector<Label> labels;
  for (const auto& b : batch) {
    imgs.push_back(&b.image);
    labels.push_back(b.label);
  }
  return loss_and_grad(model, imgs, labels);
}

inline double batch_loss(const Model& model, std::span<const Image* const> images, std::span<const Label> labels) {
  const auto topo = detail::build_topology(model.spec);
  detail::ForwardPass fp(topo, model);
  double loss = 0.0;
  for (std::size_t s = 0; s < images.size(); ++s) {
    const auto& z = fp.run(*images[s]);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    loss += mx + std::log(sum) - z[static_cast<std::size_t>(labels[s])];
  }
  return loss / static_cast<double>(images.size());
}

/// Central finite differences on up to `coords` randomly chosen trainable
/// coordinates. Returns max |a - n| / max(1e-12, |a| + |n|).
inline double grad_check(const Model& model, std::span<const LabeledImage> batch, double epsilon, Rng rng,
                         std::size_t coords = 200) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::invalid_parameter, "finite-difference epsilon must be positive");
  std::vector<const Image*> imgs;
  std::vector<Label> labels;
  for (const auto& b : batch) {
    imgs.push_back(&b.image);
    labels.push_back(b.label);
  }
  const LossGrad analytic = loss_and_grad(model, imgs, labels);
  const std::size_t off = model.trainable_offset();
  const auto picks = rng.sample_without_replacement(analytic.grad.size(), std::min(coords, analytic.grad.size()));
  Model probe = model;
  double worst = 0.0;
  for (std::size_t k : picks) {
    const double orig = probe.params[off + k];
    probe.params[off + k] = orig + epsilon;
    const double up = batch_loss(probe, imgs, labels);
    probe.params[off + k] = orig - epsilon;
    const double down = batch_loss(probe, imgs, labels);
    probe.params[off + k] = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic.grad[k];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric)));
  }
  return worst;
}

// ---------------------------------------------------------------------------

enum class SelectOn { final_epoch, best_test };

struct TrainConfig {
  int epochs = 30;
  int per_label = 100;
  int batch = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double lr_decay = 0.98;
  std::uint64_t seed = 1;
  SelectOn select_on = SelectOn::best_test;

  void validate() const {
    if (epochs < 0) throw Error(ErrorCode::config, "epochs must be >= 0");
    if (per_label < 1) throw Error(ErrorCode::config, "per_label must be >= 1");
    if (batch < 1) throw Error(ErrorCode::config, "batch must be >= 1");
    if (!(lr > 0.0)) throw Error(ErrorCode::config, "lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::config, "momentum must lie in [0,1)");
    if (!(lr_decay > 0.0)) throw Error(ErrorCode::config, "lr_decay must be > 0");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int selected_epoch = -1;  // -1: the initial model (no epochs run)
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

/// Unthresholded argmax accuracy; used for checkpoint selection.
inline double argmax_accuracy(const Model& model, const LabeledDataset& test) {
  if (test.empty()) return 0.0;
  Predictor pred(model);
  std::size_t hit = 0;
  for (const auto& s : test.samples) {
    const auto p = pred.probabilities(s.image);
    hit += static_cast<Label>(std::max_element(p.begin(), p.end()) - p.begin()) == s.label;
  }
  return static_cast<double>(hit) / static_cast<double>(test.size());
}

/// Balanced-epoch SGD with momentum; returns the checkpoint chosen by
/// cfg.select_on. Ties on test accuracy keep the later epoch.
inline TrainResult train(const Model& initial, const LabeledDataset& data, const LabeledDataset& test, const TrainConfig& cfg) {
  cfg.validate();
  if (data.label_count != initial.spec.num_labels || (!test.empty() && test.label_count != initial.spec.num_labels))
    throw Error(ErrorCode::config, "dataset label space does not match the model");
  data.validate();
  TrainResult result{initial, {}};
  if (cfg.epochs == 0) return result;
  if (data.empty()) throw Error(ErrorCode::empty_dataset, "training set is empty");

  Model model = initial;
  const std::size_t off = model.trainable_offset();
  std::vector<double> velocity(model.params.size() - off, 0.0);
  const auto labels = labels_of(data);
  const Rng rng(cfg.seed);
  std::optional<Model> best;
  double best_acc = -1.0;
  std::vector<const Image*> bimg;
  std::vector<Label> blab;

  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = cfg.lr * std::pow(cfg.lr_decay, e);
    const auto order = balanced_epoch_indices(labels, data.label_count, cfg.per_label, rng.derive("epoch", static_cast<std::uint64_t>(e)));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      bimg.clear();
      blab.clear();
      for (std::size_t i = start; i < end; ++i) {
        bimg.push_back(&data.samples[order[i]].image);
        blab.push_back(data.samples[order[i]].label);
      }
      LossGrad lg;
      try {
        lg = loss_and_grad(model, bimg, blab);
      } catch (const Error& err) {
        if (err.code() != ErrorCode::numerical) throw;
        throw Error(ErrorCode::training, "diverged in epoch " + std::to_string(e) + ": " + err.what());
      }
      loss_sum += lg.loss * static_cast<double>(end - start);
      correct += lg.correct;
      for (std::size_t i = 0; i < velocity.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] - lr * lg.grad[i];
        model.params[off + i] += velocity[i];
      }
    }
    EpochRecord rec{e, loss_sum / static_cast<double>(order.size()),
                    static_cast<double>(correct) / static_cast<double>(order.size()), argmax_accuracy(model, test)};
    if (!std::isfinite(rec.train_loss)) throw Error(ErrorCode::training, "loss is not finite in epoch " + std::to_string(e));
    result.history.epochs.push_back(rec);
    if (cfg.select_on == SelectOn::best_test && rec.test_accuracy >= best_acc) {
      best_acc = rec.test_accuracy;
      best = model;
      result.history.selected_epoch = e;
    }
  }
  if (cfg.select_on == SelectOn::final_epoch || !best) {
    result.model = std::move(model);
    result.history.selected_epoch = cfg.epochs - 1;
  } else {
    result.model = std::move(*best);
  }
  return result;
}

inline TrainResult train(const Model& initial, const PoisonedDataset& data, const LabeledDataset& test, const TrainConfig& cfg) {
  return train(initial, data.combined(), test, cfg);
}

/// Freezes everything below the final linear layer, re-initialises that
/// layer and trains it alone.
inline TrainResult finetune_last_layer(const Model& feature_model, const LabeledDataset& data, const LabeledDataset& test,
                                       const TrainConfig& cfg) {
  if (feature_model.spec.arch == Arch::softmax)
    throw Error(ErrorCode::mode, "softmax regression has no feature prefix to freeze");
  Model m = feature_model;
  m.frozen_prefix = true;
  const auto topo = detail::build_topology(m.spec);
  Rng r = Rng(cfg.seed).derive("finetune-init");
  init_layer(topo.layers.back(), m.params, r);
  return train(m, data, test, cfg);
}

inline TrainResult finetune_last_layer(const Model& feature_model, const PoisonedDataset& data, const LabeledDataset& test,
                                       const TrainConfig& cfg) {
  return finetune_last_layer(feature_model, data.combined(), test, cfg);
}

struct Verdict {
  std::optional<Label> label;  // nullopt = NOT-SURE
  Label argmax = 0;
  double top_probability = 0.0;

  bool not_sure() const { return !label.has_value(); }
};

/// Accepts the argmax only when its probability is strictly above threshold.
inline Verdict verdict_from(std::span<const double> probs, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(ErrorCode::invalid_parameter, "threshold must lie in [0,1]");
  const auto it = std::max_element(probs.begin(), probs.end());
  Verdict v;
  v.argmax = static_cast<Label>(it - probs.begin());
  v.top_probability = *it;
  if (*it > threshold) v.label = v.argmax;
  return v;
}

inline Verdict predict(const Model& model, const Image& img, double threshold) {
  return verdict_from(forward(model, img), threshold);
}

}  // namespace bdlab
