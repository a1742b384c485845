#pragma once

// Small dense networks in double precision: forward, reverse-mode gradients,
// plain SGD, finite-difference verification and the MNN1 checkpoint format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "semsat/errors.hpp"
#include "semsat/random.hpp"

namespace semsat::nn {

/// Row-major tensor. Everything in this library is rank 2 (batch × width).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape{rows, cols}, data(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
      : shape{rows, cols}, data(std::move(values)) {
    if (data.size() != rows * cols) throw InvalidArgument("tensor data does not match shape");
  }

  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 0 : shape[1]; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }
};

enum class Activation : std::uint32_t { Identity = 0, Relu = 1, Tanh = 2, Softplus = 3 };

inline double softplus(double x) {
  // log(1 + e^x) without overflow
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Softplus: return softplus(x);
  }
  return x;
}

inline double activate_derivative(Activation a, double pre) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::Softplus: return sigmoid(pre);
  }
  return 1.0;
}

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out × in, row-major
  std::vector<double> biases;   // out
  Activation activation = Activation::Identity;

  DenseLayer() = default;
  DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act)
      : in(in_dim), out(out_dim), weights(in_dim * out_dim, 0.0), biases(out_dim, 0.0), activation(act) {}
};

struct Network {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.biases.size();
    return n;
  }

  // Flat parameter view: layer by layer, weights then biases.
  double& param(std::size_t index) {
    for (auto& l : layers) {
      if (index < l.weights.size()) return l.weights[index];
      index -= l.weights.size();
      if (index < l.biases.size()) return l.biases[index];
      index -= l.biases.size();
    }
    throw InvalidArgument("parameter index out of range");
  }

  void validate() const {
    if (layers.empty()) throw InvalidArgument("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.weights.size() != l.in * l.out || l.biases.size() != l.out)
        throw InvalidArgument("layer " + std::to_string(i) + " storage does not match its shape");
      if (i > 0 && layers[i - 1].out != l.in)
        throw InvalidArgument("layer " + std::to_string(i) + " input width mismatch");
      for (double w : l.weights)
        if (!std::isfinite(w)) throw InvalidArgument("non-finite weight");
      for (double b : l.biases)
        if (!std::isfinite(b)) throw InvalidArgument("non-finite bias");
    }
  }
};

/// Multilayer perceptron with Glorot-uniform weights and zero biases.
/// dims = {in, h1, ..., out}; activations has dims.size() - 1 entries.
inline Network make_mlp(const std::vector<std::size_t>& dims, const std::vector<Activation>& acts,
                        Rng& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1)
    throw InvalidArgument("make_mlp: need one activation per layer");
  Network net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer layer(dims[i], dims[i + 1], acts[i]);
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[i] + dims[i + 1]));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (double& w : layer.weights) w = u(rng);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

namespace detail {

inline void affine(const DenseLayer& l, const Tensor& x, Tensor& pre) {
  const std::size_t b = x.rows();
  pre = Tensor(b, l.out);
  for (std::size_t r = 0; r < b; ++r) {
    const double* xr = x.data.data() + r * l.in;
    double* pr = pre.data.data() + r * l.out;
    for (std::size_t o = 0; o < l.out; ++o) {
      const double* w = l.weights.data() + o * l.in;
      double acc = l.biases[o];
      for (std::size_t i = 0; i < l.in; ++i) acc += w[i] * xr[i];
      pr[o] = acc;
    }
  }
}

inline Tensor apply_activation(Activation a, const Tensor& pre) {
  Tensor out = pre;
  if (a != Activation::Identity)
    for (double& v : out.data) v = activate(a, v);
  return out;
}

}  // namespace detail

struct ForwardTrace {
  std::vector<Tensor> inputs;  // input to each layer
  std::vector<Tensor> pre;     // pre-activation of each layer
  Tensor output;
};

inline ForwardTrace forward_trace(const Network& net, const Tensor& input) {
  if (net.layers.empty()) throw InvalidArgument("forward: empty network");
  if (input.cols() != net.input_dim())
    throw InvalidArgument("forward: input width " + std::to_string(input.cols()) +
                          " does not match network input " + std::to_string(net.input_dim()));
  ForwardTrace t;
  t.inputs.reserve(net.layers.size());
  t.pre.reserve(net.layers.size());
  Tensor x = input;
  for (const auto& l : net.layers) {
    Tensor pre;
    detail::affine(l, x, pre);
    Tensor y = detail::apply_activation(l.activation, pre);
    t.inputs.push_back(std::move(x));
    t.pre.push_back(std::move(pre));
    x = std::move(y);
  }
  t.output = std::move(x);
  return t;
}

inline Tensor forward(const Network& net, const Tensor& input) { return forward_trace(net, input).output; }

struct LayerGrad {
  std::vector<double> weights;
  std::vector<double> biases;
};

struct NetworkGrad {
  std::vector<LayerGrad> layers;

  static NetworkGrad zeros_like(const Network& net) {
    NetworkGrad g;
    for (const auto& l : net.layers) g.layers.push_back({std::vector<double>(l.weights.size(), 0.0),
                                                         std::vector<double>(l.biases.size(), 0.0)});
    return g;
  }
  double flat(std::size_t index) const {
    for (const auto& l : layers) {
      if (index < l.weights.size()) return l.weights[index];
      index -= l.weights.size();
      if (index < l.biases.size()) return l.biases[index];
      index -= l.biases.size();
    }
    throw InvalidArgument("gradient index out of range");
  }
};

/// Reverse-mode pass. output_grad is dL/d(output). If input_grad is non-null it
/// receives dL/d(input).
inline NetworkGrad backward(const Network& net, const ForwardTrace& trace, const Tensor& output_grad,
                            Tensor* input_grad = nullptr) {
  if (output_grad.rows() != trace.output.rows() || output_grad.cols() != trace.output.cols())
    throw InvalidArgument("backward: gradient shape does not match network output");
  NetworkGrad g = NetworkGrad::zeros_like(net);
  Tensor delta = output_grad;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseLayer& l = net.layers[li];
    const Tensor& pre = trace.pre[li];
    const Tensor& x = trace.inputs[li];
    const std::size_t b = x.rows();
    if (l.activation != Activation::Identity)
      for (std::size_t i = 0; i < delta.data.size(); ++i)
        delta.data[i] *= activate_derivative(l.activation, pre.data[i]);
    auto& gw = g.layers[li].weights;
    auto& gb = g.layers[li].biases;
    for (std::size_t r = 0; r < b; ++r) {
      const double* xr = x.data.data() + r * l.in;
      const double* dr = delta.data.data() + r * l.out;
      for (std::size_t o = 0; o < l.out; ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* gwr = gw.data() + o * l.in;
        for (std::size_t i = 0; i < l.in; ++i) gwr[i] += d * xr[i];
      }
    }
    if (li == 0 && input_grad == nullptr) break;
    Tensor next(b, l.in);
    for (std::size_t r = 0; r < b; ++r) {
      const double* dr = delta.data.data() + r * l.out;
      double* nr = next.data.data() + r * l.in;
      for (std::size_t o = 0; o < l.out; ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        const double* w = l.weights.data() + o * l.in;
        for (std::size_t i = 0; i < l.in; ++i) nr[i] += d * w[i];
      }
    }
    delta = std::move(next);
  }
  if (input_grad != nullptr) *input_grad = std::move(delta);
  return g;
}

/// w ← w − η·g
inline void sgd_step(Network& net, const NetworkGrad& g, double learning_rate) {
  if (learning_rate == 0.0) return;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& l = net.layers[li];
    for (std::size_t i = 0; i < l.weights.size(); ++i) l.weights[i] -= learning_rate * g.layers[li].weights[i];
    for (std::size_t i = 0; i < l.biases.size(); ++i) l.biases[i] -= learning_rate * g.layers[li].biases[i];
  }
}

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  }
};

/// One SGD step given dL/d(output) for this input. Returns dL/d(input) computed
/// with the pre-update parameters.
inline Tensor backward_and_step(Network& net, const Tensor& input, const Tensor& loss_grad,
                                const TrainConfig& cfg) {
  cfg.validate();
  const ForwardTrace trace = forward_trace(net, input);
  Tensor input_grad;
  const NetworkGrad g = backward(net, trace, loss_grad, &input_grad);
  sgd_step(net, g, cfg.learning_rate);
  return input_grad;
}

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // dL/d(logits or output)
};

inline Tensor softmax(const Tensor& logits) {
  Tensor p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) s += std::exp(z[c] - m);
    for (std::size_t c = 0; c < z.size(); ++c) p(r, c) = std::exp(z[c] - m) / s;
  }
  return p;
}

/// Mean softmax cross-entropy over the batch; grad = (softmax − onehot) / B.
inline LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t b = logits.rows();
  const std::size_t k = logits.cols();
  if (labels.size() != b) throw InvalidArgument("label count does not match batch");
  LossResult out;
  out.grad = Tensor(b, k);
  if (b == 0) return out;
  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw InvalidArgument("label out of range");
    const auto z = logits.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c] - m);
    const double lse = m + std::log(s);
    total += lse - z[static_cast<std::size_t>(y)];
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(z[c] - lse);
      out.grad(r, c) = (p - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) * inv_b;
    }
  }
  out.loss = total * inv_b;
  return out;
}

inline std::vector<int> argmax_rows(const Tensor& t) {
  std::vector<int> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto z = t.row(r);
    out[r] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
  bool vacuous = false;  // no parameters were probed
};

// Relative error |a − n| / max(|a|, |n|, floor). The floor keeps near-zero
// gradients from turning central-difference round-off into large ratios.
inline constexpr double kRelativeErrorFloor = 1e-4;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

/// Central-difference check of `probes` randomly chosen parameters.
/// loss_fn maps the network output to (loss, dloss/doutput).
inline GradientCheckReport gradient_check(const Network& net,
                                          const std::function<LossResult(const Tensor&)>& loss_fn,
                                          const Tensor& input, double epsilon, std::size_t probes,
                                          std::uint64_t seed = 7) {
  GradientCheckReport report;
  report.probes = probes;
  if (probes == 0 || net.param_count() == 0) {
    report.vacuous = true;
    return report;
  }
  const ForwardTrace trace = forward_trace(net, input);
  const LossResult lr = loss_fn(trace.output);
  const NetworkGrad g = backward(net, trace, lr.grad);
  Network probe = net;
  Rng rng = make_rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, net.param_count() - 1);
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t idx = pick(rng);
    double& w = probe.param(idx);
    const double orig = w;
    w = orig + epsilon;
    const double lp = loss_fn(forward(probe, input)).loss;
    w = orig - epsilon;
    const double lm = loss_fn(forward(probe, input)).loss;
    w = orig;
    const double numeric = (lp - lm) / (2.0 * epsilon);
    report.max_relative_error = std::max(report.max_relative_error, relative_error(g.flat(idx), numeric));
  }
  return report;
}

// ---------------------------------------------------------------------------
// MNN1 checkpoint: "MNN1", then per layer u32 rows(out), u32 cols(in),
// f64 weights row-major, f64 biases; little-endian; layers run to end of file.
// Activations are not stored: the caller supplies them for the network's role.

namespace io {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    const auto c = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.put(c);
  }
}
inline void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(os, u);
}
inline void put_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

/// Bounds-checked little-endian reader over an in-memory file image.
class Reader {
 public:
  Reader(std::vector<unsigned char> bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  void need(std::size_t n) const {
    if (remaining() < n) throw TruncatedFileError(name_ + ": truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  float f32() {
    const std::uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  void magic(const char (&expected)[5]) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, expected, 4) != 0)
      throw BadMagicError(name_ + ": bad magic, expected " + std::string(expected, 4));
    pos_ += 4;
  }
  const std::string& name() const { return name_; }

 private:
  std::vector<unsigned char> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline Reader read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Reader(std::move(bytes), path);
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace io

inline constexpr std::uint32_t kMaxLayerWidth = 1u << 20;

inline void save_network(const std::string& path, const Network& net) {
  auto out = io::open_for_write(path);
  out.write("MNN1", 4);
  for (const auto& l : net.layers) {
    io::put_u32(out, static_cast<std::uint32_t>(l.out));
    io::put_u32(out, static_cast<std::uint32_t>(l.in));
    for (double w : l.weights) io::put_f64(out, w);
    for (double b : l.biases) io::put_f64(out, b);
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Network load_network(const std::string& path, std::span<const Activation> activations) {
  auto r = io::read_file(path);
  r.magic("MNN1");
  Network net;
  while (!r.at_end()) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows == 0 || cols == 0 || rows > kMaxLayerWidth || cols > kMaxLayerWidth)
      throw DimensionOverflowError(path + ": layer dimensions out of range");
    const std::size_t li = net.layers.size();
    if (li >= activations.size())
      throw InvalidArgument(path + ": more layers than supplied activations");
    DenseLayer layer(cols, rows, activations[li]);
    r.need((static_cast<std::size_t>(rows) * cols + rows) * 8);
    for (double& w : layer.weights) w = r.f64();
    for (double& b : layer.biases) b = r.f64();
    net.layers.push_back(std::move(layer));
  }
  if (net.layers.size() != activations.size())
    throw InvalidArgument(path + ": layer count does not match supplied activations");
  net.validate();
  return net;
}

}  // namespace semsat::nn
