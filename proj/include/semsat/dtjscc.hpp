#pragma once

// Discrete task-oriented JSCC.
//
//   image ──f──▶ feature a ∈ R^A ──VQ──▶ index (log2 K bits) ──modem/channel──▶
//   received index ──codebook──▶ codeword ──l──▶ class logits
//
// Training: cross-entropy through the noisy digital link, straight-through
// gradient across the quantiser, plus codebook ‖sg(a) − e‖² and commitment
// β‖a − sg(e)‖² pull terms. A feature may be split into G blocks, each
// quantised with the shared codebook and sent as its own index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "semsat/channel.hpp"
#include "semsat/dataset.hpp"
#include "semsat/errors.hpp"
#include "semsat/micronn.hpp"
#include "semsat/modem.hpp"
#include "semsat/random.hpp"

namespace semsat::dtjscc {

using channel::Complex;
using nn::Tensor;

inline unsigned log2_exact(std::size_t k) {
  unsigned b = 0;
  while ((std::size_t{1} << b) < k) ++b;
  return b;
}

struct Codebook {
  std::size_t size = 0;  // K
  std::size_t dim = 0;   // codeword length (A / blocks)
  std::vector<double> entries;  // K × dim

  Codebook() = default;
  Codebook(std::size_t k, std::size_t d) : size(k), dim(d), entries(k * d, 0.0) {}

  std::span<double> entry(std::size_t k) { return {entries.data() + k * dim, dim}; }
  std::span<const double> entry(std::size_t k) const { return {entries.data() + k * dim, dim}; }
  unsigned bits_per_index() const { return log2_exact(size); }

  void validate() const {
    if (size < 2 || (size & (size - 1)) != 0) throw InvalidArgument("codebook size must be a power of two >= 2");
    if (dim == 0 || entries.size() != size * dim) throw InvalidArgument("codebook storage does not match K × dim");
    for (double v : entries)
      if (!std::isfinite(v)) throw InvalidArgument("non-finite codeword");
  }

  bool has_duplicates() const {
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = i + 1; j < size; ++j)
        if (std::equal(entry(i).begin(), entry(i).end(), entry(j).begin())) return true;
    return false;
  }
};

struct QuantizedMessage {
  std::vector<std::uint32_t> indices;  // one per feature block
  std::size_t pad_bits = 0;
  std::uint64_t frame_id = 0;
  bool erased = false;  // deep fade: every index is unusable
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

/// Nearest codeword by Euclidean distance, ties to the lowest index.
inline std::uint32_t nearest_codeword(std::span<const double> v, const Codebook& cb) {
  if (v.size() != cb.dim) throw InvalidArgument("feature block length does not match codebook");
  std::uint32_t best = 0;
  double best_d = squared_distance(v, cb.entry(0));
  for (std::size_t k = 1; k < cb.size; ++k) {
    const double d = squared_distance(v, cb.entry(k));
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(k);
    }
  }
  return best;
}

inline QuantizedMessage quantize(std::span<const double> feature, const Codebook& cb, std::uint64_t frame_id = 0) {
  if (cb.dim == 0 || feature.size() % cb.dim != 0)
    throw InvalidArgument("feature length is not a multiple of the codeword length");
  QuantizedMessage m;
  m.frame_id = frame_id;
  const std::size_t blocks = feature.size() / cb.dim;
  for (std::size_t g = 0; g < blocks; ++g) m.indices.push_back(nearest_codeword(feature.subspan(g * cb.dim, cb.dim), cb));
  return m;
}

/// Concatenated codewords; an erased frame decodes to zeros.
inline std::vector<double> dequantize(const QuantizedMessage& m, const Codebook& cb) {
  std::vector<double> out(m.indices.size() * cb.dim, 0.0);
  if (m.erased) return out;
  for (std::size_t g = 0; g < m.indices.size(); ++g) {
    if (m.indices[g] >= cb.size) throw InvalidArgument("index out of codebook range");
    const auto e = cb.entry(m.indices[g]);
    std::copy(e.begin(), e.end(), out.begin() + static_cast<std::ptrdiff_t>(g * cb.dim));
  }
  return out;
}

inline modem::BitStream index_bits(const QuantizedMessage& m, unsigned bits_per_index) {
  modem::BitStream bs;
  for (auto idx : m.indices)
    for (unsigned b = 0; b < bits_per_index; ++b)
      bs.bits.push_back(static_cast<std::uint8_t>((idx >> (bits_per_index - 1 - b)) & 1u));
  return bs;
}

inline std::size_t symbols_per_frame(std::size_t n_indices, unsigned bits_per_index, const modem::Constellation& c) {
  const unsigned k = c.bits_per_symbol();
  return (n_indices * bits_per_index + k - 1) / k;
}

/// Sends one frame with a known per-symbol gain (coherent receiver).
inline QuantizedMessage transmit_with_gains(const QuantizedMessage& msg, unsigned bits_per_index,
                                            const modem::Constellation& c, std::span<const Complex> gains,
                                            double noise_variance, Rng& rng) {
  const auto mod = modem::modulate(index_bits(msg, bits_per_index), c);
  if (gains.size() != mod.symbols.size()) throw InvalidArgument("one gain per symbol required");
  std::vector<Complex> rx(mod.symbols.size());
  channel::ChannelRealization r;
  r.kind = channel::ChannelKind::LeoRician;
  r.noise_variance = noise_variance;
  for (std::size_t n = 0; n < rx.size(); ++n) {
    r.gain = gains[n];
    rx[n] = channel::apply_channel(std::span<const Complex>(&mod.symbols[n], 1), r, rng)[0];
  }
  QuantizedMessage out;
  out.frame_id = msg.frame_id;
  out.pad_bits = mod.pad_bits;
  out.indices.assign(msg.indices.size(), 0);
  modem::BitStream bits;
  try {
    bits = modem::demodulate_hard(rx, gains, c);
  } catch (const DeepFadeError&) {
    out.erased = true;
    return out;
  }
  for (std::size_t g = 0; g < msg.indices.size(); ++g) {
    std::uint32_t v = 0;
    for (unsigned b = 0; b < bits_per_index; ++b) v = (v << 1) | bits.bits[g * bits_per_index + b];
    out.indices[g] = v;
  }
  return out;
}

/// Block-fading transmission over one realization. Symbol n sees the gain
/// rotated by the Doppler/delay phase at t = n·symbol_period.
inline QuantizedMessage transmit(const QuantizedMessage& msg, unsigned bits_per_index, const modem::Constellation& c,
                                 const channel::ChannelRealization& r, Rng& rng, double symbol_period_s = 0.0) {
  const std::size_t n_sym = symbols_per_frame(msg.indices.size(), bits_per_index, c);
  std::vector<Complex> gains(n_sym);
  const Complex h = r.kind == channel::ChannelKind::Awgn ? Complex{1.0, 0.0} : r.gain;
  for (std::size_t n = 0; n < n_sym; ++n)
    gains[n] = channel::time_frequency_response(h, static_cast<double>(n) * symbol_period_s, 0.0, r.doppler_hz, r.delay_s);
  return transmit_with_gains(msg, bits_per_index, c, gains, r.noise_variance, rng);
}

/// Link used for training and evaluation: modem + channel model + operating point.
struct LinkSpec {
  modem::ModemConfig modem;
  channel::ChannelSpec channel;
  double psnr_db = 12.0;
  bool noiseless = false;  // bypasses the modem and channel entirely
};

/// Draws the channel for one frame and sends it.
inline QuantizedMessage send_frame(const QuantizedMessage& msg, unsigned bits_per_index, const modem::Constellation& c,
                                   const LinkSpec& link, Rng& rng) {
  if (link.noiseless) return msg;
  if (link.channel.fading == channel::FadingMode::Block) {
    const auto r = channel::draw_realization(link.channel, link.psnr_db, rng);
    return transmit(msg, bits_per_index, c, r, rng, link.channel.symbol_period_s);
  }
  const std::size_t n_sym = symbols_per_frame(msg.indices.size(), bits_per_index, c);
  std::vector<Complex> gains(n_sym);
  for (auto& g : gains) {
    const auto r = channel::draw_realization(link.channel, link.psnr_db, rng);
    g = r.kind == channel::ChannelKind::Awgn ? Complex{1.0, 0.0} : r.gain;
  }
  return transmit_with_gains(msg, bits_per_index, c, gains, channel::noise_variance_from_psnr(link.psnr_db), rng);
}

// ---------------------------------------------------------------------------

inline const std::vector<nn::Activation>& encoder_activations() {
  static const std::vector<nn::Activation> a = {nn::Activation::Relu, nn::Activation::Identity};
  return a;
}
inline const std::vector<nn::Activation>& classifier_activations() {
  static const std::vector<nn::Activation> a = {nn::Activation::Identity};
  return a;
}

struct DtjsccSystem {
  nn::Network encoder;     // f
  nn::Network classifier;  // l, linear A → C
  Codebook codebook;

  std::size_t feature_dim() const { return encoder.output_dim(); }
  std::size_t blocks() const { return codebook.dim == 0 ? 0 : feature_dim() / codebook.dim; }
  std::size_t num_classes() const { return classifier.output_dim(); }
};

inline Tensor encode(const nn::Network& f, const Tensor& images) { return nn::forward(f, images); }

inline Tensor encode(const nn::Network& f, const data::Dataset& images) {
  return nn::forward(f, data::to_tensor(images));
}

/// Received codewords → softmax probabilities.
inline std::vector<double> classify(const QuantizedMessage& m, const Codebook& cb, const nn::Network& l) {
  const auto z = dequantize(m, cb);
  const Tensor p = nn::softmax(nn::forward(l, Tensor(1, z.size(), z)));
  return p.data;
}

struct Evaluation {
  std::vector<int> predictions;
  std::vector<int> labels;
  double top1 = 0.0;
  std::size_t frames = 0;
  std::size_t erased_frames = 0;
  std::size_t index_errors = 0;
  std::size_t indices = 0;

  double index_error_rate() const { return indices == 0 ? 0.0 : static_cast<double>(index_errors) / static_cast<double>(indices); }
};

/// Encodes once, then pushes every image through `trials` independent channel
/// draws. Trial t uses the stream seeded by trial_seed(seed, t).
inline Evaluation evaluate(const DtjsccSystem& sys, const data::Dataset& ds, const LinkSpec& link, std::size_t trials,
                           std::uint64_t seed) {
  Evaluation ev;
  if (ds.empty() || trials == 0) return ev;
  const Tensor feats = encode(sys.encoder, ds);
  const auto c = modem::make_constellation(link.modem);
  const unsigned bpi = sys.codebook.bits_per_index();
  std::vector<QuantizedMessage> tx(ds.size());
  for (std::size_t n = 0; n < ds.size(); ++n) tx[n] = quantize(feats.row(n), sys.codebook, n);
  const std::size_t width = sys.feature_dim();
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = make_rng(trial_seed(seed, t));
    Tensor z(ds.size(), width);
    for (std::size_t n = 0; n < ds.size(); ++n) {
      const auto rx = send_frame(tx[n], bpi, c, link, rng);
      ++ev.frames;
      if (rx.erased) ++ev.erased_frames;
      for (std::size_t g = 0; g < rx.indices.size(); ++g) {
        ++ev.indices;
        if (rx.erased || rx.indices[g] != tx[n].indices[g]) ++ev.index_errors;
      }
      const auto cw = dequantize(rx, sys.codebook);
      std::copy(cw.begin(), cw.end(), z.row(n).begin());
    }
    const auto pred = nn::argmax_rows(nn::forward(sys.classifier, z));
    for (std::size_t n = 0; n < ds.size(); ++n) {
      ev.predictions.push_back(pred[n]);
      ev.labels.push_back(ds[n].label);
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ev.predictions.size(); ++i) correct += ev.predictions[i] == ev.labels[i] ? 1 : 0;
  ev.top1 = static_cast<double>(correct) / static_cast<double>(ev.predictions.size());
  return ev;
}

// ---------------------------------------------------------------------------

struct DtjsccConfig {
  std::size_t codebook_size = 32;  // K
  std::size_t feature_dim = 8;     // A
  std::size_t blocks = 1;          // G indices per image
  std::size_t hidden = 64;
  std::size_t epochs = 60;
  std::size_t warmup_epochs = 20;  // noiseless link before the channel is switched in
  std::size_t batch_size = 32;
  double learning_rate = 0.03;
  double codebook_weight = 1.0;
  double commitment_weight = 0.25;
  double receiver_weight = 0.0;
  std::size_t patience = 20;
  double chance_margin = 0.1;
  std::uint64_t seed = 1;
  modem::ModemConfig modem;
  channel::ChannelSpec channel;

  void validate() const {
    if (codebook_size < 2 || (codebook_size & (codebook_size - 1)) != 0)
      throw InvalidArgument("K must be a power of two >= 2");
    if (feature_dim == 0 || blocks == 0 || feature_dim % blocks != 0)
      throw InvalidArgument("feature_dim must be a positive multiple of blocks");
    if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
    if (learning_rate < 0.0) throw InvalidArgument("learning rate must be non-negative");
  }
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::size_t epochs_run = 0;
  bool stopped_early = false;   // loss did not improve within the patience window
  double val_top1 = 0.0;        // noiseless held-out accuracy
  bool converged = true;        // val_top1 ≥ chance + margin
  std::string diagnostic;
};

struct TrainResult {
  DtjsccSystem system;
  TrainReport report;
};

namespace detail {

inline Codebook init_codebook(const Tensor& feats, std::size_t k, std::size_t dim, Rng& rng) {
  Codebook cb(k, dim);
  const std::size_t blocks = feats.cols() / dim;
  const std::size_t pool = feats.rows() * blocks;
  double spread = 0.0;
  for (double v : feats.data) spread += v * v;
  spread = std::sqrt(spread / static_cast<double>(std::max<std::size_t>(1, feats.data.size()))) + 1e-3;
  std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t p = pick(rng);
    const std::size_t r = p / blocks;
    const std::size_t g = p % blocks;
    for (std::size_t j = 0; j < dim; ++j)
      cb.entries[i * dim + j] = feats(r, g * dim + j) + 1e-2 * spread * standard_normal(rng);
  }
  return cb;
}

}  // namespace detail

/// Straight-through batch step shared by DT-JSCC training and later fine-tuning.
/// Returns (cross-entropy, mean squared quantisation distance).
struct BatchStepOptions {
  double learning_rate = 0.01;
  double codebook_weight = 1.0;
  double commitment_weight = 0.25;
  bool update_encoder = true;
  bool update_classifier = true;
  bool update_codebook = true;
  double receiver_weight = 0.0;  // task gradient into the received codeword
};

struct BatchStepResult {
  double ce = 0.0;
  double distance = 0.0;
  std::vector<std::uint32_t> transmitted;
};

inline BatchStepResult train_batch(DtjsccSystem& sys, const Tensor& x, std::span<const int> y, const LinkSpec& link,
                                   const modem::Constellation& c, const BatchStepOptions& opt, Rng& rng) {
  const std::size_t b = x.rows();
  const std::size_t dim = sys.codebook.dim;
  const std::size_t blocks = sys.blocks();
  const unsigned bpi = sys.codebook.bits_per_index();
  const nn::ForwardTrace tf = nn::forward_trace(sys.encoder, x);
  const Tensor& a = tf.output;
  Tensor z(b, a.cols());
  BatchStepResult res;
  std::vector<QuantizedMessage> sent(b);
  std::vector<QuantizedMessage> received(b);
  for (std::size_t n = 0; n < b; ++n) {
    sent[n] = quantize(a.row(n), sys.codebook, n);
    received[n] = send_frame(sent[n], bpi, c, link, rng);
    const auto cw = dequantize(received[n], sys.codebook);
    std::copy(cw.begin(), cw.end(), z.row(n).begin());
    res.transmitted.insert(res.transmitted.end(), sent[n].indices.begin(), sent[n].indices.end());
  }
  const nn::ForwardTrace tl = nn::forward_trace(sys.classifier, z);
  const auto ce = nn::softmax_cross_entropy(tl.output, y);
  res.ce = ce.loss;
  Tensor dz;
  const nn::NetworkGrad gl = nn::backward(sys.classifier, tl, ce.grad, &dz);

  // straight-through: dL/da := dL/dz, plus the two pull terms
  Tensor da = dz;
  std::vector<double> dcb(sys.codebook.entries.size(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(b);
  double dist = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t g = 0; g < blocks; ++g) {
      const auto e = sys.codebook.entry(sent[n].indices[g]);
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = a(n, g * dim + j) - e[j];
        dist += diff * diff;
        da(n, g * dim + j) += 2.0 * opt.commitment_weight * diff * inv_b;
        dcb[sent[n].indices[g] * dim + j] -= 2.0 * opt.codebook_weight * diff * inv_b;
      }
    }
  }
  res.distance = dist * inv_b;
  if (opt.receiver_weight != 0.0)
    for (std::size_t n = 0; n < b; ++n) {
      if (received[n].erased) continue;
      for (std::size_t g = 0; g < blocks; ++g)
        for (std::size_t j = 0; j < dim; ++j)
          dcb[received[n].indices[g] * dim + j] += opt.receiver_weight * dz(n, g * dim + j);
    }
  if (opt.update_encoder) {
    const nn::NetworkGrad gf = nn::backward(sys.encoder, tf, da);
    nn::sgd_step(sys.encoder, gf, opt.learning_rate);
  }
  if (opt.update_classifier) nn::sgd_step(sys.classifier, gl, opt.learning_rate);
  if (opt.update_codebook && opt.learning_rate != 0.0)
    for (std::size_t i = 0; i < dcb.size(); ++i) sys.codebook.entries[i] -= opt.learning_rate * dcb[i];
  return res;
}

/// Joint training of encoder, codebook and classifier with the channel in the loop
/// at train_psnr_db.
inline TrainResult train_dtjscc(const data::SplitSet& data, double train_psnr_db, const DtjsccConfig& cfg) {
  cfg.validate();
  if (data.train.empty()) throw InvalidArgument("training split is empty");
  int max_label = 0;
  for (const auto& im : data.train) max_label = std::max(max_label, im.label);
  const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
  const Tensor x_all = data::to_tensor(data.train);
  const auto y_all = data::labels_of(data.train);

  Rng rng = make_rng(hash_coords({cfg.seed, hash_string("dtjscc")}));
  TrainResult out;
  DtjsccSystem& sys = out.system;
  sys.encoder = nn::make_mlp({x_all.cols(), cfg.hidden, cfg.feature_dim},
                             {nn::Activation::Relu, nn::Activation::Identity}, rng);
  sys.classifier = nn::make_mlp({cfg.feature_dim, classes}, {nn::Activation::Identity}, rng);
  const std::size_t dim = cfg.feature_dim / cfg.blocks;
  sys.codebook = detail::init_codebook(nn::forward(sys.encoder, x_all), cfg.codebook_size, dim, rng);

  LinkSpec link{cfg.modem, cfg.channel, train_psnr_db, false};
  const auto constellation = modem::make_constellation(cfg.modem);
  BatchStepOptions opt{cfg.learning_rate, cfg.codebook_weight, cfg.commitment_weight, true, true, true,
                       cfg.receiver_weight};

  std::vector<std::size_t> order(x_all.rows());
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    link.noiseless = epoch < cfg.warmup_epochs;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> usage(cfg.codebook_size, 0);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    Tensor last_feats;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tensor xb(end - start, x_all.cols());
      std::vector<int> yb;
      for (std::size_t i = start; i < end; ++i) {
        std::copy(x_all.row(order[i]).begin(), x_all.row(order[i]).end(), xb.row(i - start).begin());
        yb.push_back(y_all[order[i]]);
      }
      const auto step = train_batch(sys, xb, yb, link, constellation, opt, rng);
      for (auto idx : step.transmitted) ++usage[idx];
      loss_sum += step.ce + (cfg.codebook_weight + cfg.commitment_weight) * step.distance;
      ++n_batches;
      if (end == order.size()) last_feats = nn::forward(sys.encoder, xb);
    }
    // Unused codewords restart at a random recent feature block.
    if (cfg.learning_rate > 0.0 && last_feats.rows() > 0) {
      const std::size_t pool = last_feats.rows() * cfg.blocks;
      std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
      for (std::size_t k = 0; k < cfg.codebook_size; ++k) {
        if (usage[k] != 0) continue;
        const std::size_t p = pick(rng);
        for (std::size_t j = 0; j < dim; ++j)
          sys.codebook.entries[k * dim + j] = last_feats(p / cfg.blocks, (p % cfg.blocks) * dim + j) + 1e-3 * standard_normal(rng);
      }
    }
    const double epoch_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, n_batches));
    out.report.epoch_loss.push_back(epoch_loss);
    out.report.epochs_run = epoch + 1;
    if (epoch + 1 == cfg.warmup_epochs) {
      best = std::numeric_limits<double>::infinity();  // the loss level jumps when noise starts
      since_best = 0;
    } else if (epoch_loss < best - 1e-6) {
      best = epoch_loss;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      out.report.stopped_early = true;
      break;
    }
  }

  const data::Dataset& held_out = data.val.empty() ? data.train : data.val;
  out.report.val_top1 = evaluate(sys, held_out, LinkSpec{cfg.modem, cfg.channel, train_psnr_db, true}, 1, cfg.seed).top1;
  const double chance = 1.0 / static_cast<double>(classes);
  out.report.converged = out.report.val_top1 >= chance + cfg.chance_margin;
  if (!out.report.converged)
    out.report.diagnostic = "held-out accuracy " + std::to_string(out.report.val_top1) + " below chance + margin (" +
                            std::to_string(chance + cfg.chance_margin) + ")";
  else if (out.report.stopped_early)
    out.report.diagnostic = "loss plateaued after " + std::to_string(out.report.epochs_run) + " epochs";
  return out;
}

// ---------------------------------------------------------------------------
// MCB1 codebook file: "MCB1", u32 K, u32 A, f64 entries (little-endian).

inline void save_codebook(const std::string& path, const Codebook& cb) {
  auto out = nn::io::open_for_write(path);
  out.write("MCB1", 4);
  nn::io::put_u32(out, static_cast<std::uint32_t>(cb.size));
  nn::io::put_u32(out, static_cast<std::uint32_t>(cb.dim));
  for (double v : cb.entries) nn::io::put_f64(out, v);
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Codebook load_codebook(const std::string& path) {
  auto r = nn::io::read_file(path);
  r.magic("MCB1");
  const std::uint32_t k = r.u32();
  const std::uint32_t a = r.u32();
  if (k < 2 || a == 0 || k > (1u << 20) || a > (1u << 20))
    throw DimensionOverflowError(path + ": codebook dimensions out of range");
  r.need(static_cast<std::size_t>(k) * a * 8);
  Codebook cb(k, a);
  for (double& v : cb.entries) v = r.f64();
  cb.validate();
  return cb;
}

/// Bundle directory: encoder.mnn, classifier.mnn, covariance.mnn, codebook.mcb.
inline void save_bundle(const std::string& dir, const DtjsccSystem& sys, const nn::Network& covariance_net) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path p(dir);
  nn::save_network((p / "encoder.mnn").string(), sys.encoder);
  nn::save_network((p / "classifier.mnn").string(), sys.classifier);
  nn::save_network((p / "covariance.mnn").string(), covariance_net);
  save_codebook((p / "codebook.mcb").string(), sys.codebook);
}

inline DtjsccSystem load_bundle(const std::string& dir) {
  const std::filesystem::path p(dir);
  DtjsccSystem sys;
  sys.encoder = nn::load_network((p / "encoder.mnn").string(), encoder_activations());
  sys.classifier = nn::load_network((p / "classifier.mnn").string(), classifier_activations());
  sys.codebook = load_codebook((p / "codebook.mcb").string());
  if (sys.encoder.output_dim() % sys.codebook.dim != 0 || sys.classifier.input_dim() != sys.encoder.output_dim())
    throw InvalidArgument(dir + ": bundle networks and codebook disagree on feature width");
  return sys;
}

}  // namespace semsat::dtjscc
