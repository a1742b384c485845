#pragma once

// Cognitive semantic augmentation.
//
// A receiver predicts a diagonal per-class feature covariance from a
// neighbour's reference features and trains its decoder with the implicit
// semantic-augmentation loss
//
//   L_SA = −log[ e^{w_y·a + b_y} / Σ_c e^{w_c·a + b_c + (λ/2)(w_c − w_y)ᵀ diag(Σ_y)(w_c − w_y)} ],
//
// the closed-form bound on expected cross-entropy when a is perturbed by
// N(0, λΣ_y). The covariance predictor g is trained one level up, on
// validation cross-entropy after the inner decoder updates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "semsat/channel.hpp"
#include "semsat/dataset.hpp"
#include "semsat/dtjscc.hpp"
#include "semsat/errors.hpp"
#include "semsat/micronn.hpp"
#include "semsat/modem.hpp"
#include "semsat/random.hpp"

namespace semsat::csa {

using nn::Tensor;

struct CovarianceMatrix {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::vector<double> diag;  // classes × dim

  CovarianceMatrix() = default;
  CovarianceMatrix(std::size_t c, std::size_t a, double fill = 0.0) : classes(c), dim(a), diag(c * a, fill) {}

  std::span<double> row(std::size_t c) { return {diag.data() + c * dim, dim}; }
  std::span<const double> row(std::size_t c) const { return {diag.data() + c * dim, dim}; }

  void validate() const {
    if (diag.size() != classes * dim) throw InvalidArgument("covariance storage does not match C × A");
    for (double v : diag) {
      if (!std::isfinite(v)) throw InvalidArgument("non-finite covariance entry");
      if (v < 0.0) throw InvalidArgument("negative covariance entry");
    }
  }
};

struct SAConfig {
  double lambda = 0.5;
  std::size_t inner_steps = 1;
  double meta_learning_rate = 0.01;
  double inner_learning_rate = 0.03;
  double commitment_weight = 0.25;
  double warmup_fraction = 0.25;  // λ ramps linearly over this share of the rounds

  void validate() const {
    if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
    if (inner_steps == 0) throw InvalidArgument("inner_steps must be >= 1");
    if (meta_learning_rate < 0.0 || inner_learning_rate < 0.0) throw InvalidArgument("learning rates must be >= 0");
    if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw InvalidArgument("warmup_fraction must be in [0, 1]");
  }
};

struct RoundLog {
  std::size_t round_index = 0;
  std::string side;
  double top1_accuracy = 0.0;
  double ce_loss = 0.0;
  double sa_loss = 0.0;
  std::uint64_t bits_transmitted = 0;
  std::string diagnostic;  // non-empty when the round was aborted
};

inline constexpr const char* kRoundCsvHeader = "round,side,top1,ce_loss,sa_loss,bits_tx";

inline std::string to_csv_row(const RoundLog& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << r.round_index << ',' << r.side << ',' << r.top1_accuracy << ',' << r.ce_loss << ',' << r.sa_loss << ','
     << r.bits_transmitted;
  return os.str();
}

// ---------------------------------------------------------------------------
// SA loss

struct SaLossResult {
  double loss = 0.0;
  Tensor d_features;        // B × A
  nn::NetworkGrad d_classifier;
  CovarianceMatrix d_cov;   // C × A
};

namespace detail {

inline const nn::DenseLayer& linear_layer(const nn::Network& classifier) {
  if (classifier.layers.size() != 1 || classifier.layers[0].activation != nn::Activation::Identity)
    throw InvalidArgument("SA loss needs a single linear classifier layer");
  return classifier.layers[0];
}

}  // namespace detail

/// SA loss for a linear classifier l(a) = W a + b. At λ = 0 (or Σ = 0) this is
/// the plain softmax cross-entropy, computed along the same code path.
inline SaLossResult sa_loss(const Tensor& features, std::span<const int> labels, const nn::Network& classifier,
                            const CovarianceMatrix& cov, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  cov.validate();
  const auto& layer = detail::linear_layer(classifier);
  const std::size_t c_n = layer.out;
  const std::size_t a_n = layer.in;
  if (cov.classes != c_n || cov.dim != a_n) throw InvalidArgument("covariance shape does not match classifier");
  if (features.cols() != a_n) throw InvalidArgument("feature width does not match classifier");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c_n) throw InvalidArgument("label out of range");

  const nn::ForwardTrace trace = nn::forward_trace(classifier, features);
  Tensor logits = trace.output;
  auto w = [&](std::size_t c, std::size_t k) { return layer.weights[c * a_n + k]; };

  const bool augment = lambda > 0.0;
  if (augment) {
    // The penalty depends only on the label, so build it once per class pair.
    std::vector<double> q(c_n * c_n, 0.0);
    for (std::size_t y = 0; y < c_n; ++y)
      for (std::size_t c = 0; c < c_n; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < a_n; ++k) {
          const double d = w(c, k) - w(y, k);
          s += cov.diag[y * a_n + k] * d * d;
        }
        q[y * c_n + c] = 0.5 * lambda * s;
      }
    for (std::size_t n = 0; n < logits.rows(); ++n)
      for (std::size_t c = 0; c < c_n; ++c) logits(n, c) += q[static_cast<std::size_t>(labels[n]) * c_n + c];
  }

  const nn::LossResult ce = nn::softmax_cross_entropy(logits, labels);
  SaLossResult out;
  out.loss = ce.loss;
  out.d_classifier = nn::backward(classifier, trace, ce.grad, &out.d_features);
  out.d_cov = CovarianceMatrix(c_n, a_n);
  if (!augment) return out;

  std::vector<double> s(c_n * c_n, 0.0);  // summed logit gradients per (label, class)
  for (std::size_t n = 0; n < logits.rows(); ++n)
    for (std::size_t c = 0; c < c_n; ++c) s[static_cast<std::size_t>(labels[n]) * c_n + c] += ce.grad(n, c);
  auto& dw = out.d_classifier.layers[0].weights;
  for (std::size_t y = 0; y < c_n; ++y)
    for (std::size_t c = 0; c < c_n; ++c) {
      if (c == y) continue;
      const double g = 0.5 * lambda * s[y * c_n + c];
      if (g == 0.0) continue;
      for (std::size_t k = 0; k < a_n; ++k) {
        const double d = w(c, k) - w(y, k);
        const double pull = 2.0 * g * cov.diag[y * a_n + k] * d;
        dw[c * a_n + k] += pull;
        dw[y * a_n + k] -= pull;
        out.d_cov.diag[y * a_n + k] += g * d * d;
      }
    }
  return out;
}

/// Raw-parameter form: weights C×A row-major, biases C.
inline SaLossResult sa_loss(const Tensor& features, std::span<const int> labels, std::span<const double> weights,
                            std::span<const double> biases, const CovarianceMatrix& cov, double lambda) {
  nn::Network l;
  l.layers.emplace_back(features.cols(), biases.size(), nn::Activation::Identity);
  if (weights.size() != l.layers[0].weights.size()) throw InvalidArgument("weights must be C × A");
  std::copy(weights.begin(), weights.end(), l.layers[0].weights.begin());
  std::copy(biases.begin(), biases.end(), l.layers[0].biases.begin());
  return sa_loss(features, labels, l, cov, lambda);
}

// ---------------------------------------------------------------------------
// Covariance predictor g: concatenated class means (C·A) → hidden → C·A, softplus.

inline const std::vector<nn::Activation>& covariance_activations() {
  static const std::vector<nn::Activation> a = {nn::Activation::Relu, nn::Activation::Softplus};
  return a;
}

inline nn::Network make_covariance_net(std::size_t classes, std::size_t dim, std::size_t hidden, Rng& rng) {
  return nn::make_mlp({classes * dim, hidden, classes * dim}, covariance_activations(), rng);
}

/// Per-class means of the reference features, flattened to one row. Classes
/// absent from the batch contribute zeros.
inline Tensor class_means(const Tensor& features, std::span<const int> labels, std::size_t classes) {
  if (labels.size() != features.rows()) throw InvalidArgument("label count does not match features");
  const std::size_t a_n = features.cols();
  Tensor m(1, classes * a_n);
  std::vector<std::size_t> count(classes, 0);
  for (std::size_t n = 0; n < features.rows(); ++n) {
    const auto y = static_cast<std::size_t>(labels[n]);
    if (y >= classes) throw InvalidArgument("label out of range");
    ++count[y];
    for (std::size_t k = 0; k < a_n; ++k) m(0, y * a_n + k) += features(n, k);
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (count[c] > 0)
      for (std::size_t k = 0; k < a_n; ++k) m(0, c * a_n + k) /= static_cast<double>(count[c]);
  return m;
}

struct CovariancePrediction {
  CovarianceMatrix cov;
  nn::ForwardTrace trace;
};

inline CovariancePrediction predict_covariance_traced(const nn::Network& g, const Tensor& reference,
                                                      std::span<const int> labels, std::size_t classes) {
  const Tensor in = class_means(reference, labels, classes);
  if (g.input_dim() != in.cols() || g.output_dim() != in.cols())
    throw InvalidArgument("covariance network must map C·A to C·A");
  CovariancePrediction p;
  p.trace = nn::forward_trace(g, in);
  p.cov = CovarianceMatrix(classes, reference.cols());
  p.cov.diag = p.trace.output.data;
  for (double& v : p.cov.diag) v = std::max(v, 0.0);  // softplus underflow guard
  return p;
}

inline CovarianceMatrix predict_covariance(const nn::Network& g, const Tensor& reference,
                                           std::span<const int> labels, std::size_t classes) {
  return predict_covariance_traced(g, reference, labels, classes).cov;
}

// ---------------------------------------------------------------------------
// Meta step

/// One side's trainable state: covariance predictor g, encoder f, classifier l.
/// The codebook is shared with the transmitter and stays frozen. A receiver
/// that only sees features (the UT) keeps the transmitter's encoder fixed.
struct Learner {
  nn::Network g;
  dtjscc::DtjsccSystem system;
  bool adapt_encoder = true;
};

struct LabeledBatch {
  Tensor x;
  std::vector<int> y;
};

struct MetaStepResult {
  double sa_loss = 0.0;        // last inner step
  double ce_loss = 0.0;        // last inner step, un-augmented
  double val_ce = 0.0;         // after the inner updates
  CovarianceMatrix covariance;
};

/// Straight-through inner step on the SA loss. With λ = 0 it performs exactly
/// the arithmetic of dtjscc::train_batch with a frozen codebook.
inline std::pair<double, Tensor> sa_train_batch(dtjscc::DtjsccSystem& sys, const Tensor& x, std::span<const int> y,
                                                const CovarianceMatrix& cov, double lambda,
                                                const dtjscc::LinkSpec& link, const modem::Constellation& c,
                                                double learning_rate, double commitment_weight, Rng& rng,
                                                bool update_encoder = true) {
  const std::size_t b = x.rows();
  const std::size_t dim = sys.codebook.dim;
  const std::size_t blocks = sys.blocks();
  const unsigned bpi = sys.codebook.bits_per_index();
  const nn::ForwardTrace tf = nn::forward_trace(sys.encoder, x);
  const Tensor& a = tf.output;
  Tensor z(b, a.cols());
  std::vector<dtjscc::QuantizedMessage> sent(b);
  for (std::size_t n = 0; n < b; ++n) {
    sent[n] = dtjscc::quantize(a.row(n), sys.codebook, n);
    const auto rx = dtjscc::send_frame(sent[n], bpi, c, link, rng);
    const auto cw = dtjscc::dequantize(rx, sys.codebook);
    std::copy(cw.begin(), cw.end(), z.row(n).begin());
  }
  const SaLossResult sa = sa_loss(z, y, sys.classifier, cov, lambda);
  Tensor da = sa.d_features;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t g = 0; g < blocks; ++g) {
      const auto e = sys.codebook.entry(sent[n].indices[g]);
      for (std::size_t j = 0; j < dim; ++j) da(n, g * dim + j) += 2.0 * commitment_weight * (a(n, g * dim + j) - e[j]) * inv_b;
    }
  if (update_encoder) {
    const nn::NetworkGrad gf = nn::backward(sys.encoder, tf, da);
    nn::sgd_step(sys.encoder, gf, learning_rate);
  }
  nn::sgd_step(sys.classifier, sa.d_classifier, learning_rate);
  return {sa.loss, std::move(z)};
}

namespace detail {

inline double received_ce(const dtjscc::DtjsccSystem& sys, const LabeledBatch& batch, const dtjscc::LinkSpec& link,
                          const modem::Constellation& c, Rng& rng, Tensor* z_out = nullptr) {
  const Tensor a = nn::forward(sys.encoder, batch.x);
  Tensor z(a.rows(), a.cols());
  for (std::size_t n = 0; n < a.rows(); ++n) {
    const auto rx = dtjscc::send_frame(dtjscc::quantize(a.row(n), sys.codebook, n), sys.codebook.bits_per_index(), c,
                                       link, rng);
    const auto cw = dtjscc::dequantize(rx, sys.codebook);
    std::copy(cw.begin(), cw.end(), z.row(n).begin());
  }
  const double loss = nn::softmax_cross_entropy(nn::forward(sys.classifier, z), batch.y).loss;
  if (z_out != nullptr) *z_out = std::move(z);
  return loss;
}

inline void axpy_classifier(nn::Network& l, const nn::NetworkGrad& v, double alpha) {
  for (std::size_t i = 0; i < l.layers[0].weights.size(); ++i) l.layers[0].weights[i] += alpha * v.layers[0].weights[i];
  for (std::size_t i = 0; i < l.layers[0].biases.size(); ++i) l.layers[0].biases[i] += alpha * v.layers[0].biases[i];
}

inline double grad_norm(const nn::NetworkGrad& v) {
  double s = 0.0;
  for (const auto& l : v.layers) {
    for (double x : l.weights) s += x * x;
    for (double x : l.biases) s += x * x;
  }
  return std::sqrt(s);
}

}  // namespace detail

/// (i) υ = g(reference); (ii) inner SGD on L_SA with υ fixed; (iii) outer step
/// on g from the post-inner validation cross-entropy.
///
/// The outer gradient is first order: the inner update is linearised around
/// the current classifier, ∂L_val/∂υ ≈ −η ∂²L_SA/∂υ∂W · ∂L_val/∂W, and the
/// mixed second derivative is taken as a central difference of ∂L_SA/∂υ along
/// ∂L_val/∂W.
inline MetaStepResult meta_step(Learner& side, const Tensor& reference, std::span<const int> reference_labels,
                                const LabeledBatch& current, const LabeledBatch& validation, const SAConfig& cfg,
                                double lambda, const dtjscc::LinkSpec& link, Rng& rng, Rng& val_rng) {
  cfg.validate();
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  auto& sys = side.system;
  const std::size_t classes = sys.num_classes();
  const auto constellation = modem::make_constellation(link.modem);

  const CovariancePrediction pred = predict_covariance_traced(side.g, reference, reference_labels, classes);
  MetaStepResult out;
  out.covariance = pred.cov;

  double first = 0.0;
  Tensor last_z;
  for (std::size_t s = 0; s < cfg.inner_steps; ++s) {
    auto [loss, z] = sa_train_batch(sys, current.x, current.y, pred.cov, lambda, link, constellation,
                                    cfg.inner_learning_rate, cfg.commitment_weight, rng, side.adapt_encoder);
    if (s == 0) first = loss;
    if (!std::isfinite(loss) || (s > 0 && loss > 10.0 * first))
      throw DivergenceError("SA loss diverged at inner step " + std::to_string(s) + ": " + std::to_string(loss) +
                            " (initial " + std::to_string(first) + ")");
    out.sa_loss = loss;
    last_z = std::move(z);
  }
  out.ce_loss = nn::softmax_cross_entropy(nn::forward(sys.classifier, last_z), current.y).loss;

  Tensor val_z;
  out.val_ce = detail::received_ce(sys, validation, link, constellation, val_rng, &val_z);
  if (!std::isfinite(out.val_ce)) throw DivergenceError("validation loss is not finite");

  if (cfg.meta_learning_rate == 0.0 || lambda == 0.0) return out;

  // v = ∂L_val/∂(W, b) at the updated classifier
  const nn::ForwardTrace tv = nn::forward_trace(sys.classifier, val_z);
  const auto ce_v = nn::softmax_cross_entropy(tv.output, validation.y);
  const nn::NetworkGrad v = nn::backward(sys.classifier, tv, ce_v.grad);
  const double vn = detail::grad_norm(v);
  if (vn == 0.0) return out;
  const double eps = 0.01 / vn;
  nn::Network plus = sys.classifier;
  nn::Network minus = sys.classifier;
  detail::axpy_classifier(plus, v, eps);
  detail::axpy_classifier(minus, v, -eps);
  const auto gp = sa_loss(last_z, current.y, plus, pred.cov, lambda).d_cov;
  const auto gm = sa_loss(last_z, current.y, minus, pred.cov, lambda).d_cov;
  Tensor d_upsilon(1, classes * sys.feature_dim());
  const double scale = -cfg.inner_learning_rate / (2.0 * eps);
  for (std::size_t i = 0; i < d_upsilon.data.size(); ++i) d_upsilon.data[i] = scale * (gp.diag[i] - gm.diag[i]);
  const nn::NetworkGrad dg = nn::backward(side.g, pred.trace, d_upsilon);
  nn::sgd_step(side.g, dg, cfg.meta_learning_rate);
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end scenario

struct CsaScenario {
  data::DatasetSpec data;
  dtjscc::DtjsccConfig dtjscc;
  double train_psnr_db = 4.0;    // DT-JSCC pre-training
  double eval_psnr_db = 12.0;    // Sat2 → UT downlink at test time
  double adapt_psnr_db = 12.0;   // live downlink during on-line adaptation
  double isl_psnr_db = 20.0;
  channel::ChannelSpec downlink;  // defaults to LEO Rician
  channel::ChannelSpec isl = [] {
    channel::ChannelSpec s;
    s.kind = channel::ChannelKind::Isl;
    return s;
  }();
  SAConfig sa;
  std::size_t covariance_hidden = 64;
  std::size_t batch_size = 32;
  std::size_t eval_trials = 5;
  std::uint64_t seed = 1;
};

/// Data and the shared t0-trained DT-JSCC system every arm starts from.
struct CsaContext {
  data::SyntheticData data;
  dtjscc::DtjsccSystem pretrained;
  dtjscc::TrainReport pretrain_report;
};

inline CsaContext prepare_context(const CsaScenario& sc) {
  CsaContext ctx;
  data::DatasetSpec ds = sc.data;
  ds.seed = sc.seed;
  ctx.data = data::generate_synthetic(ds);
  dtjscc::DtjsccConfig cfg = sc.dtjscc;
  cfg.seed = sc.seed;
  cfg.channel = sc.downlink;
  auto trained = dtjscc::train_dtjscc(ctx.data.t0, sc.train_psnr_db, cfg);
  ctx.pretrained = std::move(trained.system);
  ctx.pretrain_report = std::move(trained.report);
  return ctx;
}

namespace detail {

inline LabeledBatch draw_batch(const data::Dataset& ds, std::size_t b, Rng& rng) {
  if (ds.empty()) throw InvalidArgument("cannot draw a batch from an empty split");
  std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
  data::Dataset sub;
  for (std::size_t i = 0; i < b; ++i) sub.push_back(ds[pick(rng)]);
  return {data::to_tensor(sub), data::labels_of(sub)};
}

inline double lambda_at(const SAConfig& cfg, std::size_t round, std::size_t n_rounds) {
  const auto ramp = static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(n_rounds)));
  if (ramp == 0) return cfg.lambda;
  return cfg.lambda * std::min(1.0, static_cast<double>(round + 1) / static_cast<double>(ramp));
}

inline std::uint64_t frame_bits(const dtjscc::DtjsccSystem& sys, const modem::Constellation& c) {
  return dtjscc::symbols_per_frame(sys.blocks(), sys.codebook.bits_per_index(), c) * c.bits_per_symbol();
}

/// Test-set accuracy with the transmitter's encoder and the receiver's classifier.
inline double downlink_top1(const nn::Network& encoder, const dtjscc::DtjsccSystem& receiver, const data::Dataset& test,
                            const CsaScenario& sc) {
  dtjscc::DtjsccSystem pair = receiver;
  pair.encoder = encoder;
  dtjscc::LinkSpec link{sc.dtjscc.modem, sc.downlink, sc.eval_psnr_db, false};
  return dtjscc::evaluate(pair, test, link, sc.eval_trials, hash_coords({sc.seed, hash_string("eval")})).top1;
}

}  // namespace detail

/// Accuracy at the UT on t1 test data with no adaptation at all.
inline double non_csa_top1(const CsaContext& ctx, const CsaScenario& sc) {
  return detail::downlink_top1(ctx.pretrained.encoder, ctx.pretrained, ctx.data.t1.test, sc);
}

/// Per round: Sat1 sends a labelled reference batch of t0 features over the ISL
/// to Sat2 and over the downlink to the UT; Sat2 and the UT each run a meta
/// step on their own copies using the current t1 batch; Sat2 then serves the
/// t1 test set to the UT. Logs one "sat2" and one "ut" row per round.
inline std::vector<RoundLog> run_csa_end_to_end(const CsaContext& ctx, const CsaScenario& sc, std::size_t n_rounds) {
  sc.sa.validate();
  std::vector<RoundLog> logs;
  if (n_rounds == 0) return logs;
  const auto& sys0 = ctx.pretrained;
  const auto constellation = modem::make_constellation(sc.dtjscc.modem);
  const std::size_t classes = sys0.num_classes();

  Rng init = make_rng(hash_coords({sc.seed, hash_string("covariance-init")}));
  const nn::Network g0 = make_covariance_net(classes, sys0.feature_dim(), sc.covariance_hidden, init);
  Learner sat2{g0, sys0};
  Learner ut{g0, sys0, false};

  const dtjscc::LinkSpec isl{sc.dtjscc.modem, sc.isl, sc.isl_psnr_db, false};
  const dtjscc::LinkSpec down{sc.dtjscc.modem, sc.downlink, sc.adapt_psnr_db, false};
  const std::uint64_t bits_per_frame = detail::frame_bits(sys0, constellation);

  for (std::size_t r = 0; r < n_rounds; ++r) {
    Rng data_rng = make_rng(hash_coords({sc.seed, hash_string("csa-data"), r}));
    Rng link_rng = make_rng(hash_coords({sc.seed, hash_string("csa-link"), r}));
    const LabeledBatch ref_batch = detail::draw_batch(ctx.data.t0.train, sc.batch_size, data_rng);
    const LabeledBatch current = detail::draw_batch(ctx.data.t1.train, sc.batch_size, data_rng);
    const LabeledBatch validation = detail::draw_batch(ctx.data.t1.val, sc.batch_size, data_rng);

    // Sat1 encodes with its own (t0) encoder; each receiver decodes what it got.
    const Tensor ref_feats = nn::forward(sys0.encoder, ref_batch.x);
    Tensor ref_sat2(ref_feats.rows(), ref_feats.cols());
    Tensor ref_ut(ref_feats.rows(), ref_feats.cols());
    for (std::size_t n = 0; n < ref_feats.rows(); ++n) {
      const auto msg = dtjscc::quantize(ref_feats.row(n), sys0.codebook, n);
      const auto a = dtjscc::dequantize(dtjscc::send_frame(msg, sys0.codebook.bits_per_index(), constellation, isl, link_rng), sys0.codebook);
      const auto b = dtjscc::dequantize(dtjscc::send_frame(msg, sys0.codebook.bits_per_index(), constellation, down, link_rng), sys0.codebook);
      std::copy(a.begin(), a.end(), ref_sat2.row(n).begin());
      std::copy(b.begin(), b.end(), ref_ut.row(n).begin());
    }
    const std::uint64_t ref_bits = 2 * bits_per_frame * ref_feats.rows();
    const double lambda = detail::lambda_at(sc.sa, r, n_rounds);

    auto run_side = [&](Learner& side, const Tensor& ref, const char* name, std::uint64_t tag) {
      const Learner backup = side;
      Rng rng = make_rng(hash_coords({sc.seed, hash_string(name), r}));
      Rng val_rng = make_rng(hash_coords({sc.seed, hash_string("csa-val"), tag}));
      RoundLog log;
      log.round_index = r;
      log.side = name;
      try {
        const auto res = meta_step(side, ref, ref_batch.y, current, validation, sc.sa, lambda, down, rng, val_rng);
        log.sa_loss = res.sa_loss;
        log.ce_loss = res.ce_loss;
      } catch (const DivergenceError& e) {
        side = backup;
        log.diagnostic = e.what();
      }
      return log;
    };
    RoundLog l_sat2 = run_side(sat2, ref_sat2, "sat2", 2);
    ut.system.encoder = sat2.system.encoder;  // the UT learns on what Sat2 now sends
    RoundLog l_ut = run_side(ut, ref_ut, "ut", 3);

    const std::uint64_t serve_bits = bits_per_frame * ctx.data.t1.test.size() * sc.eval_trials;
    l_sat2.top1_accuracy = detail::downlink_top1(sat2.system.encoder, sat2.system, ctx.data.t1.test, sc);
    l_ut.top1_accuracy = detail::downlink_top1(sat2.system.encoder, ut.system, ctx.data.t1.test, sc);
    l_sat2.bits_transmitted = bits_per_frame * ref_feats.rows();  // ISL leg
    l_ut.bits_transmitted = ref_bits - l_sat2.bits_transmitted + serve_bits;
    logs.push_back(std::move(l_sat2));
    logs.push_back(std::move(l_ut));
  }
  return logs;
}

// ---------------------------------------------------------------------------
// Federated averaging baseline

struct FedAvgConfig {
  std::size_t local_steps = 1;  // E
  double learning_rate = 0.03;
  double commitment_weight = 0.25;
};

struct ClientShard {
  LabeledBatch data;
  std::uint64_t seed = 0;  // channel noise stream for this client's local steps
};

/// One FedAvg round over (f, l): each client runs E straight-through steps from
/// the global model, then parameters are averaged with weights n_i / N.
inline dtjscc::DtjsccSystem fedavg_round(const dtjscc::DtjsccSystem& global, std::span<const ClientShard> clients,
                                         const dtjscc::LinkSpec& link, const FedAvgConfig& cfg) {
  if (clients.empty()) throw InvalidArgument("FedAvg needs at least one client");
  const auto constellation = modem::make_constellation(link.modem);
  std::size_t total = 0;
  for (const auto& c : clients) total += c.data.x.rows();
  if (total == 0) throw InvalidArgument("all client shards are empty");
  dtjscc::BatchStepOptions opt{cfg.learning_rate, 0.0, cfg.commitment_weight, true, true, false};

  dtjscc::DtjsccSystem avg = global;
  for (std::size_t i = 0; i < avg.encoder.param_count(); ++i) avg.encoder.param(i) = 0.0;
  for (std::size_t i = 0; i < avg.classifier.param_count(); ++i) avg.classifier.param(i) = 0.0;
  for (const auto& c : clients) {
    dtjscc::DtjsccSystem local = global;
    Rng rng = make_rng(c.seed);
    for (std::size_t e = 0; e < cfg.local_steps; ++e)
      dtjscc::train_batch(local, c.data.x, c.data.y, link, constellation, opt, rng);
    const double w = static_cast<double>(c.data.x.rows()) / static_cast<double>(total);
    for (std::size_t i = 0; i < avg.encoder.param_count(); ++i) avg.encoder.param(i) += w * local.encoder.param(i);
    for (std::size_t i = 0; i < avg.classifier.param_count(); ++i)
      avg.classifier.param(i) += w * local.classifier.param(i);
  }
  return avg;
}

/// Clients are Sat1 (t0 stream) and Sat2 (t1 stream); the UT is the server and
/// evaluates the global model on t1 test data each round.
inline std::vector<RoundLog> run_fedavg_baseline(const CsaContext& ctx, const CsaScenario& sc, std::size_t n_rounds,
                                                 const FedAvgConfig& cfg) {
  std::vector<RoundLog> logs;
  dtjscc::DtjsccSystem global = ctx.pretrained;
  const dtjscc::LinkSpec down{sc.dtjscc.modem, sc.downlink, sc.adapt_psnr_db, false};
  const auto constellation = modem::make_constellation(sc.dtjscc.modem);
  // Each round ships the model (f, l) up and down for both clients, 32 bits per parameter.
  const std::uint64_t model_bits = 32ull * (global.encoder.param_count() + global.classifier.param_count());
  for (std::size_t r = 0; r < n_rounds; ++r) {
    Rng data_rng = make_rng(hash_coords({sc.seed, hash_string("fedavg-data"), r}));
    std::vector<ClientShard> clients;
    clients.push_back({detail::draw_batch(ctx.data.t0.train, sc.batch_size, data_rng),
                       hash_coords({sc.seed, hash_string("fedavg-sat1"), r})});
    clients.push_back({detail::draw_batch(ctx.data.t1.train, sc.batch_size, data_rng),
                       hash_coords({sc.seed, hash_string("fedavg-sat2"), r})});
    global = fedavg_round(global, clients, down, cfg);
    RoundLog log;
    log.round_index = r;
    log.side = "fedavg";
    log.top1_accuracy = detail::downlink_top1(global.encoder, global, ctx.data.t1.test, sc);
    // Training loss over both shards on the noiseless (quantised) link.
    const dtjscc::LinkSpec clean{sc.dtjscc.modem, sc.downlink, sc.train_psnr_db, true};
    Rng unused = make_rng(0);
    double ce = 0.0;
    for (const auto& c : clients)
      ce += detail::received_ce(global, c.data, clean, constellation, unused) / static_cast<double>(clients.size());
    log.ce_loss = ce;
    log.sa_loss = ce;
    log.bits_transmitted = 2 * clients.size() * model_bits;
    logs.push_back(std::move(log));
  }
  return logs;
}

/// First round (1-based count) whose accuracy for `side` reaches target.
inline std::optional<std::size_t> rounds_to_target(std::span<const RoundLog> logs, std::string_view side, double target) {
  for (const auto& l : logs)
    if (l.side == side && l.top1_accuracy >= target) return l.round_index + 1;
  return std::nullopt;
}

}  // namespace semsat::csa
