#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "semsat/csa.hpp"

using namespace semsat;
using namespace semsat::csa;
using nn::Tensor;

namespace {

constexpr std::size_t kC = 3;
constexpr std::size_t kA = 4;

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  Rng rng = make_rng(seed);
  Tensor t(r, c);
  for (double& v : t.data) v = scale * standard_normal(rng);
  return t;
}

std::vector<int> labels(std::size_t n) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % kC);
  return y;
}

nn::Network classifier(std::uint64_t seed) {
  Rng rng = make_rng(seed);
  auto l = nn::make_mlp({kA, kC}, {nn::Activation::Identity}, rng);
  for (double& b : l.layers[0].biases) b = 0.1 * standard_normal(rng);
  return l;
}

CovarianceMatrix random_cov(std::uint64_t seed) {
  Rng rng = make_rng(seed);
  CovarianceMatrix c(kC, kA);
  for (double& v : c.diag) v = 0.2 + uniform01(rng);
  return c;
}

dtjscc::DtjsccSystem tiny_system(std::uint64_t seed) {
  Rng rng = make_rng(seed);
  dtjscc::DtjsccSystem s;
  s.encoder = nn::make_mlp({6, 8, kA}, dtjscc::encoder_activations(), rng);
  s.classifier = nn::make_mlp({kA, kC}, dtjscc::classifier_activations(), rng);
  s.codebook = dtjscc::Codebook(16, kA);
  for (double& v : s.codebook.entries) v = standard_normal(rng);
  return s;
}

LabeledBatch batch(std::size_t n, std::uint64_t seed) { return {random_tensor(n, 6, seed), labels(n)}; }

dtjscc::LinkSpec noiseless_link() {
  dtjscc::LinkSpec l;
  l.noiseless = true;
  return l;
}

double max_abs_diff(const nn::Network& a, const nn::Network& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.param_count(); ++i)
    m = std::max(m, std::abs(const_cast<nn::Network&>(a).param(i) - const_cast<nn::Network&>(b).param(i)));
  return m;
}

CsaScenario tiny_scenario() {
  CsaScenario sc;
  sc.data.per_class_count = 20;
  sc.data.height = 4;
  sc.data.width = 4;
  sc.data.num_classes = 4;
  sc.data.temporal_drift = 1.0;
  sc.dtjscc.codebook_size = 16;
  sc.dtjscc.feature_dim = 4;
  sc.dtjscc.hidden = 16;
  sc.dtjscc.epochs = 6;
  sc.dtjscc.warmup_epochs = 3;
  sc.covariance_hidden = 8;
  sc.batch_size = 8;
  sc.eval_trials = 1;
  sc.seed = 3;
  return sc;
}

}  // namespace

TEST(SaLoss, LambdaZeroIsCrossEntropy) {
  const auto x = random_tensor(12, kA, 1);
  const auto y = labels(12);
  const auto l = classifier(2);
  const auto sa = sa_loss(x, y, l, random_cov(3), 0.0);
  const auto ce = nn::softmax_cross_entropy(nn::forward(l, x), y);
  EXPECT_NEAR(sa.loss, ce.loss, 1e-12);
  EXPECT_EQ(sa.loss, ce.loss);
  for (double v : sa.d_cov.diag) EXPECT_EQ(v, 0.0);
}

TEST(SaLoss, ZeroCovarianceIsCrossEntropy) {
  const auto x = random_tensor(12, kA, 1);
  const auto y = labels(12);
  const auto l = classifier(2);
  const auto sa = sa_loss(x, y, l, CovarianceMatrix(kC, kA), 0.7);
  EXPECT_NEAR(sa.loss, nn::softmax_cross_entropy(nn::forward(l, x), y).loss, 1e-12);
}

TEST(SaLoss, ClosedFormForTwoClasses) {
  // One sample, label 0, W = [[0],[1]], b = 0, a = 0, σ² = 2:
  // logits (0, λ·σ²·1/2) → loss = log(1 + e^{λ}).
  const Tensor x(1, 1, std::vector<double>{0.0});
  const std::vector<int> y = {0};
  const std::vector<double> w = {0.0, 1.0}, b = {0.0, 0.0};
  CovarianceMatrix cov(2, 1, 2.0);
  EXPECT_NEAR(sa_loss(x, y, w, b, cov, 0.3).loss, std::log1p(std::exp(0.3)), 1e-14);
}

TEST(SaLoss, GradientsMatchFiniteDifferences) {
  const auto x = random_tensor(9, kA, 4);
  const auto y = labels(9);
  const auto l = classifier(5);
  const auto cov = random_cov(6);
  const double lambda = 0.8;
  const auto g = sa_loss(x, y, l, cov, lambda);
  const double h = 1e-6;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4}); };
  double worst = 0;
  for (std::size_t i = 0; i < l.param_count(); ++i) {
    auto p = l, m = l;
    p.param(i) += h;
    m.param(i) -= h;
    const double num = (sa_loss(x, y, p, cov, lambda).loss - sa_loss(x, y, m, cov, lambda).loss) / (2 * h);
    worst = std::max(worst, rel(g.d_classifier.flat(i), num));
  }
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    auto p = x, m = x;
    p.data[i] += h;
    m.data[i] -= h;
    const double num = (sa_loss(p, y, l, cov, lambda).loss - sa_loss(m, y, l, cov, lambda).loss) / (2 * h);
    worst = std::max(worst, rel(g.d_features.data[i], num));
  }
  for (std::size_t i = 0; i < cov.diag.size(); ++i) {
    auto p = cov, m = cov;
    p.diag[i] += h;
    m.diag[i] -= h;
    const double num = (sa_loss(x, y, l, p, lambda).loss - sa_loss(x, y, l, m, lambda).loss) / (2 * h);
    worst = std::max(worst, rel(g.d_cov.diag[i], num));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(SaLoss, NonDecreasingInLambda) {
  const auto x = random_tensor(12, kA, 7);
  const auto y = labels(12);
  const auto l = classifier(8);
  const auto cov = random_cov(9);
  double prev = sa_loss(x, y, l, cov, 0.0).loss;
  for (double lam = 0.1; lam <= 3.0; lam += 0.1) {
    const double v = sa_loss(x, y, l, cov, lam).loss;
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(SaLoss, InvariantToSamplePermutation) {
  const auto x = random_tensor(12, kA, 10);
  const auto y = labels(12);
  Tensor xr(12, kA);
  std::vector<int> yr(12);
  for (std::size_t i = 0; i < 12; ++i) {
    std::copy(x.row(11 - i).begin(), x.row(11 - i).end(), xr.row(i).begin());
    yr[i] = y[11 - i];
  }
  const auto l = classifier(11);
  const auto cov = random_cov(12);
  EXPECT_NEAR(sa_loss(x, y, l, cov, 0.5).loss, sa_loss(xr, yr, l, cov, 0.5).loss, 1e-12);
}

TEST(SaLoss, RejectsBadInputs) {
  const auto x = random_tensor(3, kA, 1);
  const auto l = classifier(2);
  EXPECT_THROW(sa_loss(x, labels(3), l, random_cov(1), -0.1), InvalidArgument);
  EXPECT_THROW(sa_loss(x, labels(3), l, CovarianceMatrix(kC, kA, -1.0), 0.5), InvalidArgument);
  EXPECT_THROW(sa_loss(x, labels(3), l, CovarianceMatrix(2, kA), 0.5), InvalidArgument);
  const std::vector<int> bad = {0, 1, 7};
  EXPECT_THROW(sa_loss(x, bad, l, random_cov(1), 0.5), InvalidArgument);
  Rng rng = make_rng(1);
  const auto deep = nn::make_mlp({kA, 5, kC}, {nn::Activation::Relu, nn::Activation::Identity}, rng);
  EXPECT_THROW(sa_loss(x, labels(3), deep, random_cov(1), 0.5), InvalidArgument);
}

TEST(Covariance, ZeroWeightNetGivesLn2) {
  Rng rng = make_rng(1);
  auto g = make_covariance_net(kC, kA, 8, rng);
  for (std::size_t i = 0; i < g.param_count(); ++i) g.param(i) = 0.0;
  const auto cov = predict_covariance(g, random_tensor(6, kA, 2), labels(6), kC);
  ASSERT_EQ(cov.diag.size(), kC * kA);
  for (double v : cov.diag) EXPECT_NEAR(v, std::numbers::ln2, 1e-15);
}

TEST(Covariance, OutputsAreNonNegative) {
  Rng rng = make_rng(2);
  const auto g = make_covariance_net(kC, kA, 8, rng);
  const auto cov = predict_covariance(g, random_tensor(6, kA, 3, 50.0), labels(6), kC);
  for (double v : cov.diag) EXPECT_GE(v, 0.0);
  EXPECT_NO_THROW(cov.validate());
}

TEST(Covariance, ClassMeans) {
  const Tensor f(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::vector<int> y = {0, 0, 2};
  const auto m = class_means(f, y, 3);
  EXPECT_EQ(m.data, (std::vector<double>{2, 3, 0, 0, 5, 6}));
}

TEST(MetaStep, ZeroMetaRateLeavesPredictorUnchanged) {
  Rng rng0 = make_rng(1);
  Learner side{make_covariance_net(kC, kA, 8, rng0), tiny_system(2)};
  const auto g_before = side.g;
  SAConfig cfg;
  cfg.meta_learning_rate = 0.0;
  Rng rng = make_rng(3), vrng = make_rng(4);
  const auto ref = random_tensor(6, kA, 5);
  meta_step(side, ref, labels(6), batch(8, 6), batch(8, 7), cfg, 0.5, noiseless_link(), rng, vrng);
  EXPECT_EQ(max_abs_diff(side.g, g_before), 0.0);
  EXPECT_GT(max_abs_diff(side.system.classifier, tiny_system(2).classifier), 0.0);
}

TEST(MetaStep, LambdaZeroMatchesPlainTraining) {
  Rng rng0 = make_rng(1);
  Learner side{make_covariance_net(kC, kA, 8, rng0), tiny_system(2)};
  auto plain = tiny_system(2);
  SAConfig cfg;
  cfg.inner_steps = 3;
  dtjscc::LinkSpec link;
  link.psnr_db = 6.0;
  const auto cur = batch(8, 6);
  Rng r1 = make_rng(3), v1 = make_rng(4), r2 = make_rng(3);
  meta_step(side, random_tensor(6, kA, 5), labels(6), cur, batch(8, 7), cfg, 0.0, link, r1, v1);
  const auto c = modem::make_constellation(link.modem);
  dtjscc::BatchStepOptions opt{cfg.inner_learning_rate, 0.0, cfg.commitment_weight, true, true, false};
  for (int s = 0; s < 3; ++s) dtjscc::train_batch(plain, cur.x, cur.y, link, c, opt, r2);
  EXPECT_EQ(max_abs_diff(side.system.encoder, plain.encoder), 0.0);
  EXPECT_EQ(max_abs_diff(side.system.classifier, plain.classifier), 0.0);
  EXPECT_EQ(side.system.codebook.entries, plain.codebook.entries);
}

TEST(MetaStep, FrozenEncoderStaysFixed) {
  Rng rng0 = make_rng(1);
  Learner side{make_covariance_net(kC, kA, 8, rng0), tiny_system(2), false};
  Rng r = make_rng(3), v = make_rng(4);
  meta_step(side, random_tensor(6, kA, 5), labels(6), batch(8, 6), batch(8, 7), SAConfig{}, 0.5, noiseless_link(), r, v);
  EXPECT_EQ(max_abs_diff(side.system.encoder, tiny_system(2).encoder), 0.0);
}

TEST(MetaStep, HypergradientAgreesWithFiniteDifference) {
  // Noiseless link, frozen encoder, one inner step: validation CE is a smooth
  // function of g, so the outer update should point down its gradient.
  Rng rng0 = make_rng(1);
  const auto g0 = make_covariance_net(kC, kA, 6, rng0);
  const auto sys0 = tiny_system(2);
  const auto ref = random_tensor(6, kA, 5);
  const auto ref_y = labels(6);
  const auto cur = batch(12, 6);
  const auto val = batch(12, 7);
  SAConfig cfg;
  cfg.inner_learning_rate = 0.01;
  cfg.meta_learning_rate = 1e-3;
  const double lambda = 1.0;

  auto val_ce = [&](const nn::Network& g) {
    Learner s{g, sys0, false};
    SAConfig c = cfg;
    c.meta_learning_rate = 0.0;
    Rng r = make_rng(1), v = make_rng(2);
    return meta_step(s, ref, ref_y, cur, val, c, lambda, noiseless_link(), r, v).val_ce;
  };
  Learner side{g0, sys0, false};
  Rng r = make_rng(1), v = make_rng(2);
  meta_step(side, ref, ref_y, cur, val, cfg, lambda, noiseless_link(), r, v);

  double dot = 0, na = 0, nn_ = 0;
  for (std::size_t i = 0; i < g0.param_count(); ++i) {
    const double analytic = (const_cast<nn::Network&>(g0).param(i) - side.g.param(i)) / cfg.meta_learning_rate;
    auto p = g0, m = g0;
    p.param(i) += 1e-4;
    m.param(i) -= 1e-4;
    const double numeric = (val_ce(p) - val_ce(m)) / 2e-4;
    dot += analytic * numeric;
    na += analytic * analytic;
    nn_ += numeric * numeric;
  }
  ASSERT_GT(na, 0.0);
  EXPECT_GT(dot / std::sqrt(na * nn_), 0.95);
  EXPECT_NEAR(std::sqrt(na / nn_), 1.0, 0.2);
}

TEST(MetaStep, DivergenceIsDetected) {
  Rng rng0 = make_rng(1);
  Learner side{make_covariance_net(kC, kA, 8, rng0), tiny_system(2)};
  SAConfig cfg;
  cfg.inner_steps = 5;
  cfg.inner_learning_rate = 1e4;
  Rng r = make_rng(3), v = make_rng(4);
  EXPECT_THROW(meta_step(side, random_tensor(6, kA, 5), labels(6), batch(8, 6), batch(8, 7), cfg, 5.0,
                         noiseless_link(), r, v),
               DivergenceError);
}

TEST(MetaStep, RejectsBadConfig) {
  Rng rng0 = make_rng(1);
  Learner side{make_covariance_net(kC, kA, 8, rng0), tiny_system(2)};
  SAConfig cfg;
  cfg.inner_steps = 0;
  Rng r = make_rng(3), v = make_rng(4);
  EXPECT_THROW(meta_step(side, random_tensor(6, kA, 5), labels(6), batch(8, 6), batch(8, 7), cfg, 0.5,
                         noiseless_link(), r, v),
               InvalidArgument);
}

TEST(Scenario, ZeroRoundsGiveEmptyLog) {
  const auto sc = tiny_scenario();
  const auto ctx = prepare_context(sc);
  EXPECT_TRUE(run_csa_end_to_end(ctx, sc, 0).empty());
  EXPECT_TRUE(run_fedavg_baseline(ctx, sc, 0, FedAvgConfig{}).empty());
}

TEST(Scenario, RoundsLogBothSidesReproducibly) {
  const auto sc = tiny_scenario();
  const auto ctx = prepare_context(sc);
  const auto a = run_csa_end_to_end(ctx, sc, 3);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].round_index, i / 2);
    EXPECT_EQ(a[i].side, i % 2 == 0 ? "sat2" : "ut");
    EXPECT_GT(a[i].bits_transmitted, 0u);
    EXPECT_GE(a[i].top1_accuracy, 0.0);
    EXPECT_LE(a[i].top1_accuracy, 1.0);
  }
  const auto b = run_csa_end_to_end(ctx, sc, 3);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(to_csv_row(a[i]), to_csv_row(b[i]));
  const double non = non_csa_top1(ctx, sc);
  EXPECT_GE(non, 0.0);
  EXPECT_LE(non, 1.0);
}

TEST(FedAvg, SingleClientIsPlainSgd) {
  auto global = tiny_system(2);
  const ClientShard shard{batch(8, 6), 99};
  FedAvgConfig cfg;
  cfg.local_steps = 3;
  dtjscc::LinkSpec link;
  link.psnr_db = 8.0;
  const auto avg = fedavg_round(global, std::span<const ClientShard>(&shard, 1), link, cfg);
  Rng rng = make_rng(99);
  const auto c = modem::make_constellation(link.modem);
  dtjscc::BatchStepOptions opt{cfg.learning_rate, 0.0, cfg.commitment_weight, true, true, false};
  for (int e = 0; e < 3; ++e) dtjscc::train_batch(global, shard.data.x, shard.data.y, link, c, opt, rng);
  EXPECT_EQ(max_abs_diff(avg.encoder, global.encoder), 0.0);
  EXPECT_EQ(max_abs_diff(avg.classifier, global.classifier), 0.0);
  EXPECT_EQ(avg.codebook.entries, global.codebook.entries);
}

TEST(FedAvg, IdenticalClientsAverageToOne) {
  const auto global = tiny_system(2);
  const ClientShard one{batch(8, 6), 5};
  const std::vector<ClientShard> two = {one, one};
  const auto a = fedavg_round(global, std::span<const ClientShard>(&one, 1), noiseless_link(), FedAvgConfig{});
  const auto b = fedavg_round(global, two, noiseless_link(), FedAvgConfig{});
  EXPECT_LT(max_abs_diff(a.encoder, b.encoder), 1e-15);
  EXPECT_LT(max_abs_diff(a.classifier, b.classifier), 1e-15);
}

TEST(FedAvg, WeightsFollowShardSize) {
  const auto global = tiny_system(2);
  FedAvgConfig cfg;
  const ClientShard small{batch(4, 6), 5}, big{batch(12, 7), 6};
  const std::vector<ClientShard> both = {small, big};
  const auto a = fedavg_round(global, std::span<const ClientShard>(&small, 1), noiseless_link(), cfg);
  const auto b = fedavg_round(global, std::span<const ClientShard>(&big, 1), noiseless_link(), cfg);
  const auto avg = fedavg_round(global, both, noiseless_link(), cfg);
  auto& l = const_cast<nn::Network&>(avg.classifier);
  for (std::size_t i = 0; i < l.param_count(); ++i)
    EXPECT_NEAR(l.param(i),
                0.25 * const_cast<nn::Network&>(a.classifier).param(i) +
                    0.75 * const_cast<nn::Network&>(b.classifier).param(i),
                1e-14);
  EXPECT_THROW(fedavg_round(global, std::span<const ClientShard>{}, noiseless_link(), cfg), InvalidArgument);
}

TEST(RoundLogs, CsvAndRoundsToTarget) {
  std::vector<RoundLog> logs;
  for (std::size_t r = 0; r < 5; ++r) {
    logs.push_back({r, "ut", 0.1 * static_cast<double>(r), 1.0, 1.5, 100, ""});
    logs.push_back({r, "sat2", 0.5, 1.0, 1.5, 10, ""});
  }
  EXPECT_EQ(to_csv_row(logs[0]), "0,ut,0.000000,1.000000,1.500000,100");
  EXPECT_EQ(rounds_to_target(logs, "ut", 0.3), 4u);
  EXPECT_EQ(rounds_to_target(logs, "sat2", 0.5), 1u);
  EXPECT_FALSE(rounds_to_target(logs, "ut", 0.9).has_value());
  EXPECT_FALSE(rounds_to_target(logs, "fedavg", 0.0).has_value());
}
