// Acceptance runner: checks every criterion end to end and prints one
// PASS/FAIL line each. The exit status is non-zero if any criterion fails,
// unless it is listed with --allow-fail (used for analysed, documented misses).

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "semsat/semsat.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace semsat;
using semsat::testing::ks_two_sample;
using semsat::testing::q_function;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string config_path(const std::string& name) { return std::string(SEMSAT_CONFIG_DIR) + "/" + name; }

struct Command {
  int status = -1;
  std::string output;
};

Command run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + SEMSAT_CLI + "\" " + args + " 2>&1";
  Command r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Independent evaluation of the reference link (double precision, frozen).
constexpr double kFsplRef = 176.95618563451728;
constexpr double kTotalRef = 177.7561856345173;

Outcome link_budget(const fs::path& scratch) {
  const auto dir = scratch / "linkbudget";
  const auto r = run_cli("linkbudget --config \"" + config_path("reference_link.cfg") + "\" --out \"" + dir.string() + "\"");
  if (r.status != 0) return {false, "cli exit " + std::to_string(r.status) + ": " + r.output};
  std::istringstream csv(slurp(dir / "link_budget.csv"));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  const auto f = harness::split_list(row);
  if (f.size() < 6) return {false, "unexpected link_budget.csv row '" + row + "'"};
  const double fspl = std::stod(f[1]);
  const double total = std::stod(f[5]);
  const bool ok = std::abs(fspl - kFsplRef) < 1e-3 && std::abs(total - kTotalRef) < 1e-3 &&
                  r.output.find("176.956") != std::string::npos && r.output.find("177.756") != std::string::npos;
  return {ok, "FSPL " + fmt(fspl, 6) + " dB, total " + fmt(total, 6) + " dB"};
}

Outcome channel_statistics() {
  constexpr int n = 100000;
  Rng rng = make_rng(2024);
  std::mt19937_64 other(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    a[i] = std::abs(channel::sample_rician_gain(0.0, 1.0, rng));
    b[i] = std::sqrt(-std::log(1.0 - u(other)));
  }
  const auto ks = ks_two_sample(a, b);
  bool ok = ks.p_value > 0.01;
  std::string detail = "KS p=" + fmt(ks.p_value, 3);
  for (double factor : {0.0, 2.8, 10.0}) {
    const double zeta = 0.37;
    double s = 0;
    for (int i = 0; i < n; ++i) s += std::norm(channel::sample_rician_gain(factor, zeta, rng));
    const double rel = std::abs(s / n - zeta) / zeta;
    ok = ok && rel < 0.02;
    detail += ", R=" + fmt(factor, 1) + " power err " + fmt(100 * rel, 2) + "%";
  }
  return {ok, detail};
}

Outcome modem_fidelity() {
  bool ok = true;
  std::string detail;
  for (const auto& c : {modem::build_psk(16), modem::build_apsk16()}) {
    Rng rng = make_rng(5);
    modem::BitStream bits;
    for (int i = 0; i < 40000; ++i) bits.bits.push_back(static_cast<std::uint8_t>(rng() & 1u));
    const auto m = modem::modulate(bits, c);
    const auto out = modem::demodulate_hard(m.symbols, channel::Complex{1.0, 0.0}, c);
    std::size_t errors = 0;
    for (std::size_t i = 0; i < bits.bits.size(); ++i) errors += bits.bits[i] != out.bits[i];
    ok = ok && errors == 0;
    detail += c.name + " noiseless BER " + std::to_string(errors) + "/" + std::to_string(bits.bits.size()) + "; ";
  }
  const auto c = modem::build_psk(16);
  for (double es : {10.0, 15.0}) {
    Rng rng = make_rng(static_cast<std::uint64_t>(es));
    const double sigma = std::sqrt(channel::noise_variance_from_psnr(es));
    constexpr std::size_t n = 1000000;
    std::size_t errors = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = rng() % 16;
      if (modem::detect(c.points[k] + sigma * channel::complex_gaussian(rng), c) != k) ++errors;
    }
    const double ser = static_cast<double>(errors) / n;
    const double theory =
        2.0 * q_function(std::sqrt(2.0 * std::pow(10.0, es / 10.0)) * std::sin(std::numbers::pi / 16));
    ok = ok && ser > theory / 2 && ser < theory * 2;
    detail += "SER@" + fmt(es, 0) + "dB " + fmt(ser, 5) + " vs " + fmt(theory, 5) + "; ";
  }
  return {ok, detail};
}

Outcome gradient_integrity() {
  double worst_ce = 0, worst_sa = 0, worst_eq = 0;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4}); };
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    Rng rng = make_rng(cell_seed(99, {inst}));
    const std::size_t c_n = 3 + inst % 4, a_n = 2 + inst % 5, b = 6 + inst;
    nn::Tensor x(b, a_n);
    for (double& v : x.data) v = standard_normal(rng);
    std::vector<int> y(b);
    for (auto& v : y) v = static_cast<int>(rng() % c_n);

    // Cross-entropy through a two-layer network.
    const auto mlp = nn::make_mlp({a_n, 7, c_n}, {nn::Activation::Tanh, nn::Activation::Identity}, rng);
    const auto rep = nn::gradient_check(
        mlp, [&](const nn::Tensor& out) { return nn::softmax_cross_entropy(out, y); }, x, 1e-6, 30, inst);
    worst_ce = std::max(worst_ce, rep.max_relative_error);

    // SA loss: every classifier weight and bias, every covariance entry.
    auto l = nn::make_mlp({a_n, c_n}, {nn::Activation::Identity}, rng);
    csa::CovarianceMatrix cov(c_n, a_n);
    for (double& v : cov.diag) v = 0.1 + uniform01(rng);
    const double h = 1e-6;
    for (double lambda : {0.0, 0.5, 2.0}) {
      const auto g = csa::sa_loss(x, y, l, cov, lambda);
      for (std::size_t i = 0; i < l.param_count(); ++i) {
        auto p = l, m = l;
        p.param(i) += h;
        m.param(i) -= h;
        const double num = (csa::sa_loss(x, y, p, cov, lambda).loss - csa::sa_loss(x, y, m, cov, lambda).loss) / (2 * h);
        worst_sa = std::max(worst_sa, rel(g.d_classifier.flat(i), num));
      }
      for (std::size_t i = 0; i < cov.diag.size(); ++i) {
        auto p = cov, m = cov;
        p.diag[i] += h;
        m.diag[i] = std::max(0.0, m.diag[i] - h);
        const double step = p.diag[i] - m.diag[i];
        const double num = (csa::sa_loss(x, y, l, p, lambda).loss - csa::sa_loss(x, y, l, m, lambda).loss) / step;
        worst_sa = std::max(worst_sa, rel(g.d_cov.diag[i], num));
      }
      if (lambda == 0.0)
        worst_eq = std::max(worst_eq, std::abs(g.loss - nn::softmax_cross_entropy(nn::forward(l, x), y).loss));
    }
  }
  const bool ok = worst_ce < 1e-5 && worst_sa < 1e-5 && worst_eq <= 1e-12;
  std::ostringstream d;
  d << std::scientific << std::setprecision(2) << "max rel err CE " << worst_ce << ", SA " << worst_sa
    << "; |SA(0) - CE| " << worst_eq;
  return {ok, d.str()};
}

Outcome quantizer_oracle() {
  std::size_t agree = 0, total = 0;
  for (std::size_t k : {32, 64, 128}) {
    Rng rng = make_rng(k);
    dtjscc::Codebook cb(k, 8);
    for (double& v : cb.entries) v = standard_normal(rng);
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> f(8);
      for (double& v : f) v = 1.5 * standard_normal(rng);
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        double d = 0;
        for (std::size_t j = 0; j < 8; ++j) d += (f[j] - cb.entries[c * 8 + j]) * (f[j] - cb.entries[c * 8 + j]);
        if (d < bd) bd = d, best = c;
      }
      agree += dtjscc::quantize(f, cb).indices[0] == best;
      ++total;
    }
  }
  return {agree == total, std::to_string(agree) + "/" + std::to_string(total) + " agree"};
}

Outcome sweep_trend(std::size_t workers) {
  const auto cfg = harness::load_config(config_path("sweep.cfg"));
  const auto result = harness::run_sweep(harness::sweep_from(cfg), harness::resolve_master_seed(std::nullopt, cfg), workers);
  const auto series = harness::series_means(result);
  bool ok = true;
  std::string detail;
  double min_rho = 1.0;
  for (const auto& s : series) min_rho = std::min(min_rho, harness::spearman(s.psnr_db, s.mean_top1));
  ok = min_rho >= 0.9;
  detail = "min Spearman " + fmt(min_rho, 3);
  std::size_t points = 0, misses = 0;
  for (const auto& ric : series) {
    if (ric.channel != "rician") continue;
    for (const auto& ray : series) {
      if (ray.channel != "rayleigh" || ray.k != ric.k) continue;
      for (std::size_t i = 0; i < ric.psnr_db.size(); ++i) {
        ++points;
        if (ric.mean_top1[i] < ray.mean_top1[i]) {
          ++misses;
          detail += "; Rician < Rayleigh at K=" + std::to_string(ric.k) + ", " + fmt(ric.psnr_db[i], 0) + " dB (" +
                    fmt(ric.mean_top1[i]) + " vs " + fmt(ray.mean_top1[i]) + ")";
        }
      }
    }
  }
  ok = ok && misses == 0 && points > 0;
  detail += "; Rician >= Rayleigh at " + std::to_string(points - misses) + "/" + std::to_string(points) + " points";
  return {ok, detail};
}

struct CsaRuns {
  std::vector<harness::CsaSeedResult> results;
  double target = 0.0;
};

CsaRuns run_csa(std::size_t workers) {
  const auto cfg = harness::load_config(config_path("csa.cfg"));
  const auto sc = harness::csa_scenario_from(cfg);
  const auto seeds = harness::get_u64s(cfg, "csa.seeds", {1});
  CsaRuns out;
  out.results = harness::run_csa_seeds(sc, seeds, harness::get<std::size_t>(cfg, "csa.rounds", 100),
                                       harness::resolve_master_seed(std::nullopt, cfg), workers,
                                       harness::fedavg_from(cfg, sc));
  out.target = harness::get(cfg, "fedavg.target_top1", 0.55);
  return out;
}

Outcome csa_gain(const CsaRuns& runs) {
  double non = 0, with = 0;
  for (const auto& r : runs.results) {
    non += r.non_csa_top1 / static_cast<double>(runs.results.size());
    with += r.final_csa_top1() / static_cast<double>(runs.results.size());
  }
  const double delta = 100.0 * (with - non);
  return {delta >= 2.0, "non-CSA " + fmt(non) + ", CSA " + fmt(with) + ", +" + fmt(delta, 2) + " pp over " +
                            std::to_string(runs.results.size()) + " seeds"};
}

Outcome rounds_to_target(const CsaRuns& runs) {
  const auto csa_curve = harness::mean_curve(runs.results, false, "ut");
  const auto fed_curve = harness::mean_curve(runs.results, true, "fedavg");
  const auto a = harness::rounds_to_reach(csa_curve, runs.target);
  const auto b = harness::rounds_to_reach(fed_curve, runs.target);
  auto show = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string("never"); };
  const bool ok = a.has_value() && (!b.has_value() || *a < *b);
  return {ok, "target " + fmt(runs.target, 2) + ": CSA " + show(a) + " rounds, FedAvg " + show(b) + " rounds (final " +
                  fmt(csa_curve.empty() ? 0.0 : csa_curve.back()) + " vs " +
                  fmt(fed_curve.empty() ? 0.0 : fed_curve.back()) + ")"};
}

Outcome determinism(const fs::path& scratch) {
  const std::string cfg = "--config \"" + config_path("quick.cfg") + "\"";
  std::vector<std::string> files;
  bool ok = true;
  std::string detail;
  for (const std::string sub : {"sweep", "csa"}) {
    for (const std::string w : {"1", "8"}) {
      const auto dir = scratch / ("det_" + sub + "_w" + w);
      fs::remove_all(dir);
      const auto r = run_cli(sub + " " + cfg + " --workers " + w + " --out \"" + dir.string() + "\"");
      if (r.status != 0) return {false, sub + " exited " + std::to_string(r.status) + ": " + r.output};
    }
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(scratch / ("det_" + sub + "_w1"))) {
      if (entry.path().extension() != ".csv") continue;
      const auto twin = scratch / ("det_" + sub + "_w8") / entry.path().filename();
      const std::string a = slurp(entry.path());
      if (!fs::exists(twin) || a != slurp(twin) || a.empty()) {
        ok = false;
        detail += entry.path().filename().string() + " differs; ";
      }
      ++compared;
    }
    ok = ok && compared > 0;
    detail += sub + ": " + std::to_string(compared) + " CSV(s) byte-identical for workers 1 and 8; ";
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string scratch = (fs::temp_directory_path() / "semsat_acceptance").string();
  std::vector<std::string> allow;
  std::vector<std::string> only;
  std::size_t workers = 1;
  app.add_option("--scratch", scratch, "directory for CLI outputs");
  app.add_option("--allow-fail", allow, "criteria whose failure does not fail the run");
  app.add_option("--only", only, "run just these criteria");
  app.add_option("--workers", workers, "threads for the long experiments");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(scratch);

  std::optional<CsaRuns> csa_runs;
  auto csa = [&]() -> const CsaRuns& {
    if (!csa_runs) csa_runs = run_csa(workers);
    return *csa_runs;
  };
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"AC1 link budget", [&] { return link_budget(scratch); }},
      {"AC2 channel statistics", channel_statistics},
      {"AC3 modem fidelity", modem_fidelity},
      {"AC4 gradient integrity", gradient_integrity},
      {"AC5 quantizer oracle", quantizer_oracle},
      {"AC6 accuracy vs PSNR trend", [&] { return sweep_trend(workers); }},
      {"AC7 CSA gain over non-CSA", [&] { return csa_gain(csa()); }},
      {"AC8 rounds to target vs FedAvg", [&] { return rounds_to_target(csa()); }},
      {"AC9 worker-count determinism", [&] { return determinism(scratch); }},
  };
  const std::set<std::string> allowed(allow.begin(), allow.end());
  std::size_t passed = 0, run = 0;
  bool hard_failure = false;
  for (const auto& [name, check] : checks) {
    const std::string id = name.substr(0, name.find(' '));
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    ++run;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    passed += o.pass;
    const bool tolerated = !o.pass && allowed.count(id) > 0;
    hard_failure = hard_failure || (!o.pass && !tolerated);
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " [" << fmt(secs, 1) << " s] " << o.detail
              << (tolerated ? " (known failure, allowed)" : "") << std::endl;
  }
  std::cout << passed << "/" << run << " criteria passed" << std::endl;
  return hard_failure ? 1 : 0;
}
