// semsat: command-line front end for the link budget, data generation,
// DT-JSCC training, PSNR sweeps, CSA / FedAvg runs and confusion matrices.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "semsat/semsat.hpp"

namespace fs = std::filesystem;
using namespace semsat;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  bool out_given = false;
  std::size_t workers = 1;
};

harness::Config load(const Common& c) { return c.config.empty() ? harness::Config{} : harness::load_config(c.config); }

fs::path out_dir(const Common& c) {
  const fs::path p(c.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create output directory '" + c.out + "': " + ec.message());
  return p;
}

std::ofstream open(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  return out;
}

int cmd_linkbudget(const Common& c, double shadow_db, bool uncorrected) {
  const auto cfg = load(c);
  const auto geom = harness::geometry_from(cfg);
  const auto budget = harness::link_budget_from(cfg);
  const auto mode = uncorrected ? geometry::SlantRangeMode::Uncorrected : geometry::SlantRangeMode::Corrected;
  const auto report = geometry::link_report(geom, budget, shadow_db, mode);
  geometry::print_link_report(std::cout, report);
  if (c.out_given) {
    auto f = open(out_dir(c) / "link_budget.csv");
    f << geometry::kLinkCsvHeader << '\n' << geometry::link_csv_row(report) << '\n';
  }
  return 0;
}

int cmd_gen_data(const Common& c) {
  const auto cfg = load(c);
  auto spec = harness::dataset_from(cfg);
  spec.seed = harness::resolve_master_seed(c.seed, cfg);
  const auto d = data::generate_synthetic(spec);
  const auto dir = out_dir(c);
  const std::pair<const char*, const data::SplitSet*> sets[] = {{"t0", &d.t0}, {"t1", &d.t1}};
  for (const auto& [tag, s] : sets) {
    data::save_tensor_file((dir / (std::string(tag) + "_train.msit")).string(), s->train);
    data::save_tensor_file((dir / (std::string(tag) + "_val.msit")).string(), s->val);
    data::save_tensor_file((dir / (std::string(tag) + "_test.msit")).string(), s->test);
    auto f = open(dir / (std::string(tag) + "_summary.csv"));
    data::write_summary_csv(f, *s, spec.num_classes);
  }
  std::cout << "wrote " << d.t0.train.size() + d.t0.val.size() + d.t0.test.size() << " images per epoch (t0, t1) to "
            << dir.string() << '\n';
  return 0;
}

int cmd_train(const Common& c) {
  const auto cfg = load(c);
  const std::uint64_t seed = harness::resolve_master_seed(c.seed, cfg);
  auto spec = harness::dataset_from(cfg);
  spec.seed = seed;
  auto dc = harness::dtjscc_from(cfg);
  dc.seed = seed;
  const double train_psnr = harness::get(cfg, "dtjscc.train_psnr_db", 4.0);
  const auto d = data::generate_synthetic(spec);
  const auto res = dtjscc::train_dtjscc(d.t0, train_psnr, dc);
  Rng rng = make_rng(hash_coords({seed, hash_string("covariance-init")}));
  const auto g = csa::make_covariance_net(res.system.num_classes(), res.system.feature_dim(),
                                          harness::get<std::size_t>(cfg, "csa.covariance_hidden", 64), rng);
  const auto dir = out_dir(c) / "bundle";
  dtjscc::save_bundle(dir.string(), res.system, g);
  std::cout << "epochs run:        " << res.report.epochs_run << '\n'
            << "final loss:        " << res.report.epoch_loss.back() << '\n'
            << "held-out top-1:    " << res.report.val_top1 << " (noiseless link)\n"
            << "bundle:            " << dir.string() << '\n';
  if (!res.report.diagnostic.empty()) std::cout << "note: " << res.report.diagnostic << '\n';
  if (!res.report.converged) {
    std::cerr << "error: training did not converge: " << res.report.diagnostic << '\n';
    return 2;
  }
  return 0;
}

int cmd_sweep(const Common& c) {
  const auto cfg = load(c);
  const std::uint64_t seed = harness::resolve_master_seed(c.seed, cfg);
  const auto sc = harness::sweep_from(cfg);
  const auto result = harness::run_sweep(sc, seed, c.workers);
  const auto dir = out_dir(c);
  harness::emit_csv(result, (dir / "sweep.csv").string());
  harness::emit_svg_plot(result, (dir / "sweep.svg").string());
  for (const auto& s : harness::series_means(result)) {
    std::cout << s.channel << " K=" << s.k << ':';
    for (double a : s.mean_top1) std::cout << ' ' << std::fixed << std::setprecision(4) << a;
    if (s.psnr_db.size() >= 2) std::cout << "  spearman " << harness::spearman(s.psnr_db, s.mean_top1);
    std::cout << '\n';
  }
  return 0;
}

int cmd_csa(const Common& c, bool with_fedavg) {
  const auto cfg = load(c);
  const std::uint64_t master = harness::resolve_master_seed(c.seed, cfg);
  const auto sc = harness::csa_scenario_from(cfg);
  const auto rounds = harness::get<std::size_t>(cfg, "csa.rounds", 100);
  const auto seeds = harness::get_u64s(cfg, "csa.seeds", {1});
  std::optional<csa::FedAvgConfig> fed;
  if (with_fedavg) fed = harness::fedavg_from(cfg, sc);
  const auto results = harness::run_csa_seeds(sc, seeds, rounds, master, c.workers, fed);
  const auto dir = out_dir(c);

  if (!with_fedavg) {
    auto summary = open(dir / "csa_summary.csv");
    summary << "seed,non_csa_top1,csa_top1,delta_pp\n";
    double non = 0.0, with = 0.0;
    for (const auto& r : results) {
      auto f = open(dir / ("csa_rounds_seed" + std::to_string(r.seed) + ".csv"));
      harness::write_round_csv(f, r.csa_logs);
      summary << r.seed << ',' << std::fixed << std::setprecision(6) << r.non_csa_top1 << ',' << r.final_csa_top1()
              << ',' << 100.0 * (r.final_csa_top1() - r.non_csa_top1) << '\n';
      non += r.non_csa_top1 / static_cast<double>(results.size());
      with += r.final_csa_top1() / static_cast<double>(results.size());
    }
    std::cout << std::fixed << std::setprecision(4) << "non-CSA top-1 " << non << "\nCSA top-1     " << with
              << "\ndelta         " << std::setprecision(2) << 100.0 * (with - non) << " pp over " << results.size()
              << " seed(s)\n";
    return 0;
  }

  const double target = harness::get(cfg, "fedavg.target_top1", 0.55);
  const auto csa_curve = harness::mean_curve(results, false, "ut");
  const auto fed_curve = harness::mean_curve(results, true, "fedavg");
  for (const auto& r : results) {
    auto f = open(dir / ("fedavg_rounds_seed" + std::to_string(r.seed) + ".csv"));
    harness::write_round_csv(f, r.fedavg_logs);
  }
  auto summary = open(dir / "fedavg_summary.csv");
  summary << "arm,rounds_to_target,final_top1\n";
  auto line = [&](const char* arm, const std::vector<double>& curve) {
    const auto n = harness::rounds_to_reach(curve, target);
    summary << arm << ',' << (n ? std::to_string(*n) : "never") << ',' << std::fixed << std::setprecision(6)
            << (curve.empty() ? 0.0 : curve.back()) << '\n';
    std::cout << arm << ": " << (n ? std::to_string(*n) + " rounds" : std::string("target not reached"))
              << " to reach " << target << ", final " << std::setprecision(4) << (curve.empty() ? 0.0 : curve.back())
              << '\n';
  };
  line("csa", csa_curve);
  line("fedavg", fed_curve);
  return 0;
}

int cmd_confusion(const Common& c) {
  const auto cfg = load(c);
  const std::uint64_t seed = harness::resolve_master_seed(c.seed, cfg);
  auto spec = harness::dataset_from(cfg);
  spec.seed = seed;
  auto dc = harness::dtjscc_from(cfg);
  dc.seed = seed;
  const auto d = data::generate_synthetic(spec);
  const auto res = dtjscc::train_dtjscc(d.t0, harness::get(cfg, "dtjscc.train_psnr_db", 4.0), dc);
  const dtjscc::LinkSpec link{dc.modem, dc.channel, harness::get(cfg, "confusion.psnr_db", 12.0), false};
  const auto ev = dtjscc::evaluate(res.system, d.t0.test, link, harness::get<std::size_t>(cfg, "confusion.trials", 10),
                                   cell_seed(seed, {hash_string("confusion")}));
  const auto m = harness::confusion_matrix(ev.predictions, ev.labels, data::ClassCatalog::generic(spec.num_classes));
  auto f = open(out_dir(c) / "confusion.csv");
  harness::write_confusion_csv(f, m);
  harness::print_confusion(std::cout, m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic LEO satellite link simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "INI configuration file");
  app.add_option("--seed", common.seed, "master seed (falls back to SEMCOM_SEED, then [run] seed)");
  auto* out_opt = app.add_option("--out", common.out, "output directory");
  app.add_option("--workers", common.workers, "worker threads for sweeps and multi-seed runs")->check(CLI::Range(1, 256));

  double shadow_db = 0.0;
  bool uncorrected = false;
  auto* lb = app.add_subcommand("linkbudget", "path-loss and large-scale gain breakdown");
  lb->add_option("--shadow-db", shadow_db, "shadow-fading value to include (dB)");
  lb->add_flag("--uncorrected-slant", uncorrected, "use the slant-range expression as printed");
  auto* gd = app.add_subcommand("gen-data", "write synthetic t0/t1 datasets as MSIT files");
  auto* tr = app.add_subcommand("train", "train a DT-JSCC system and save the bundle");
  auto* sw = app.add_subcommand("sweep", "accuracy vs PSNR over channels and K");
  auto* cs = app.add_subcommand("csa", "CSA against the non-CSA system");
  auto* fa = app.add_subcommand("fedavg", "rounds to target: CSA against federated averaging");
  auto* cm = app.add_subcommand("confusion", "confusion matrix of a trained system");

  if (argc <= 1) {
    std::cout << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  common.out_given = out_opt->count() > 0;
  try {
    if (lb->parsed()) return cmd_linkbudget(common, shadow_db, uncorrected);
    if (gd->parsed()) return cmd_gen_data(common);
    if (tr->parsed()) return cmd_train(common);
    if (sw->parsed()) return cmd_sweep(common);
    if (cs->parsed()) return cmd_csa(common, false);
    if (fa->parsed()) return cmd_csa(common, true);
    if (cm->parsed()) return cmd_confusion(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
