#pragma once

// Experiment orchestration: INI configs, PSNR sweeps, confusion matrices,
// CSV/SVG output and a small deterministic work pool.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "semsat/channel.hpp"
#include "semsat/csa.hpp"
#include "semsat/dataset.hpp"
#include "semsat/dtjscc.hpp"
#include "semsat/errors.hpp"
#include "semsat/geometry.hpp"
#include "semsat/modem.hpp"
#include "semsat/random.hpp"

namespace semsat::harness {

// ---------------------------------------------------------------------------
// Configuration

using Config = boost::property_tree::ptree;

inline Config parse_config(std::istream& is, const std::string& name = "<config>") {
  Config cfg;
  try {
    boost::property_tree::ini_parser::read_ini(is, cfg);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(name + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return cfg;
}

inline Config parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  return parse_config(in, path);
}

template <class T>
T get(const Config& cfg, const std::string& key, T fallback) {
  const auto v = cfg.get_optional<std::string>(key);
  if (!v) return fallback;
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      return *v;
    } else if constexpr (std::is_same_v<T, bool>) {
      const std::string s = *v;
      if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
      if (s == "0" || s == "false" || s == "no" || s == "off") return false;
      throw std::invalid_argument(s);
    } else if constexpr (std::is_floating_point_v<T>) {
      return static_cast<T>(std::stod(*v));
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v->empty() && v->front() == '-') throw std::invalid_argument(*v);
      return static_cast<T>(std::stoull(*v));
    } else {
      return static_cast<T>(std::stoll(*v));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad value for '" + key + "': '" + *v + "'");
  }
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline double parse_double(const std::string& s, const std::string& key) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad number '" + s + "' in '" + key + "'");
  }
}

inline std::vector<double> get_doubles(const Config& cfg, const std::string& key, std::vector<double> fallback) {
  const auto v = cfg.get_optional<std::string>(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& s : split_list(*v)) out.push_back(parse_double(s, key));
  return out;
}

inline std::vector<std::uint64_t> get_u64s(const Config& cfg, const std::string& key,
                                           std::vector<std::uint64_t> fallback) {
  const auto v = cfg.get_optional<std::string>(key);
  if (!v) return fallback;
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(*v)) {
    try {
      out.push_back(std::stoull(s));
    } catch (const std::logic_error&) {
      throw ConfigError("bad integer '" + s + "' in '" + key + "'");
    }
  }
  return out;
}

inline std::vector<std::string> get_strings(const Config& cfg, const std::string& key,
                                            std::vector<std::string> fallback) {
  const auto v = cfg.get_optional<std::string>(key);
  return v ? split_list(*v) : fallback;
}

/// --seed, then SEMCOM_SEED, then [run] seed, then 1.
inline std::uint64_t resolve_master_seed(std::optional<std::uint64_t> cli, const Config& cfg) {
  if (cli) return *cli;
  if (const char* env = std::getenv("SEMCOM_SEED"); env != nullptr && *env != '\0') {
    try {
      return std::stoull(env);
    } catch (const std::logic_error&) {
      throw ConfigError(std::string("SEMCOM_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return get<std::uint64_t>(cfg, "run.seed", 1);
}

inline geometry::OrbitGeometry geometry_from(const Config& cfg) {
  geometry::OrbitGeometry g;
  g.earth_radius_km = get(cfg, "geometry.earth_radius_km", g.earth_radius_km);
  g.altitude_km = get(cfg, "geometry.altitude_km", g.altitude_km);
  g.elevation_rad = get(cfg, "geometry.elevation_deg", 90.0) * std::numbers::pi / 180.0;
  g.isl_distance_km = get(cfg, "geometry.isl_distance_km", g.isl_distance_km);
  g.validate();
  return g;
}

inline geometry::LinkBudget link_budget_from(const Config& cfg) {
  geometry::LinkBudget b;
  b.carrier_ghz = get(cfg, "link.carrier_ghz", b.carrier_ghz);
  b.sat_antenna_gain_db = get(cfg, "link.sat_antenna_gain_db", b.sat_antenna_gain_db);
  b.user_antenna_gain_db = get(cfg, "link.user_antenna_gain_db", b.user_antenna_gain_db);
  b.scintillation_loss_db = get(cfg, "link.scintillation_loss_db", b.scintillation_loss_db);
  b.atmospheric_loss_db = get(cfg, "link.atmospheric_loss_db", b.atmospheric_loss_db);
  b.shadow_sigma_db = get(cfg, "link.shadow_sigma_db", b.shadow_sigma_db);
  b.rician_factor = get(cfg, "link.rician_factor", b.rician_factor);
  return b;
}

inline data::DatasetSpec dataset_from(const Config& cfg) {
  data::DatasetSpec d;
  d.per_class_count = get(cfg, "dataset.per_class_count", d.per_class_count);
  d.height = get(cfg, "dataset.height", d.height);
  d.width = get(cfg, "dataset.width", d.width);
  d.bands = get(cfg, "dataset.bands", d.bands);
  d.num_classes = get(cfg, "dataset.num_classes", d.num_classes);
  d.class_separation = get(cfg, "dataset.class_separation", d.class_separation);
  d.temporal_drift = get(cfg, "dataset.temporal_drift", d.temporal_drift);
  d.signature_jitter = get(cfg, "dataset.signature_jitter", d.signature_jitter);
  d.texture_amplitude = get(cfg, "dataset.texture_amplitude", d.texture_amplitude);
  d.pixel_noise = get(cfg, "dataset.pixel_noise", d.pixel_noise);
  const auto r = get_doubles(cfg, "dataset.split", {d.split_ratios[0], d.split_ratios[1], d.split_ratios[2]});
  if (r.size() != 3) throw ConfigError("dataset.split needs three ratios");
  d.split_ratios = {r[0], r[1], r[2]};
  d.seed = get(cfg, "dataset.seed", d.seed);
  d.validate();
  return d;
}

inline modem::ModemConfig modem_from(const Config& cfg, const std::string& section = "channel") {
  modem::ModemConfig m;
  m.modulation = modem::parse_modulation(get<std::string>(cfg, section + ".modulation", "16apsk"));
  m.apsk_gamma = get(cfg, section + ".apsk_gamma", m.apsk_gamma);
  return m;
}

inline channel::ChannelSpec channel_from(const Config& cfg, const std::string& section = "channel") {
  channel::ChannelSpec c;
  c.kind = channel::parse_channel_kind(get<std::string>(cfg, section + ".kind", "rician"));
  c.rician_factor = get(cfg, section + ".rician_factor", c.rician_factor);
  c.zeta_linear = get(cfg, section + ".zeta_linear", c.zeta_linear);
  c.los_phase_rad = get(cfg, section + ".los_phase_rad", c.los_phase_rad);
  const auto fading = get<std::string>(cfg, section + ".fading", "block");
  if (fading == "block") c.fading = channel::FadingMode::Block;
  else if (fading == "per-symbol") c.fading = channel::FadingMode::PerSymbol;
  else throw ConfigError("unknown fading mode '" + fading + "'");
  c.doppler_hz = get(cfg, section + ".doppler_hz", c.doppler_hz);
  c.delay_s = get(cfg, section + ".delay_s", c.delay_s);
  c.symbol_period_s = get(cfg, section + ".symbol_period_s", c.symbol_period_s);
  return c;
}

inline dtjscc::DtjsccConfig dtjscc_from(const Config& cfg) {
  dtjscc::DtjsccConfig d;
  d.codebook_size = get(cfg, "dtjscc.K", d.codebook_size);
  d.feature_dim = get(cfg, "dtjscc.feature_dim", d.feature_dim);
  d.blocks = get(cfg, "dtjscc.blocks", d.blocks);
  d.hidden = get(cfg, "dtjscc.hidden", d.hidden);
  d.epochs = get(cfg, "dtjscc.epochs", d.epochs);
  d.warmup_epochs = get(cfg, "dtjscc.warmup_epochs", d.warmup_epochs);
  d.batch_size = get(cfg, "dtjscc.batch_size", d.batch_size);
  d.learning_rate = get(cfg, "dtjscc.learning_rate", d.learning_rate);
  d.codebook_weight = get(cfg, "dtjscc.codebook_weight", d.codebook_weight);
  d.commitment_weight = get(cfg, "dtjscc.commitment_weight", d.commitment_weight);
  d.receiver_weight = get(cfg, "dtjscc.receiver_weight", d.receiver_weight);
  d.patience = get(cfg, "dtjscc.patience", d.patience);
  d.chance_margin = get(cfg, "dtjscc.chance_margin", d.chance_margin);
  d.modem = modem_from(cfg);
  d.channel = channel_from(cfg);
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Work pool

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Callers write results
/// into slot i, so output order never depends on scheduling. The first
/// exception is rethrown after all threads stop.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          next.store(n);
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepConfig {
  std::vector<channel::ChannelKind> channels = {channel::ChannelKind::Awgn, channel::ChannelKind::LeoRician,
                                                channel::ChannelKind::LeoRayleigh};
  std::vector<std::size_t> ks = {32, 64, 128};
  std::vector<double> psnr_grid = {0, 4, 8, 12, 16};
  std::size_t trials = 20;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  double train_psnr_db = 4.0;
  channel::ChannelSpec train_channel;  // every system is trained once on this link
  data::DatasetSpec dataset;
  dtjscc::DtjsccConfig dtjscc;

  void validate() const {
    if (psnr_grid.empty()) throw InvalidArgument("psnr_grid must not be empty");
    if (trials == 0) throw InvalidArgument("trials must be >= 1");
    if (channels.empty() || ks.empty() || seeds.empty()) throw InvalidArgument("sweep needs channels, K and seeds");
  }
};

inline SweepConfig sweep_from(const Config& cfg) {
  SweepConfig s;
  s.dataset = dataset_from(cfg);
  s.dtjscc = dtjscc_from(cfg);
  s.train_channel = channel_from(cfg);
  s.channels.clear();
  for (const auto& c : get_strings(cfg, "sweep.channels", {"awgn", "rician", "rayleigh"}))
    s.channels.push_back(channel::parse_channel_kind(c));
  s.ks.clear();
  for (auto k : get_u64s(cfg, "sweep.K", {32, 64, 128})) s.ks.push_back(static_cast<std::size_t>(k));
  s.psnr_grid = get_doubles(cfg, "sweep.psnr_db", s.psnr_grid);
  s.trials = get(cfg, "sweep.trials", s.trials);
  s.seeds = get_u64s(cfg, "sweep.seeds", s.seeds);
  s.train_psnr_db = get(cfg, "sweep.train_psnr_db", s.train_psnr_db);
  s.validate();
  return s;
}

struct SweepRow {
  std::string channel;
  std::string modulation;
  std::size_t k = 0;
  double psnr_db = 0.0;
  std::uint64_t seed = 0;
  double top1 = 0.0;

  bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
  std::vector<SweepRow> rows;
};

/// Seed for the data and training of one (K, seed) system.
inline std::uint64_t system_seed(std::uint64_t master, std::size_t k, std::uint64_t seed) {
  return cell_seed(master, {hash_string("system"), k, seed});
}

/// Evaluation seed for a cell. The channel kind is left out on purpose so all
/// channels of a (K, PSNR, seed) cell see the same random numbers.
inline std::uint64_t eval_seed(std::uint64_t master, std::size_t k, double psnr_db, std::uint64_t seed) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &psnr_db, sizeof bits);
  return cell_seed(master, {hash_string("eval"), k, bits, seed});
}

/// One system per (K, seed) is trained on the training channel, then every
/// (channel, PSNR) cell evaluates that same system: a paired comparison.
/// Rows come out sorted by (channel, K, PSNR, seed) in config order.
inline SweepResult run_sweep(const SweepConfig& cfg, std::uint64_t master_seed, std::size_t workers = 1) {
  cfg.validate();
  struct Trained {
    data::SyntheticData data;
    dtjscc::DtjsccSystem system;
  };
  const std::size_t n_sys = cfg.ks.size() * cfg.seeds.size();
  std::vector<Trained> systems(n_sys);
  parallel_for(n_sys, workers, [&](std::size_t i) {
    const std::size_t k = cfg.ks[i / cfg.seeds.size()];
    const std::uint64_t seed = cfg.seeds[i % cfg.seeds.size()];
    const std::uint64_t s = system_seed(master_seed, k, seed);
    data::DatasetSpec ds = cfg.dataset;
    ds.seed = s;
    systems[i].data = data::generate_synthetic(ds);
    dtjscc::DtjsccConfig dc = cfg.dtjscc;
    dc.codebook_size = k;
    dc.seed = s;
    dc.channel = cfg.train_channel;
    systems[i].system = dtjscc::train_dtjscc(systems[i].data.t0, cfg.train_psnr_db, dc).system;
  });

  const std::size_t per_channel = cfg.ks.size() * cfg.psnr_grid.size() * cfg.seeds.size();
  SweepResult out;
  out.rows.resize(cfg.channels.size() * per_channel);
  parallel_for(out.rows.size(), workers, [&](std::size_t i) {
    const std::size_t ci = i / per_channel;
    std::size_t rest = i % per_channel;
    const std::size_t ki = rest / (cfg.psnr_grid.size() * cfg.seeds.size());
    rest %= cfg.psnr_grid.size() * cfg.seeds.size();
    const std::size_t pi = rest / cfg.seeds.size();
    const std::size_t si = rest % cfg.seeds.size();
    const auto& trained = systems[ki * cfg.seeds.size() + si];
    channel::ChannelSpec ch = cfg.train_channel;
    ch.kind = cfg.channels[ci];
    const dtjscc::LinkSpec link{cfg.dtjscc.modem, ch, cfg.psnr_grid[pi], false};
    const auto ev = dtjscc::evaluate(trained.system, trained.data.t0.test, link, cfg.trials,
                                     eval_seed(master_seed, cfg.ks[ki], cfg.psnr_grid[pi], cfg.seeds[si]));
    out.rows[i] = {std::string(channel::to_string(cfg.channels[ci])), std::string(modem::to_string(cfg.dtjscc.modem.modulation)),
                   cfg.ks[ki], cfg.psnr_grid[pi], cfg.seeds[si], ev.top1};
  });
  return out;
}

/// Seed-averaged accuracy per (channel, K) series, indexed by PSNR in grid order.
struct Series {
  std::string channel;
  std::size_t k = 0;
  std::vector<double> psnr_db;
  std::vector<double> mean_top1;
};

inline std::vector<Series> series_means(const SweepResult& r) {
  std::vector<Series> out;
  std::map<std::pair<std::string, std::size_t>, std::size_t> where;
  std::vector<std::vector<std::size_t>> counts;
  for (const auto& row : r.rows) {
    const auto key = std::make_pair(row.channel, row.k);
    auto it = where.find(key);
    if (it == where.end()) {
      it = where.emplace(key, out.size()).first;
      out.push_back({row.channel, row.k, {}, {}});
      counts.emplace_back();
    }
    Series& s = out[it->second];
    auto& cnt = counts[it->second];
    const auto p = std::find(s.psnr_db.begin(), s.psnr_db.end(), row.psnr_db);
    const std::size_t j = static_cast<std::size_t>(p - s.psnr_db.begin());
    if (p == s.psnr_db.end()) {
      s.psnr_db.push_back(row.psnr_db);
      s.mean_top1.push_back(0.0);
      cnt.push_back(0);
    }
    s.mean_top1[j] += row.top1;
    ++cnt[j];
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < out[i].mean_top1.size(); ++j) out[i].mean_top1[j] /= static_cast<double>(counts[i][j]);
  return out;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman needs two equal-length samples (n >= 2)");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// CSV / SVG

inline constexpr const char* kSweepCsvHeader = "channel,modulation,K,psnr_db,seed,top1";

namespace detail {

inline std::string fmt(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

}  // namespace detail

inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << kSweepCsvHeader << '\n';
  for (const auto& row : r.rows)
    os << row.channel << ',' << row.modulation << ',' << row.k << ',' << detail::fmt(row.psnr_db, 3) << ','
       << row.seed << ',' << detail::fmt(row.top1, 6) << '\n';
}

inline SweepResult read_sweep_csv(std::istream& is) {
  SweepResult r;
  std::string line;
  if (!std::getline(is, line) || line != kSweepCsvHeader) throw InvalidArgument("not a sweep CSV (bad header)");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_list(line);
    if (f.size() != 6) throw InvalidArgument("sweep CSV row needs 6 fields: '" + line + "'");
    r.rows.push_back({f[0], f[1], static_cast<std::size_t>(std::stoull(f[2])), parse_double(f[3], "psnr_db"),
                      std::stoull(f[4]), parse_double(f[5], "top1")});
  }
  return r;
}

inline void emit_csv(const SweepResult& r, const std::string& path) {
  auto out = detail::open_out(path);
  write_sweep_csv(out, r);
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Accuracy-vs-PSNR line plot, one polyline per (channel, K) series. Every
/// vertex also carries its data values as attributes so the file diffs cleanly.
inline void write_svg(std::ostream& os, const SweepResult& r) {
  const auto series = series_means(r);
  constexpr double W = 640, H = 400, L = 60, R = 160, T = 20, B = 50;
  double pmin = 0.0, pmax = 1.0;
  bool first = true;
  for (const auto& s : series)
    for (double p : s.psnr_db) {
      if (!std::isfinite(p)) continue;
      if (first) pmin = pmax = p, first = false;
      pmin = std::min(pmin, p);
      pmax = std::max(pmax, p);
    }
  if (pmax == pmin) pmax = pmin + 1.0;
  auto sx = [&](double p) { return L + (p - pmin) / (pmax - pmin) * (W - L - R); };
  auto sy = [&](double a) { return T + (1.0 - a) * (H - T - B); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
                                  "#7f7f7f", "#bcbd22"};
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << sy(0) << "\" x2=\"" << W - R << "\" y2=\"" << sy(0) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << sy(0) << "\" x2=\"" << L << "\" y2=\"" << sy(1) << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">PSNR (dB)</text>\n";
  os << "<text x=\"15\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 15 " << (T + H - B) / 2
     << ")\" text-anchor=\"middle\">Top-1 accuracy</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kColors[i % std::size(kColors)];
    os << "<polyline class=\"series\" data-channel=\"" << s.channel << "\" data-k=\"" << s.k << "\" fill=\"none\" stroke=\""
       << color << "\" points=\"";
    for (std::size_t j = 0; j < s.psnr_db.size(); ++j) {
      if (!std::isfinite(s.psnr_db[j])) continue;
      os << detail::fmt(sx(s.psnr_db[j]), 2) << ',' << detail::fmt(sy(s.mean_top1[j]), 2) << ' ';
    }
    os << "\"/>\n";
    for (std::size_t j = 0; j < s.psnr_db.size(); ++j) {
      if (!std::isfinite(s.psnr_db[j])) continue;
      os << "<circle r=\"3\" fill=\"" << color << "\" cx=\"" << detail::fmt(sx(s.psnr_db[j]), 2) << "\" cy=\""
         << detail::fmt(sy(s.mean_top1[j]), 2) << "\" data-psnr=\"" << detail::fmt(s.psnr_db[j], 3) << "\" data-top1=\""
         << detail::fmt(s.mean_top1[j], 6) << "\"/>\n";
    }
    os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 15 * (i + 1) << "\" fill=\"" << color << "\">" << s.channel
       << " K=" << s.k << "</text>\n";
  }
  os << "</svg>\n";
}

inline void emit_svg_plot(const SweepResult& r, const std::string& path) {
  auto out = detail::open_out(path);
  write_svg(out, r);
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Confusion matrix

struct ConfusionMatrix {
  data::ClassCatalog catalog;
  std::vector<std::size_t> counts;  // C × C, row = true class
  std::vector<double> row_pct;      // row-normalised, percent

  std::size_t classes() const { return catalog.size(); }
  std::size_t count(std::size_t t, std::size_t p) const { return counts[t * classes() + p]; }
  double pct(std::size_t t, std::size_t p) const { return row_pct[t * classes() + p]; }

  /// Mean of the diagonal percentages over classes that occur, as a fraction.
  double balanced_top1() const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < classes(); ++c) {
      std::size_t row = 0;
      for (std::size_t p = 0; p < classes(); ++p) row += count(c, p);
      if (row == 0) continue;
      s += pct(c, c) / 100.0;
      ++n;
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
  }
};

inline ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels,
                                        const data::ClassCatalog& catalog) {
  if (predictions.size() != labels.size()) throw InvalidArgument("prediction and label counts differ");
  const std::size_t c_n = catalog.size();
  ConfusionMatrix m;
  m.catalog = catalog;
  m.counts.assign(c_n * c_n, 0);
  m.row_pct.assign(c_n * c_n, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c_n || predictions[i] < 0 ||
        static_cast<std::size_t>(predictions[i]) >= c_n)
      throw InvalidArgument("class index outside the catalog");
    ++m.counts[static_cast<std::size_t>(labels[i]) * c_n + static_cast<std::size_t>(predictions[i])];
  }
  for (std::size_t t = 0; t < c_n; ++t) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < c_n; ++p) row += m.counts[t * c_n + p];
    if (row == 0) continue;
    for (std::size_t p = 0; p < c_n; ++p)
      m.row_pct[t * c_n + p] = 100.0 * static_cast<double>(m.counts[t * c_n + p]) / static_cast<double>(row);
  }
  return m;
}

inline constexpr const char* kConfusionCsvHeader = "true_class,pred_class,count,row_pct";

inline void write_confusion_csv(std::ostream& os, const ConfusionMatrix& m) {
  os << kConfusionCsvHeader << '\n';
  for (std::size_t t = 0; t < m.classes(); ++t)
    for (std::size_t p = 0; p < m.classes(); ++p)
      os << m.catalog.names[t] << ',' << m.catalog.names[p] << ',' << m.count(t, p) << ',' << detail::fmt(m.pct(t, p), 4)
         << '\n';
}

inline void print_confusion(std::ostream& os, const ConfusionMatrix& m) {
  std::size_t w = 6;
  for (const auto& n : m.catalog.names) w = std::max(w, n.size());
  os << std::setw(static_cast<int>(w)) << "" << ' ';
  for (std::size_t p = 0; p < m.classes(); ++p) os << std::setw(7) << p;
  os << '\n';
  for (std::size_t t = 0; t < m.classes(); ++t) {
    os << std::setw(static_cast<int>(w)) << m.catalog.names[t] << ' ';
    for (std::size_t p = 0; p < m.classes(); ++p) os << std::setw(7) << detail::fmt(m.pct(t, p), 1);
    os << '\n';
  }
  os << "balanced top-1: " << detail::fmt(100.0 * m.balanced_top1(), 2) << "%\n";
}

// ---------------------------------------------------------------------------
// CSA / FedAvg scenario

inline csa::CsaScenario csa_scenario_from(const Config& cfg) {
  csa::CsaScenario s;
  s.data = dataset_from(cfg);
  s.dtjscc = dtjscc_from(cfg);
  s.downlink = channel_from(cfg);
  s.isl = channel_from(cfg, "isl");
  if (!cfg.get_optional<std::string>("isl.kind")) s.isl.kind = channel::ChannelKind::Isl;
  s.train_psnr_db = get(cfg, "csa.train_psnr_db", s.train_psnr_db);
  s.eval_psnr_db = get(cfg, "csa.eval_psnr_db", s.eval_psnr_db);
  s.adapt_psnr_db = get(cfg, "csa.adapt_psnr_db", s.adapt_psnr_db);
  s.isl_psnr_db = get(cfg, "isl.psnr_db", s.isl_psnr_db);
  s.sa.lambda = get(cfg, "csa.lambda", s.sa.lambda);
  s.sa.inner_steps = get(cfg, "csa.inner_steps", s.sa.inner_steps);
  s.sa.meta_learning_rate = get(cfg, "csa.meta_lr", s.sa.meta_learning_rate);
  s.sa.inner_learning_rate = get(cfg, "csa.inner_lr", s.sa.inner_learning_rate);
  s.sa.warmup_fraction = get(cfg, "csa.warmup_fraction", s.sa.warmup_fraction);
  s.sa.commitment_weight = s.dtjscc.commitment_weight;
  s.covariance_hidden = get(cfg, "csa.covariance_hidden", s.covariance_hidden);
  s.batch_size = get(cfg, "csa.batch_size", s.batch_size);
  s.eval_trials = get(cfg, "csa.eval_trials", s.eval_trials);
  s.sa.validate();
  return s;
}

inline csa::FedAvgConfig fedavg_from(const Config& cfg, const csa::CsaScenario& sc) {
  csa::FedAvgConfig f;
  f.local_steps = get(cfg, "fedavg.local_steps", sc.sa.inner_steps);
  f.learning_rate = get(cfg, "fedavg.learning_rate", sc.sa.inner_learning_rate);
  f.commitment_weight = sc.sa.commitment_weight;
  return f;
}

/// Everything one seed of the CSA comparison produces.
struct CsaSeedResult {
  std::uint64_t seed = 0;
  double non_csa_top1 = 0.0;
  std::vector<csa::RoundLog> csa_logs;
  std::vector<csa::RoundLog> fedavg_logs;  // empty unless requested

  double final_csa_top1() const { return csa_logs.empty() ? non_csa_top1 : csa_logs.back().top1_accuracy; }
};

inline std::vector<CsaSeedResult> run_csa_seeds(const csa::CsaScenario& base, std::span<const std::uint64_t> seeds,
                                                std::size_t rounds, std::uint64_t master_seed, std::size_t workers,
                                                std::optional<csa::FedAvgConfig> fedavg) {
  std::vector<CsaSeedResult> out(seeds.size());
  parallel_for(seeds.size(), workers, [&](std::size_t i) {
    csa::CsaScenario sc = base;
    sc.seed = cell_seed(master_seed, {hash_string("csa"), seeds[i]});
    const auto ctx = csa::prepare_context(sc);
    out[i].seed = seeds[i];
    out[i].non_csa_top1 = csa::non_csa_top1(ctx, sc);
    out[i].csa_logs = csa::run_csa_end_to_end(ctx, sc, rounds);
    if (fedavg) out[i].fedavg_logs = csa::run_fedavg_baseline(ctx, sc, rounds, *fedavg);
  });
  return out;
}

/// Seed-averaged accuracy per round for one log side.
inline std::vector<double> mean_curve(std::span<const CsaSeedResult> results, bool fedavg, const std::string& side) {
  std::vector<double> curve;
  for (const auto& r : results) {
    const auto& logs = fedavg ? r.fedavg_logs : r.csa_logs;
    for (const auto& l : logs) {
      if (l.side != side) continue;
      if (curve.size() <= l.round_index) curve.resize(l.round_index + 1, 0.0);
      curve[l.round_index] += l.top1_accuracy / static_cast<double>(results.size());
    }
  }
  return curve;
}

/// Number of rounds (1-based) until the curve first reaches target.
inline std::optional<std::size_t> rounds_to_reach(std::span<const double> curve, double target) {
  for (std::size_t i = 0; i < curve.size(); ++i)
    if (curve[i] >= target) return i + 1;
  return std::nullopt;
}

inline void write_round_csv(std::ostream& os, std::span<const csa::RoundLog> logs) {
  os << csa::kRoundCsvHeader << '\n';
  for (const auto& l : logs) os << csa::to_csv_row(l) << '\n';
}

}  // namespace semsat::harness
