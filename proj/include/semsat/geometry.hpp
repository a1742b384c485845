#pragma once

// LEO link geometry and link budget.
//
// All loss quantities are in dB. Distances are in km unless the name says otherwise.
// Free-space path loss follows the convention 32.45 + 20 log10(f_GHz) + 20 log10(d_m),
// i.e. the distance is expressed in *meters* with the 32.45 dB constant. The
// textbook pairing for meters is MHz (or km with GHz and 92.45); the meters/GHz
// combination is kept deliberately and yields ~176.96 dB at 600 km, 28 GHz.

#include <cmath>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "semsat/errors.hpp"
#include "semsat/random.hpp"

namespace semsat::geometry {

inline constexpr double kSpeedOfLightMps = 299792458.0;
inline constexpr double kEarthMuKm3s2 = 398600.4418;

struct OrbitGeometry {
  double earth_radius_km = 6378.0;
  double altitude_km = 600.0;
  double elevation_rad = std::numbers::pi / 2.0;
  double isl_distance_km = 2000.0;

  void validate() const {
    if (!(earth_radius_km > 0.0)) throw InvalidArgument("earth radius must be positive");
    if (!(altitude_km > 0.0)) throw InvalidArgument("altitude must be positive");
    if (!(elevation_rad > 0.0 && elevation_rad <= std::numbers::pi / 2.0))
      throw InvalidArgument("elevation must lie in (0, pi/2]");
    if (!(isl_distance_km > 0.0)) throw InvalidArgument("ISL distance must be positive");
  }
};

struct LinkBudget {
  double carrier_ghz = 28.0;
  double sat_antenna_gain_db = 35.0;
  double user_antenna_gain_db = 37.0;
  double scintillation_loss_db = 0.5;
  double atmospheric_loss_db = 0.3;
  double shadow_sigma_db = 4.0;
  double rician_factor = 2.8;
  // Replaces the circular-orbit Doppler estimate when set.
  std::optional<double> doppler_override_hz;

  void validate() const {
    if (!(carrier_ghz > 0.0)) throw InvalidArgument("carrier frequency must be positive");
    if (scintillation_loss_db < 0.0 || atmospheric_loss_db < 0.0)
      throw InvalidArgument("loss terms must be non-negative");
    if (shadow_sigma_db < 0.0) throw InvalidArgument("shadow sigma must be non-negative");
    if (rician_factor < 0.0) throw InvalidArgument("Rician factor must be non-negative");
  }
};

struct PathLossBreakdown {
  double fspl_db = 0.0;
  double shadow_db = 0.0;
  double gas_db = 0.0;
  double scint_db = 0.0;
  double total_db = 0.0;
};

enum class SlantRangeMode {
  // sqrt(R²sin²θ + r² + 2Rr) − R sinθ, the law-of-cosines slant range.
  Corrected,
  // sqrt(R²sin²θ + r² + 2Rr − 2Rr sinθ): the closed form without the final
  // R sinθ subtraction. Gives sqrt(R² + r²) at zenith. Kept for audits.
  Uncorrected,
};

inline double slant_range_km(const OrbitGeometry& geom,
                             SlantRangeMode mode = SlantRangeMode::Corrected) {
  geom.validate();
  const double re = geom.earth_radius_km;
  const double rm = geom.altitude_km;
  const double s = std::sin(geom.elevation_rad);
  if (mode == SlantRangeMode::Uncorrected) {
    return std::sqrt(re * re * s * s + rm * rm + 2.0 * re * rm - 2.0 * re * rm * s);
  }
  return std::sqrt(re * re * s * s + rm * rm + 2.0 * re * rm) - re * s;
}

inline double free_space_path_loss_db(double distance_m, double carrier_ghz) {
  if (!(distance_m > 0.0)) throw InvalidArgument("FSPL distance must be positive");
  if (!(carrier_ghz > 0.0)) throw InvalidArgument("FSPL carrier must be positive");
  return 32.45 + 20.0 * std::log10(carrier_ghz) + 20.0 * std::log10(distance_m);
}

/// Log-normal shadowing expressed in dB: one N(0, sigma²) draw.
inline double shadow_fading_sample_db(double sigma_db, Rng& rng) {
  if (sigma_db < 0.0) throw InvalidArgument("shadow sigma must be non-negative");
  if (sigma_db == 0.0) return 0.0;
  return sigma_db * standard_normal(rng);
}

/// Ground-link loss: FSPL(slant range) + shadowing + gas + scintillation.
inline PathLossBreakdown total_path_loss(const OrbitGeometry& geom, const LinkBudget& budget,
                                         double shadow_db,
                                         SlantRangeMode mode = SlantRangeMode::Corrected) {
  budget.validate();
  const double d_km = slant_range_km(geom, mode);
  PathLossBreakdown out;
  out.fspl_db = free_space_path_loss_db(d_km * 1000.0, budget.carrier_ghz);
  out.shadow_db = shadow_db;
  out.gas_db = budget.atmospheric_loss_db;
  out.scint_db = budget.scintillation_loss_db;
  out.total_db = out.fspl_db + out.shadow_db + out.gas_db + out.scint_db;
  return out;
}

/// Inter-satellite link: free-space loss over the ISL distance only.
inline PathLossBreakdown isl_path_loss(const OrbitGeometry& geom, const LinkBudget& budget) {
  geom.validate();
  budget.validate();
  PathLossBreakdown out;
  out.fspl_db = free_space_path_loss_db(geom.isl_distance_km * 1000.0, budget.carrier_ghz);
  out.total_db = out.fspl_db;
  return out;
}

// ζ in dB: path loss minus satellite antenna gain.
inline double large_scale_gain_db(double total_loss_db, double antenna_gain_db) {
  return total_loss_db - antenna_gain_db;
}

inline double large_scale_gain_linear(double zeta_db) { return std::pow(10.0, -zeta_db / 10.0); }

inline double orbital_speed_km_s(const OrbitGeometry& geom) {
  geom.validate();
  return std::sqrt(kEarthMuKm3s2 / (geom.earth_radius_km + geom.altitude_km));
}

/// Doppler magnitude for a circular orbit passing over the terminal.
///
/// The satellite velocity is horizontal at the satellite; its projection on the
/// line of sight is v·sin(nadir angle), with sin(nadir) = R cosθ / (R + r).
inline double doppler_shift_hz(const OrbitGeometry& geom, double carrier_ghz) {
  geom.validate();
  if (!(carrier_ghz > 0.0)) throw InvalidArgument("carrier must be positive");
  const double v_ms = orbital_speed_km_s(geom) * 1000.0;
  const double cos_phi = geom.earth_radius_km * std::cos(geom.elevation_rad) /
                         (geom.earth_radius_km + geom.altitude_km);
  return carrier_ghz * 1e9 / kSpeedOfLightMps * v_ms * cos_phi;
}

struct LinkReport {
  double slant_range_km = 0.0;
  PathLossBreakdown downlink;
  double zeta_db = 0.0;
  double zeta_linear = 0.0;
  double doppler_hz = 0.0;
  PathLossBreakdown isl;
  double isl_zeta_db = 0.0;
};

inline LinkReport link_report(const OrbitGeometry& geom, const LinkBudget& budget, double shadow_db,
                              SlantRangeMode mode = SlantRangeMode::Corrected) {
  LinkReport r;
  r.slant_range_km = slant_range_km(geom, mode);
  r.downlink = total_path_loss(geom, budget, shadow_db, mode);
  r.zeta_db = large_scale_gain_db(r.downlink.total_db, budget.sat_antenna_gain_db);
  r.zeta_linear = large_scale_gain_linear(r.zeta_db);
  r.doppler_hz = budget.doppler_override_hz ? *budget.doppler_override_hz
                                            : doppler_shift_hz(geom, budget.carrier_ghz);
  r.isl = isl_path_loss(geom, budget);
  r.isl_zeta_db = large_scale_gain_db(r.isl.total_db, budget.sat_antenna_gain_db);
  return r;
}

inline constexpr const char* kLinkCsvHeader =
    "d_km,fspl_db,sf_db,gas_db,scint_db,total_db,zeta_db,doppler_hz";

inline std::string link_csv_row(const LinkReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << r.slant_range_km << ',' << r.downlink.fspl_db << ','
     << r.downlink.shadow_db << ',' << r.downlink.gas_db << ',' << r.downlink.scint_db << ','
     << r.downlink.total_db << ',' << r.zeta_db << ',' << std::setprecision(3) << r.doppler_hz;
  return os.str();
}

inline void print_link_report(std::ostream& os, const LinkReport& r) {
  auto line = [&os](const char* label, double v, const char* unit, int prec = 3) {
    os << "  " << std::left << std::setw(24) << label << std::right << std::setw(14) << std::fixed
       << std::setprecision(prec) << v << ' ' << unit << '\n';
  };
  os << "Downlink (Sat1 -> UT)\n";
  line("slant range", r.slant_range_km, "km");
  line("free-space path loss", r.downlink.fspl_db, "dB");
  line("shadow fading", r.downlink.shadow_db, "dB");
  line("atmospheric gas loss", r.downlink.gas_db, "dB");
  line("scintillation loss", r.downlink.scint_db, "dB");
  line("total path loss", r.downlink.total_db, "dB");
  line("large-scale gain zeta", r.zeta_db, "dB");
  os << "  " << std::left << std::setw(24) << "zeta (linear)" << std::right << std::setw(14)
     << std::scientific << std::setprecision(4) << r.zeta_linear << '\n';
  line("Doppler shift", r.doppler_hz, "Hz", 1);
  os << "Inter-satellite link (Sat1 -> Sat2)\n";
  line("ISL path loss", r.isl.total_db, "dB");
  line("ISL large-scale gain", r.isl_zeta_db, "dB");
}

}  // namespace semsat::geometry
