#pragma once

// Complex-baseband channels: Y = H·X + N.
//
// Noise is circularly-symmetric complex Gaussian with *total* variance σ²
// (σ²/2 per quadrature). PSNR is taken as average transmitted symbol power over σ².

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "semsat/errors.hpp"
#include "semsat/random.hpp"

namespace semsat::channel {

using Complex = std::complex<double>;

enum class ChannelKind { Awgn, LeoRician, LeoRayleigh, Isl };

enum class FadingMode {
  Block,      // one gain per frame
  PerSymbol,  // fresh gain for every symbol
};

inline std::string_view to_string(ChannelKind k) {
  switch (k) {
    case ChannelKind::Awgn: return "awgn";
    case ChannelKind::LeoRician: return "rician";
    case ChannelKind::LeoRayleigh: return "rayleigh";
    case ChannelKind::Isl: return "isl";
  }
  return "?";
}

inline ChannelKind parse_channel_kind(std::string_view s) {
  if (s == "awgn") return ChannelKind::Awgn;
  if (s == "rician" || s == "leo-rician") return ChannelKind::LeoRician;
  if (s == "rayleigh" || s == "leo-rayleigh") return ChannelKind::LeoRayleigh;
  if (s == "isl") return ChannelKind::Isl;
  throw InvalidArgument("unknown channel kind '" + std::string(s) + "'");
}

struct ChannelRealization {
  Complex gain{1.0, 0.0};
  double noise_variance = 0.0;
  double doppler_hz = 0.0;
  double delay_s = 0.0;
  ChannelKind kind = ChannelKind::Awgn;
};

/// Unit-variance circularly-symmetric complex Gaussian.
inline Complex complex_gaussian(Rng& rng) {
  const double s = std::sqrt(0.5);
  const double re = standard_normal(rng);
  const double im = standard_normal(rng);
  return {s * re, s * im};
}

inline Complex los_phasor(double phase_rad) { return std::polar(1.0, phase_rad); }

/// Rician small-scale gain sqrt(Rζ/(R+1))·f̄ + sqrt(ζ/(R+1))·f̃. R = 0 is Rayleigh.
inline Complex sample_rician_gain(double rician_factor, double zeta_linear, Rng& rng,
                                  double los_phase_rad = 0.0) {
  if (rician_factor < 0.0) throw InvalidArgument("Rician factor must be non-negative");
  if (!(zeta_linear > 0.0)) throw InvalidArgument("zeta must be positive");
  const double los = std::sqrt(rician_factor * zeta_linear / (rician_factor + 1.0));
  const double nlos = std::sqrt(zeta_linear / (rician_factor + 1.0));
  return los * los_phasor(los_phase_rad) + nlos * complex_gaussian(rng);
}

inline Complex sample_rayleigh_gain(double zeta_linear, Rng& rng) {
  return sample_rician_gain(0.0, zeta_linear, rng);
}

/// ISL gain: the LoS term only, sqrt(Rζ/(R+1))·f̄. There is no NLoS term and no
/// renormalisation, so |g|² = ζ·R/(R+1) rather than ζ.
inline Complex sample_isl_gain(double rician_factor, double zeta_linear,
                               double los_phase_rad = 0.0) {
  if (rician_factor < 0.0) throw InvalidArgument("Rician factor must be non-negative");
  if (!(zeta_linear > 0.0)) throw InvalidArgument("zeta must be positive");
  return std::sqrt(rician_factor * zeta_linear / (rician_factor + 1.0)) * los_phasor(los_phase_rad);
}

/// H(t, f) = gain · exp(j2π[t·v − f·τ]).
inline Complex time_frequency_response(Complex gain, double t_s, double f_hz, double doppler_hz,
                                       double delay_s) {
  const double cycles = t_s * doppler_hz - f_hz * delay_s;
  return gain * std::polar(1.0, 2.0 * std::numbers::pi * cycles);
}

inline double noise_variance_from_psnr(double psnr_db, double signal_power = 1.0) {
  return signal_power / std::pow(10.0, psnr_db / 10.0);
}

inline std::vector<Complex> apply_channel(std::span<const Complex> symbols,
                                          const ChannelRealization& r, Rng& rng) {
  if (r.noise_variance < 0.0) throw InvalidArgument("noise variance must be non-negative");
  const Complex h = r.kind == ChannelKind::Awgn ? Complex{1.0, 0.0} : r.gain;
  const double sigma = std::sqrt(r.noise_variance);
  std::vector<Complex> out;
  out.reserve(symbols.size());
  for (const Complex& x : symbols) {
    Complex y = h * x;
    if (sigma > 0.0) y += sigma * complex_gaussian(rng);
    out.push_back(y);
  }
  return out;
}

/// How a link is drawn for each transmitted frame.
struct ChannelSpec {
  ChannelKind kind = ChannelKind::LeoRician;
  double rician_factor = 2.8;
  // Normalised large-scale gain: the link budget sets the operating point and
  // the PSNR axis is measured after it.
  double zeta_linear = 1.0;
  double los_phase_rad = 0.0;
  FadingMode fading = FadingMode::Block;
  double doppler_hz = 0.0;
  double delay_s = 0.0;
  double symbol_period_s = 1e-6;
};

inline ChannelRealization draw_realization(const ChannelSpec& spec, double psnr_db, Rng& rng) {
  ChannelRealization r;
  r.kind = spec.kind;
  r.noise_variance = noise_variance_from_psnr(psnr_db);
  r.doppler_hz = spec.doppler_hz;
  r.delay_s = spec.delay_s;
  switch (spec.kind) {
    case ChannelKind::Awgn: r.gain = {1.0, 0.0}; break;
    case ChannelKind::LeoRician:
      r.gain = sample_rician_gain(spec.rician_factor, spec.zeta_linear, rng, spec.los_phase_rad);
      break;
    case ChannelKind::LeoRayleigh:
      r.gain = sample_rician_gain(0.0, spec.zeta_linear, rng, spec.los_phase_rad);
      break;
    case ChannelKind::Isl:
      r.gain = sample_isl_gain(spec.rician_factor, spec.zeta_linear, spec.los_phase_rad);
      break;
  }
  return r;
}

inline constexpr const char* kRealizationCsvHeader = "kind,re,im,noise_var,doppler,delay";

inline std::string to_csv_row(const ChannelRealization& r) {
  std::ostringstream os;
  os.precision(17);
  os << to_string(r.kind) << ',' << r.gain.real() << ',' << r.gain.imag() << ','
     << r.noise_variance << ',' << r.doppler_hz << ',' << r.delay_s;
  return os.str();
}

}  // namespace semsat::channel
