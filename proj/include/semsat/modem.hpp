#pragma once

// 16PSK / 16APSK constellations with Gray labels and coherent hard detection.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semsat/channel.hpp"
#include "semsat/errors.hpp"

namespace semsat::modem {

using channel::Complex;

struct Constellation {
  std::string name;
  std::vector<Complex> points;
  std::vector<std::uint32_t> labels;      // labels[i] = bit pattern of point i
  std::vector<std::uint32_t> label_to_point;

  std::size_t order() const { return points.size(); }
  unsigned bits_per_symbol() const {
    unsigned b = 0;
    while ((std::size_t{1} << b) < points.size()) ++b;
    return b;
  }
  std::size_t point_for_label(std::uint32_t label) const { return label_to_point.at(label); }
};

namespace detail {

inline bool is_power_of_two(std::size_t m) { return m >= 2 && (m & (m - 1)) == 0; }

inline void finish(Constellation& c) {
  c.label_to_point.assign(c.points.size(), 0);
  std::vector<bool> seen(c.points.size(), false);
  for (std::size_t i = 0; i < c.labels.size(); ++i) {
    const auto l = c.labels[i];
    if (l >= c.points.size() || seen[l]) throw InvalidArgument("constellation labels not a permutation");
    seen[l] = true;
    c.label_to_point[l] = i;
  }
}

}  // namespace detail

/// M-PSK on the unit circle, point k at phase 2πk/M, binary-reflected Gray labels.
inline Constellation build_psk(std::size_t m) {
  if (!detail::is_power_of_two(m)) throw InvalidArgument("PSK order must be a power of two >= 2");
  Constellation c;
  c.name = std::to_string(m) + "PSK";
  for (std::size_t k = 0; k < m; ++k) {
    c.points.push_back(std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(k) /
                                           static_cast<double>(m)));
    c.labels.push_back(static_cast<std::uint32_t>(k ^ (k >> 1)));
  }
  detail::finish(c);
  return c;
}

/// 4+12 APSK. Outer radius is gamma times the inner one and the inner radius is
/// fixed by unit mean energy: r1 = sqrt(16 / (4 + 12γ²)).
///
/// Labels: inner ring takes 00xx (Gray around the ring); the outer ring takes the
/// remaining twelve patterns in a cyclic Gray order, so neighbours on either ring
/// differ in one bit and the two MSBs tell the rings apart.
inline Constellation build_apsk16(double gamma = 2.57) {
  if (!(gamma >= 1.0)) throw InvalidArgument("APSK ring ratio must be >= 1");
  constexpr std::array<std::uint32_t, 4> kInner = {0, 1, 3, 2};
  constexpr std::array<std::uint32_t, 12> kOuter = {4, 5, 7, 6, 14, 10, 8, 9, 11, 15, 13, 12};
  const double r1 = std::sqrt(16.0 / (4.0 + 12.0 * gamma * gamma));
  const double r2 = gamma * r1;
  Constellation c;
  c.name = "16APSK";
  for (std::size_t k = 0; k < 4; ++k) {
    c.points.push_back(std::polar(r1, std::numbers::pi / 4.0 + std::numbers::pi / 2.0 * k));
    c.labels.push_back(kInner[k]);
  }
  for (std::size_t k = 0; k < 12; ++k) {
    c.points.push_back(std::polar(r2, std::numbers::pi / 12.0 + std::numbers::pi / 6.0 * k));
    c.labels.push_back(kOuter[k]);
  }
  detail::finish(c);
  return c;
}

enum class Modulation { Psk16, Apsk16 };

inline std::string_view to_string(Modulation m) { return m == Modulation::Psk16 ? "16psk" : "16apsk"; }

inline Modulation parse_modulation(std::string_view s) {
  if (s == "16psk" || s == "psk16") return Modulation::Psk16;
  if (s == "16apsk" || s == "apsk16") return Modulation::Apsk16;
  throw InvalidArgument("unknown modulation '" + std::string(s) + "'");
}

struct ModemConfig {
  Modulation modulation = Modulation::Apsk16;
  double apsk_gamma = 2.57;
};

inline Constellation make_constellation(const ModemConfig& cfg) {
  return cfg.modulation == Modulation::Psk16 ? build_psk(16) : build_apsk16(cfg.apsk_gamma);
}

struct BitStream {
  std::vector<std::uint8_t> bits;
  std::size_t size() const { return bits.size(); }
};

struct Modulated {
  std::vector<Complex> symbols;
  std::size_t pad_bits = 0;  // zero bits appended to fill the last symbol
};

inline Modulated modulate(const BitStream& in, const Constellation& c) {
  const unsigned k = c.bits_per_symbol();
  Modulated out;
  out.pad_bits = (k - in.bits.size() % k) % k;
  const std::size_t n_sym = (in.bits.size() + out.pad_bits) / k;
  out.symbols.reserve(n_sym);
  for (std::size_t s = 0; s < n_sym; ++s) {
    std::uint32_t label = 0;
    for (unsigned b = 0; b < k; ++b) {
      const std::size_t pos = s * k + b;
      const std::uint32_t bit = pos < in.bits.size() ? (in.bits[pos] & 1u) : 0u;
      label = (label << 1) | bit;
    }
    out.symbols.push_back(c.points[c.point_for_label(label)]);
  }
  return out;
}

/// Nearest point by Euclidean distance; ties go to the lowest index.
inline std::size_t detect(Complex y, const Constellation& c) {
  std::size_t best = 0;
  double best_d = std::norm(y - c.points[0]);
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    const double d = std::norm(y - c.points[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

namespace detail {

inline void append_label(BitStream& out, std::uint32_t label, unsigned k) {
  for (unsigned b = 0; b < k; ++b) out.bits.push_back(static_cast<std::uint8_t>((label >> (k - 1 - b)) & 1u));
}

}  // namespace detail

/// Coherent hard detection with a known (block) gain.
inline BitStream demodulate_hard(std::span<const Complex> received, Complex gain,
                                 const Constellation& c) {
  if (std::abs(gain) == 0.0) throw DeepFadeError("zero channel gain, frame cannot be equalised");
  const unsigned k = c.bits_per_symbol();
  BitStream out;
  out.bits.reserve(received.size() * k);
  for (const Complex& y : received) detail::append_label(out, c.labels[detect(y / gain, c)], k);
  return out;
}

/// Per-symbol gains, used with per-symbol fading or a Doppler-rotated block gain.
inline BitStream demodulate_hard(std::span<const Complex> received, std::span<const Complex> gains,
                                 const Constellation& c) {
  if (gains.size() != received.size()) throw InvalidArgument("gain/symbol count mismatch");
  const unsigned k = c.bits_per_symbol();
  BitStream out;
  out.bits.reserve(received.size() * k);
  for (std::size_t i = 0; i < received.size(); ++i) {
    if (std::abs(gains[i]) == 0.0) throw DeepFadeError("zero channel gain, frame cannot be equalised");
    detail::append_label(out, c.labels[detect(received[i] / gains[i], c)], k);
  }
  return out;
}

inline void write_constellation_csv(std::ostream& os, const Constellation& c) {
  os << "index,bits,re,im\n";
  const unsigned k = c.bits_per_symbol();
  const auto old_prec = os.precision(17);
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    os << i << ',';
    for (unsigned b = 0; b < k; ++b) os << ((c.labels[i] >> (k - 1 - b)) & 1u);
    os << ',' << c.points[i].real() << ',' << c.points[i].imag() << '\n';
  }
  os.precision(old_prec);
}

}  // namespace semsat::modem
