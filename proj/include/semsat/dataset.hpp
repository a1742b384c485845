#pragma once

// Synthetic multispectral scenes standing in for EuroSAT at desk scale, the
// MSIT tensor file format, and stratified splitting.
//
// Pixel model: each class c owns a spectral signature μ_c ∈ R^D. An image of
// class c uses μ_c + ξ with per-image jitter ξ ~ N(0, jitter²·I), adds a
// class-independent sinusoidal texture and i.i.d. pixel noise. The t1 scene
// shifts every signature by a random vector of norm `temporal_drift`.
// Pixels are rounded to float precision at generation so MSIT files (f32
// storage) round-trip bit-exactly while all arithmetic stays in double.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "semsat/errors.hpp"
#include "semsat/micronn.hpp"
#include "semsat/random.hpp"

namespace semsat::data {

struct MultispectralImage {
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint16_t bands = 0;
  int label = 0;
  std::uint32_t timestamp_index = 0;
  std::vector<double> pixels;  // H × W × D row-major

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width * bands;
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return pixels[(i * width + j) * bands + k];
  }
};

using Dataset = std::vector<MultispectralImage>;

struct ClassCatalog {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }

  static ClassCatalog eurosat() {
    return {{"AnnualCrop", "Forest", "HerbaceousVegetation", "Highway", "Industrial", "Pasture",
             "PermanentCrop", "Residential", "River", "SeaLake"}};
  }

  static ClassCatalog generic(std::size_t n) {
    if (n == 10) return eurosat();
    ClassCatalog c;
    for (std::size_t i = 0; i < n; ++i) c.names.push_back("class" + std::to_string(i));
    return c;
  }
};

struct DatasetSpec {
  std::size_t per_class_count = 100;
  std::uint16_t height = 8;
  std::uint16_t width = 8;
  std::uint16_t bands = 4;
  std::size_t num_classes = 10;
  double class_separation = 2.0;
  double temporal_drift = 0.0;
  double signature_jitter = 0.6;
  double texture_amplitude = 0.3;
  double pixel_noise = 0.5;
  std::array<double, 3> split_ratios = {0.70, 0.15, 0.15};
  std::uint64_t seed = 1;

  void validate() const {
    if (per_class_count < 2) throw InvalidArgument("per_class_count must be >= 2");
    if (!(class_separation > 0.0)) throw InvalidArgument("class_separation must be positive");
    if (temporal_drift < 0.0) throw InvalidArgument("temporal_drift must be non-negative");
    if (height == 0 || width == 0 || bands == 0) throw InvalidArgument("image dimensions must be positive");
    if (num_classes < 2 || num_classes > 65535) throw InvalidArgument("num_classes out of range");
  }
};

struct SplitSet {
  Dataset train;
  Dataset val;
  Dataset test;
};

struct SyntheticData {
  SplitSet t0;
  SplitSet t1;
  std::vector<std::vector<double>> signatures_t0;
  std::vector<std::vector<double>> signatures_t1;
};

/// Stratified split; within each class the records are shuffled by seed and cut
/// by the ratios, output keeps the input order.
inline SplitSet split(const Dataset& ds, std::array<double, 3> ratios, std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (!(total > 0.0) || ratios[0] < 0.0 || ratios[1] < 0.0 || ratios[2] < 0.0)
    throw InvalidArgument("split ratios must be non-negative with a positive sum");
  int max_label = -1;
  for (const auto& im : ds) max_label = std::max(max_label, im.label);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds[i].label)].push_back(i);

  std::vector<int> part(ds.size(), 2);
  Rng rng = make_rng(seed);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const double n = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * ratios[0] / total));
    const auto n_val = std::min(members.size() - std::min(n_train, members.size()),
                                static_cast<std::size_t>(std::llround(n * ratios[1] / total)));
    for (std::size_t i = 0; i < members.size(); ++i)
      part[members[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  }
  SplitSet out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Dataset& dst = part[i] == 0 ? out.train : (part[i] == 1 ? out.val : out.test);
    dst.push_back(ds[i]);
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<double>> draw_signatures(const DatasetSpec& spec, Rng& rng) {
  // Signatures live in [−sep, sep]^D; sequential rejection keeps them sep apart.
  const double lo = -spec.class_separation;
  const double hi = spec.class_separation;
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<std::vector<double>> sig;
  std::size_t attempts = 0;
  while (sig.size() < spec.num_classes) {
    if (++attempts > 200000)
      throw InvalidArgument("cannot place class signatures at the requested separation");
    std::vector<double> cand(spec.bands);
    for (double& v : cand) v = u(rng);
    bool ok = true;
    for (const auto& s : sig) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < cand.size(); ++k) d2 += (cand[k] - s[k]) * (cand[k] - s[k]);
      if (std::sqrt(d2) < spec.class_separation) {
        ok = false;
        break;
      }
    }
    if (ok) sig.push_back(std::move(cand));
  }
  return sig;
}

inline MultispectralImage render(const DatasetSpec& spec, const std::vector<double>& signature, int label,
                                 std::uint32_t t_index, Rng& rng) {
  MultispectralImage im;
  im.height = spec.height;
  im.width = spec.width;
  im.bands = spec.bands;
  im.label = label;
  im.timestamp_index = t_index;
  std::vector<double> sig(signature);
  for (double& v : sig) v += spec.signature_jitter * standard_normal(rng);
  const double fx = uniform01(rng) * 2.0 * std::numbers::pi;
  const double fy = uniform01(rng) * 2.0 * std::numbers::pi;
  const double freq = 0.5 + uniform01(rng);
  im.pixels.resize(im.pixel_count());
  for (std::size_t i = 0; i < spec.height; ++i) {
    for (std::size_t j = 0; j < spec.width; ++j) {
      const double tex = spec.texture_amplitude *
                         std::sin(freq * static_cast<double>(i) + fx) * std::cos(freq * static_cast<double>(j) + fy);
      for (std::size_t k = 0; k < spec.bands; ++k) {
        const double v = sig[k] + tex + spec.pixel_noise * standard_normal(rng);
        im.pixels[(i * spec.width + j) * spec.bands + k] = static_cast<double>(static_cast<float>(v));
      }
    }
  }
  return im;
}

inline Dataset render_scene(const DatasetSpec& spec, const std::vector<std::vector<double>>& sig,
                            std::uint32_t t_index, Rng& rng) {
  Dataset ds;
  ds.reserve(spec.num_classes * spec.per_class_count);
  for (std::size_t n = 0; n < spec.per_class_count; ++n)
    for (std::size_t c = 0; c < spec.num_classes; ++c)
      ds.push_back(render(spec, sig[c], static_cast<int>(c), t_index, rng));
  return ds;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const DatasetSpec& spec) {
  spec.validate();
  Rng rng = make_rng(hash_coords({spec.seed, hash_string("signatures")}));
  SyntheticData out;
  out.signatures_t0 = detail::draw_signatures(spec, rng);
  out.signatures_t1 = out.signatures_t0;
  if (spec.temporal_drift > 0.0) {
    for (auto& s : out.signatures_t1) {
      std::vector<double> dir(s.size());
      double norm = 0.0;
      for (double& v : dir) {
        v = standard_normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (std::size_t k = 0; k < s.size(); ++k) s[k] += spec.temporal_drift * dir[k] / norm;
    }
  }
  Rng r0 = make_rng(hash_coords({spec.seed, hash_string("scene"), 0}));
  Rng r1 = make_rng(hash_coords({spec.seed, hash_string("scene"), 1}));
  out.t0 = split(detail::render_scene(spec, out.signatures_t0, 0, r0), spec.split_ratios,
                 hash_coords({spec.seed, hash_string("split"), 0}));
  out.t1 = split(detail::render_scene(spec, out.signatures_t1, 1, r1), spec.split_ratios,
                 hash_coords({spec.seed, hash_string("split"), 1}));
  return out;
}

/// Flattens images into a B × (H·W·D) tensor.
inline nn::Tensor to_tensor(const Dataset& ds) {
  if (ds.empty()) return nn::Tensor(0, 0);
  const std::size_t width = ds.front().pixel_count();
  nn::Tensor t(ds.size(), width);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    if (ds[r].pixel_count() != width) throw InvalidArgument("images of mixed dimensions");
    std::copy(ds[r].pixels.begin(), ds[r].pixels.end(), t.data.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return t;
}

inline std::vector<int> labels_of(const Dataset& ds) {
  std::vector<int> y;
  y.reserve(ds.size());
  for (const auto& im : ds) y.push_back(im.label);
  return y;
}

// ---------------------------------------------------------------------------
// MSIT: "MSIT", u32 version = 1, u32 count, then per record
// u16 H, u16 W, u16 D, u16 label, u32 timestamp_index, f32 pixels (row-major).

inline constexpr std::uint32_t kMsitVersion = 1;
inline constexpr std::size_t kMaxPixelsPerImage = std::size_t{1} << 24;

inline void save_tensor_file(const std::string& path, const Dataset& ds) {
  auto out = nn::io::open_for_write(path);
  out.write("MSIT", 4);
  nn::io::put_u32(out, kMsitVersion);
  nn::io::put_u32(out, static_cast<std::uint32_t>(ds.size()));
  for (const auto& im : ds) {
    if (im.pixels.size() != im.pixel_count()) throw InvalidArgument("image pixel count mismatch");
    nn::io::put_u16(out, im.height);
    nn::io::put_u16(out, im.width);
    nn::io::put_u16(out, im.bands);
    nn::io::put_u16(out, static_cast<std::uint16_t>(im.label));
    nn::io::put_u32(out, im.timestamp_index);
    for (double p : im.pixels) nn::io::put_f32(out, static_cast<float>(p));
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Dataset load_tensor_file(const std::string& path) {
  auto r = nn::io::read_file(path);
  r.magic("MSIT");
  const std::uint32_t version = r.u32();
  if (version != kMsitVersion)
    throw FileFormatError(FileErrorCode::BadVersion, path + ": unsupported MSIT version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  Dataset ds;
  for (std::uint32_t n = 0; n < count; ++n) {
    MultispectralImage im;
    im.height = r.u16();
    im.width = r.u16();
    im.bands = r.u16();
    im.label = r.u16();
    im.timestamp_index = r.u32();
    const std::size_t px = im.pixel_count();
    if (px == 0 || px > kMaxPixelsPerImage)
      throw DimensionOverflowError(path + ": record " + std::to_string(n) + " has invalid dimensions");
    r.need(px * 4);
    im.pixels.resize(px);
    for (double& p : im.pixels) p = static_cast<double>(r.f32());
    ds.push_back(std::move(im));
  }
  return ds;
}

inline void write_summary_csv(std::ostream& os, const SplitSet& s, std::size_t num_classes) {
  os << "class,count_train,count_val,count_test\n";
  std::vector<std::array<std::size_t, 3>> counts(num_classes, {0, 0, 0});
  auto tally = [&](const Dataset& ds, std::size_t slot) {
    for (const auto& im : ds) ++counts.at(static_cast<std::size_t>(im.label))[slot];
  };
  tally(s.train, 0);
  tally(s.val, 1);
  tally(s.test, 2);
  for (std::size_t c = 0; c < num_classes; ++c)
    os << c << ',' << counts[c][0] << ',' << counts[c][1] << ',' << counts[c][2] << '\n';
}

}  // namespace semsat::data
