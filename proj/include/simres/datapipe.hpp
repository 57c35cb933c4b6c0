#pragma once

// Before/after radiograph pairs: PGM I/O, manifests, paired augmentation,
// a synthetic generator and stratified splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "simres/errors.hpp"
#include "simres/features.hpp"
#include "simres/tensor.hpp"

namespace simres {

enum class ChangeLabel { GettingBetter = 0, NoChange = 1, GrowingWorse = 2 };
inline constexpr std::size_t kNumLabels = 3;

/// Manifest token: better, nochange, worse.
std::string_view label_token(ChangeLabel label);
ChangeLabel parse_label(std::string_view token);
inline int label_index(ChangeLabel label) { return static_cast<int>(label); }

struct RadiographPair {
  std::string id;
  GrayImage before;
  GrayImage after;
  ChangeLabel label = ChangeLabel::NoChange;
  // Colour planes kept only when loading with keep_rgb; empty otherwise.
  std::vector<GrayImage> before_rgb;
  std::vector<GrayImage> after_rgb;

  std::size_t height() const { return before.height(); }
  std::size_t width() const { return before.width(); }
  std::size_t channels() const { return before_rgb.empty() ? 2 : 2 * before_rgb.size(); }
};

// ---------------------------------------------------------------------------
// Images and manifests

/// Reads binary PGM (P5) or PPM (P6). Colour images collapse to the mean of
/// their channels; `planes`, if given, receives the separate channels.
GrayImage read_pnm(const std::filesystem::path& path, std::vector<GrayImage>* planes = nullptr);
/// 8-bit P5 with maxval 255; pixels quantised by rounding v * 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

struct ManifestRecord {
  std::string id;
  std::string before_path;
  std::string after_path;
  ChangeLabel label;
};

/// Tab-separated: id, before_path, after_path, label. Relative paths resolve
/// against the manifest's directory. Blank lines are skipped.
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<RadiographPair> load_manifest(const std::filesystem::path& path, bool keep_rgb = false);

/// Writes <dir>/<id>_before.pgm, <dir>/<id>_after.pgm and <dir>/manifest.tsv.
void save_dataset(const std::filesystem::path& dir, const std::vector<RadiographPair>& pairs);

// ---------------------------------------------------------------------------
// Model input

/// [C,H,W]: before channel(s) then after channel(s).
template <typename Scalar>
Tensor<Scalar> to_model_input(const RadiographPair& p);

/// Stacks pairs[idx] for idx in indices into [N,C,H,W].
template <typename Scalar>
Tensor<Scalar> batch_input(const std::vector<RadiographPair>& pairs, std::span<const std::size_t> indices);

std::vector<int> batch_labels(const std::vector<RadiographPair>& pairs, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentPolicy {
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  std::vector<double> rotation_degrees{-15, -10, -5, 0, 5, 10, 15};
  double brightness_min = 0.8;
  double brightness_max = 1.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AugmentTransform {
  bool hflip = false;
  bool vflip = false;
  double angle_degrees = 0.0;
  double brightness = 1.0;

  bool is_identity() const { return !hflip && !vflip && angle_degrees == 0.0 && brightness == 1.0; }
};

AugmentTransform sample_transform(const AugmentPolicy& policy, std::mt19937_64& rng);

/// Flips, then rotation about the image centre (bilinear, replicated border),
/// then brightness scaling clamped to [0,1].
GrayImage apply_transform(const GrayImage& img, const AugmentTransform& t);
RadiographPair apply_transform(const RadiographPair& p, const AugmentTransform& t);

/// One transform drawn from rng, applied identically to both images.
RadiographPair augment(const RadiographPair& p, const AugmentPolicy& policy, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Synthetic data and splits

/// Balanced classes (label = index mod 3). Each pair draws from its own
/// stream derive_seed(seed, "synth", index).
std::vector<RadiographPair> synth_generate(std::size_t n, std::uint64_t seed, std::size_t size = 64);

/// Pixels darker than this count as lesion in the radius-ratio check.
inline constexpr double kLesionThreshold = 0.5;
std::size_t dark_pixel_count(const GrayImage& img, double threshold = kLesionThreshold);
/// Classifies by after/before dark-area ratio with cuts at 0.8 and 1.2.
ChangeLabel radius_ratio_oracle(const RadiographPair& p);

struct Split {
  std::vector<RadiographPair> train;
  std::vector<RadiographPair> val;
};

/// Stratified: each class contributes round(count * val_fraction) members to
/// val, chosen by a seeded shuffle. Both halves keep input order.
Split split(const std::vector<RadiographPair>& pairs, double val_fraction, std::uint64_t seed);

std::array<std::size_t, kNumLabels> class_counts(const std::vector<RadiographPair>& pairs);

// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
Scalar* write_pair_planes(const RadiographPair& p, Scalar* dst) {
  auto put = [&](const GrayImage& img) {
    for (double v : img.pixels()) *dst++ = static_cast<Scalar>(v);
  };
  if (p.before_rgb.empty()) {
    put(p.before);
    put(p.after);
  } else {
    for (const auto& img : p.before_rgb) put(img);
    for (const auto& img : p.after_rgb) put(img);
  }
  return dst;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> to_model_input(const RadiographPair& p) {
  std::vector<Scalar> data(p.channels() * p.height() * p.width());
  detail::write_pair_planes(p, data.data());
  return Tensor<Scalar>({p.channels(), p.height(), p.width()}, std::move(data));
}

template <typename Scalar>
Tensor<Scalar> batch_input(const std::vector<RadiographPair>& pairs, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("batch_input: empty batch");
  const RadiographPair& first = pairs.at(indices[0]);
  const std::size_t c = first.channels(), h = first.height(), w = first.width();
  std::vector<Scalar> data(indices.size() * c * h * w);
  Scalar* dst = data.data();
  for (std::size_t idx : indices) {
    const RadiographPair& p = pairs.at(idx);
    if (p.channels() != c || p.height() != h || p.width() != w) throw DataError("batch_input: pair " + p.id + " has a different shape");
    dst = detail::write_pair_planes(p, dst);
  }
  return Tensor<Scalar>({indices.size(), c, h, w}, std::move(data));
}

}  // namespace simres
