#include "simres/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "simres/rng.hpp"
#include "simres/textio.hpp"

namespace simres {

namespace fs = std::filesystem;

std::string_view label_token(ChangeLabel label) {
  switch (label) {
    case ChangeLabel::GettingBetter: return "better";
    case ChangeLabel::NoChange: return "nochange";
    case ChangeLabel::GrowingWorse: return "worse";
  }
  return "nochange";
}

ChangeLabel parse_label(std::string_view token) {
  for (auto l : {ChangeLabel::GettingBetter, ChangeLabel::NoChange, ChangeLabel::GrowingWorse}) {
    if (label_token(l) == token) return l;
  }
  throw DataError("unknown label '" + std::string(token) + "' (expected better, nochange or worse)");
}

// ---------------------------------------------------------------------------
// PNM

namespace {

struct PnmHeader {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& bytes, const fs::path& path) {
  PnmHeader h;
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space_and_comments();
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#') ++pos;
    return bytes.substr(start, pos - start);
  };
  auto number = [&](const char* what) {
    const std::string t = token();
    if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw DataError(path.string() + ": bad " + what + " in image header");
    }
    return static_cast<std::size_t>(std::stoull(t));
  };
  h.magic = token();
  if (h.magic != "P5" && h.magic != "P6") throw DataError(path.string() + ": not a binary PGM/PPM (magic '" + h.magic + "')");
  h.width = number("width");
  h.height = number("height");
  h.maxval = number("maxval");
  if (h.width == 0 || h.height == 0) throw DataError(path.string() + ": zero image extent");
  if (h.maxval == 0 || h.maxval > 65535) throw DataError(path.string() + ": maxval out of range");
  if (pos >= bytes.size()) throw DataError(path.string() + ": truncated header");
  h.data_offset = pos + 1;  // exactly one whitespace byte before the raster
  return h;
}

}  // namespace

GrayImage read_pnm(const fs::path& path, std::vector<GrayImage>* planes) {
  const std::string bytes = read_file(path);
  const PnmHeader h = parse_pnm_header(bytes, path);
  const std::size_t channels = h.magic == "P6" ? 3 : 1;
  const std::size_t sample_bytes = h.maxval > 255 ? 2 : 1;
  const std::size_t count = h.width * h.height * channels;
  if (bytes.size() < h.data_offset + count * sample_bytes) throw DataError(path.string() + ": truncated raster");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  const auto maxval = static_cast<double>(h.maxval);
  std::vector<std::vector<double>> chans(channels, std::vector<double>(h.width * h.height));
  for (std::size_t i = 0; i < h.width * h.height; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t k = i * channels + c;
      const std::size_t v = sample_bytes == 2 ? (static_cast<std::size_t>(raw[2 * k]) << 8) | raw[2 * k + 1] : raw[k];
      if (v > h.maxval) throw DataError(path.string() + ": sample exceeds maxval");
      chans[c][i] = static_cast<double>(v) / maxval;
    }
  }
  if (channels == 1) {
    if (planes) planes->clear();
    return GrayImage(h.height, h.width, std::move(chans[0]));
  }
  std::vector<double> gray(h.width * h.height);
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = std::min(1.0, (chans[0][i] + chans[1][i] + chans[2][i]) / 3.0);
  if (planes) {
    planes->clear();
    for (auto& c : chans) planes->emplace_back(h.height, h.width, std::move(c));
  }
  return GrayImage(h.height, h.width, std::move(gray));
}

void write_pgm(const fs::path& path, const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + img.size());
  for (double v : img.pixels()) out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  write_binary_file(path, out);
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestRecord> records;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4) throw DataError(where + "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    ManifestRecord r;
    r.id = fields[0];
    r.before_path = fields[1];
    r.after_path = fields[2];
    if (r.id.empty()) throw DataError(where + "empty id");
    try {
      r.label = parse_label(fields[3]);
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    if (!ids.insert(r.id).second) throw DataError(where + "duplicate id '" + r.id + "'");
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  std::string text;
  for (const auto& r : records) {
    text += r.id + '\t' + r.before_path + '\t' + r.after_path + '\t' + std::string(label_token(r.label)) + '\n';
  }
  write_text_file(path, text);
}

std::vector<RadiographPair> load_manifest(const fs::path& path, bool keep_rgb) {
  const auto records = read_manifest(path);
  const fs::path base = path.parent_path();
  std::vector<RadiographPair> pairs;
  pairs.reserve(records.size());
  for (const auto& r : records) {
    auto resolve = [&](const std::string& p) {
      fs::path q(p);
      return q.is_absolute() ? q : base / q;
    };
    RadiographPair pair;
    pair.id = r.id;
    pair.label = r.label;
    pair.before = read_pnm(resolve(r.before_path), keep_rgb ? &pair.before_rgb : nullptr);
    pair.after = read_pnm(resolve(r.after_path), keep_rgb ? &pair.after_rgb : nullptr);
    if (pair.before.height() != pair.after.height() || pair.before.width() != pair.after.width()) {
      throw DataError("pair '" + r.id + "': before is " + std::to_string(pair.before.height()) + "x" +
                      std::to_string(pair.before.width()) + ", after is " + std::to_string(pair.after.height()) + "x" +
                      std::to_string(pair.after.width()));
    }
    if (pair.before_rgb.size() != pair.after_rgb.size()) {
      throw DataError("pair '" + r.id + "': before and after differ in colour channels");
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void save_dataset(const fs::path& dir, const std::vector<RadiographPair>& pairs) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec) && !fs::create_directory(dir, ec)) {
    throw IoError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
  std::vector<ManifestRecord> records;
  for (const auto& p : pairs) {
    ManifestRecord r{p.id, p.id + "_before.pgm", p.id + "_after.pgm", p.label};
    write_pgm(dir / r.before_path, p.before);
    write_pgm(dir / r.after_path, p.after);
    records.push_back(std::move(r));
  }
  write_manifest(dir / "manifest.tsv", records);
}

std::vector<int> batch_labels(const std::vector<RadiographPair>& pairs, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(label_index(pairs.at(i).label));
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

void AugmentPolicy::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(hflip_prob) || !prob(vflip_prob)) throw ConfigError("augment: flip probabilities must lie in [0,1]");
  if (rotation_degrees.empty()) throw ConfigError("augment: rotation_degrees must not be empty");
  for (double a : rotation_degrees) {
    if (!std::isfinite(a)) throw ConfigError("augment: rotation angles must be finite");
  }
  if (!(brightness_min > 0.0) || !(brightness_max >= brightness_min) || !std::isfinite(brightness_max)) {
    throw ConfigError("augment: brightness range must satisfy 0 < min <= max");
  }
}

AugmentTransform sample_transform(const AugmentPolicy& policy, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentTransform t;
  t.hflip = unit(rng) < policy.hflip_prob;
  t.vflip = unit(rng) < policy.vflip_prob;
  t.angle_degrees = policy.rotation_degrees[std::uniform_int_distribution<std::size_t>(0, policy.rotation_degrees.size() - 1)(rng)];
  t.brightness = policy.brightness_min + (policy.brightness_max - policy.brightness_min) * unit(rng);
  return t;
}

namespace {

GrayImage rotate(const GrayImage& img, double degrees) {
  const std::size_t h = img.height(), w = img.width();
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double ymax = static_cast<double>(h - 1), xmax = static_cast<double>(w - 1);
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // inverse map: output pixel looks up the source rotated back
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sx = std::clamp(c * dx + s * dy + cx, 0.0, xmax);
      const double sy = std::clamp(-s * dx + c * dy + cy, 0.0, ymax);
      const auto x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      const double top = img.at(y0, x0) * (1.0 - fx) + img.at(y0, x1) * fx;
      const double bottom = img.at(y1, x0) * (1.0 - fx) + img.at(y1, x1) * fx;
      out[y * w + x] = std::clamp(top * (1.0 - fy) + bottom * fy, 0.0, 1.0);
    }
  }
  return GrayImage(h, w, std::move(out));
}

}  // namespace

GrayImage apply_transform(const GrayImage& img, const AugmentTransform& t) {
  GrayImage out = img;
  const std::size_t h = img.height(), w = img.width();
  if (t.hflip) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(y, x) = img.at(y, w - 1 - x);
  }
  if (t.vflip) {
    const GrayImage src = out;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(y, x) = src.at(h - 1 - y, x);
  }
  if (t.angle_degrees != 0.0) out = rotate(out, t.angle_degrees);
  if (t.brightness != 1.0) {
    for (double& v : out.mutable_pixels()) v = std::clamp(v * t.brightness, 0.0, 1.0);
  }
  return out;
}

RadiographPair apply_transform(const RadiographPair& p, const AugmentTransform& t) {
  RadiographPair out;
  out.id = p.id;
  out.label = p.label;
  out.before = apply_transform(p.before, t);
  out.after = apply_transform(p.after, t);
  for (const auto& img : p.before_rgb) out.before_rgb.push_back(apply_transform(img, t));
  for (const auto& img : p.after_rgb) out.after_rgb.push_back(apply_transform(img, t));
  return out;
}

RadiographPair augment(const RadiographPair& p, const AugmentPolicy& policy, std::mt19937_64& rng) {
  return apply_transform(p, sample_transform(policy, rng));
}

// ---------------------------------------------------------------------------
// Synthetic pairs
//
// A bright elliptical tooth on a noisy background with a dark circular lesion
// whose radius changes between the two images according to the class.

namespace {

constexpr double kBackground = 0.7, kTooth = 0.85, kLesion = 0.35, kNoise = 0.02;

struct Scene {
  double tooth_cy, tooth_cx, tooth_ry, tooth_rx;
  double lesion_cy, lesion_cx;
};

GrayImage render(std::size_t size, const Scene& sc, double lesion_r, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, kNoise);
  std::vector<double> px(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double py = static_cast<double>(y) + 0.5, pxx = static_cast<double>(x) + 0.5;
      const double ey = (py - sc.tooth_cy) / sc.tooth_ry, ex = (pxx - sc.tooth_cx) / sc.tooth_rx;
      double v = ey * ey + ex * ex <= 1.0 ? kTooth : kBackground;
      const double ly = py - sc.lesion_cy, lx = pxx - sc.lesion_cx;
      if (ly * ly + lx * lx <= lesion_r * lesion_r) v = kLesion;
      px[y * size + x] = std::clamp(v + noise(rng), 0.0, 1.0);
    }
  }
  return GrayImage(size, size, std::move(px));
}

}  // namespace

std::vector<RadiographPair> synth_generate(std::size_t n, std::uint64_t seed, std::size_t size) {
  if (n < 3) throw DataError("synth_generate: need n >= 3, got " + std::to_string(n));
  if (size < 32) throw DataError("synth_generate: size must be >= 32");
  const double scale = static_cast<double>(size) / 64.0;
  std::vector<RadiographPair> pairs(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = make_rng(seed, "synth", i);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const auto label = static_cast<ChangeLabel>(i % kNumLabels);
    const double mid = static_cast<double>(size) / 2.0;
    Scene sc;
    sc.tooth_cy = mid + between(-2.0, 2.0) * scale;
    sc.tooth_cx = mid + between(-2.0, 2.0) * scale;
    sc.tooth_ry = between(0.38, 0.44) * static_cast<double>(size);
    sc.tooth_rx = between(0.26, 0.32) * static_cast<double>(size);
    sc.lesion_cy = sc.tooth_cy + between(-3.0, 3.0) * scale;
    sc.lesion_cx = sc.tooth_cx + between(-3.0, 3.0) * scale;
    const double r = between(6.0, 12.0) * scale;
    double u = 1.0;
    switch (label) {
      case ChangeLabel::GettingBetter: u = between(0.3, 0.6); break;
      case ChangeLabel::NoChange: u = between(0.95, 1.05); break;
      case ChangeLabel::GrowingWorse: u = between(1.4, 1.8); break;
    }
    RadiographPair& p = pairs[i];
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05zu", i);
    p.id = id;
    p.label = label;
    p.before = render(size, sc, r, rng);
    p.after = render(size, sc, r * u, rng);
  }
  return pairs;
}

std::size_t dark_pixel_count(const GrayImage& img, double threshold) {
  return static_cast<std::size_t>(std::count_if(img.pixels().begin(), img.pixels().end(), [&](double v) { return v < threshold; }));
}

ChangeLabel radius_ratio_oracle(const RadiographPair& p) {
  const double before = static_cast<double>(dark_pixel_count(p.before));
  const double after = static_cast<double>(dark_pixel_count(p.after));
  if (before == 0.0) return after == 0.0 ? ChangeLabel::NoChange : ChangeLabel::GrowingWorse;
  const double ratio = after / before;
  if (ratio < 0.8) return ChangeLabel::GettingBetter;
  if (ratio > 1.2) return ChangeLabel::GrowingWorse;
  return ChangeLabel::NoChange;
}

// ---------------------------------------------------------------------------
// Splits

std::array<std::size_t, kNumLabels> class_counts(const std::vector<RadiographPair>& pairs) {
  std::array<std::size_t, kNumLabels> counts{};
  for (const auto& p : pairs) ++counts[static_cast<std::size_t>(p.label)];
  return counts;
}

Split split(const std::vector<RadiographPair>& pairs, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw DataError("split: val_fraction must lie in (0,1)");
  std::vector<bool> in_val(pairs.size(), false);
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (static_cast<std::size_t>(pairs[i].label) == c) members.push_back(i);
    }
    if (members.empty()) {
      throw DataError("split: class '" + std::string(label_token(static_cast<ChangeLabel>(c))) + "' has no members");
    }
    auto rng = make_rng(seed, "split", c);
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = std::min<std::size_t>(members.size(), static_cast<std::size_t>(std::lround(static_cast<double>(members.size()) * val_fraction)));
    for (std::size_t k = 0; k < take; ++k) in_val[members[k]] = true;
  }
  Split out;
  for (std::size_t i = 0; i < pairs.size(); ++i) (in_val[i] ? out.val : out.train).push_back(pairs[i]);
  return out;
}

}  // namespace simres
