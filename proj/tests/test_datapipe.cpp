#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "simres/datapipe.hpp"
#include "simres/textio.hpp"

using namespace simres;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("simres_dp_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

double mass(const GrayImage& img) {
  double s = 0.0;
  for (double v : img.pixels()) s += v;
  return s;
}

GrayImage random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  return GrayImage(h, w, oracle::random_values(h * w, rng, 0.0, 1.0));
}

}  // namespace

TEST(Labels, TokensRoundTrip) {
  for (auto l : {ChangeLabel::GettingBetter, ChangeLabel::NoChange, ChangeLabel::GrowingWorse}) {
    EXPECT_EQ(parse_label(label_token(l)), l);
  }
  EXPECT_THROW(parse_label("improving"), DataError);
}

TEST(Pgm, RoundTripIsExactOnQuantisedValues) {
  TempDir dir;
  std::vector<double> px(12);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(i * 20) / 255.0;
  const GrayImage img(3, 4, px);
  write_pgm(dir.path() / "a.pgm", img);
  EXPECT_EQ(read_pnm(dir.path() / "a.pgm"), img);
}

TEST(Pgm, ReadsCommentsAndPpm) {
  TempDir dir;
  std::string p5 = "P5\n# comment\n2 1\n255\n";
  p5 += static_cast<char>(0);
  p5 += static_cast<char>(255);
  write_binary_file(dir.path() / "c.pgm", p5);
  auto g = read_pnm(dir.path() / "c.pgm");
  EXPECT_EQ(g.at(0, 0), 0.0);
  EXPECT_EQ(g.at(0, 1), 1.0);

  std::string p6 = "P6 1 1 255\n";
  p6 += static_cast<char>(30);
  p6 += static_cast<char>(60);
  p6 += static_cast<char>(90);
  write_binary_file(dir.path() / "c.ppm", p6);
  std::vector<GrayImage> planes;
  auto m = read_pnm(dir.path() / "c.ppm", &planes);
  EXPECT_NEAR(m.at(0, 0), 60.0 / 255.0, 1e-15);
  ASSERT_EQ(planes.size(), 3u);
  EXPECT_EQ(planes[2].at(0, 0), 90.0 / 255.0);

  write_binary_file(dir.path() / "bad.pgm", "P2\n1 1\n255\n0\n");
  EXPECT_THROW(read_pnm(dir.path() / "bad.pgm"), DataError);
  write_binary_file(dir.path() / "short.pgm", "P5\n4 4\n255\nab");
  EXPECT_THROW(read_pnm(dir.path() / "short.pgm"), DataError);
}

TEST(Manifest, LoadPreservesOrder) {
  TempDir dir;
  auto pairs = synth_generate(3, 5, 32);
  std::reverse(pairs.begin(), pairs.end());
  save_dataset(dir.path(), pairs);
  auto loaded = load_manifest(dir.path() / "manifest.tsv");
  ASSERT_EQ(loaded.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[i].id, pairs[i].id);
    EXPECT_EQ(loaded[i].label, pairs[i].label);
    EXPECT_EQ(loaded[i].before.height(), 32u);
  }
}

TEST(Manifest, ErrorsNameTheLine) {
  TempDir dir;
  auto pairs = synth_generate(3, 5, 32);
  save_dataset(dir.path(), pairs);
  write_text_file(dir.path() / "m.tsv", "a\tsynth_00000_before.pgm\tsynth_00000_after.pgm\tbetter\n"
                                        "b\tsynth_00001_before.pgm\tsynth_00001_after.pgm\timproving\n");
  try {
    load_manifest(dir.path() / "m.tsv");
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("m.tsv:2:"), std::string::npos) << msg;
    EXPECT_NE(msg.find("improving"), std::string::npos) << msg;
  }
  write_text_file(dir.path() / "dup.tsv", "a\tx\ty\tbetter\na\tx\ty\tworse\n");
  EXPECT_THROW(read_manifest(dir.path() / "dup.tsv"), DataError);
  write_text_file(dir.path() / "missing.tsv", "a\tnope.pgm\tnope.pgm\tbetter\n");
  EXPECT_THROW(load_manifest(dir.path() / "missing.tsv"), IoError);
  EXPECT_THROW(load_manifest(dir.path() / "absent.tsv"), IoError);
}

TEST(Manifest, ExtentMismatchIsAnError) {
  TempDir dir;
  write_pgm(dir.path() / "big.pgm", GrayImage::filled(64, 64, 0.5));
  write_pgm(dir.path() / "small.pgm", GrayImage::filled(32, 32, 0.5));
  write_text_file(dir.path() / "m.tsv", "p\tbig.pgm\tsmall.pgm\tnochange\n");
  EXPECT_THROW(load_manifest(dir.path() / "m.tsv"), DataError);
}

TEST(ModelInput, ChannelsAreBeforeThenAfter) {
  RadiographPair p{"p", GrayImage::filled(4, 5, 0.2), GrayImage::filled(4, 5, 0.8), ChangeLabel::NoChange, {}, {}};
  auto t = to_model_input<double>(p);
  EXPECT_EQ(t.shape(), (Shape{2, 4, 5}));
  EXPECT_DOUBLE_EQ(t[0], 0.2);
  EXPECT_DOUBLE_EQ(t[20], 0.8);
  std::swap(p.before, p.after);
  auto s = to_model_input<double>(p);
  EXPECT_DOUBLE_EQ(s[0], 0.8);
  EXPECT_DOUBLE_EQ(s[20], 0.2);
  std::vector<RadiographPair> v{p, p};
  const std::vector<std::size_t> idx{1, 0};
  EXPECT_EQ(batch_input<float>(v, idx).shape(), (Shape{2, 2, 4, 5}));
}

TEST(Augment, AlgebraOnRandomImages) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto img = random_image(17, 23, rng);
    EXPECT_EQ(apply_transform(img, AugmentTransform{}), img);
    AugmentTransform h{true, false, 0.0, 1.0}, v{false, true, 0.0, 1.0};
    EXPECT_EQ(apply_transform(apply_transform(img, h), h), img);
    EXPECT_EQ(apply_transform(apply_transform(img, v), v), img);
  }
}

TEST(Augment, BrightnessClamps) {
  auto out = apply_transform(GrayImage::filled(4, 4, 0.9), AugmentTransform{false, false, 0.0, 1.2});
  for (double v : out.pixels()) EXPECT_EQ(v, 1.0);
}

TEST(Augment, FlipsMoveThePixelWeExpect) {
  std::vector<double> px{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  const GrayImage img(2, 3, px);
  auto h = apply_transform(img, AugmentTransform{true, false, 0.0, 1.0});
  EXPECT_EQ(h.at(0, 0), 0.3);
  auto v = apply_transform(img, AugmentTransform{false, true, 0.0, 1.0});
  EXPECT_EQ(v.at(0, 0), 0.4);
}

TEST(Augment, NinetyDegreeRotationPermutesPixels) {
  std::mt19937_64 rng(4);
  auto img = random_image(9, 9, rng);
  auto r = apply_transform(img, AugmentTransform{false, false, 90.0, 1.0});
  std::vector<double> a(img.pixels().begin(), img.pixels().end()), b(r.pixels().begin(), r.pixels().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Augment, MassPreservedForInteriorContent) {
  auto pairs = synth_generate(6, 2, 64);
  std::mt19937_64 rng(5);
  AugmentPolicy policy;
  policy.brightness_min = policy.brightness_max = 1.0;
  for (const auto& p : pairs) {
    for (int k = 0; k < 10; ++k) {
      auto t = sample_transform(policy, rng);
      const double m0 = mass(p.before), m1 = mass(apply_transform(p.before, t));
      EXPECT_NEAR(m1 / m0, 1.0, 0.02);
    }
  }
}

TEST(Augment, RandomDrawsPreserveLabelExtentsAndRange) {
  auto pairs = synth_generate(9, 6, 32);
  AugmentPolicy policy;
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i) % pairs.size()];
    auto a = augment(p, policy, rng);
    ASSERT_EQ(a.label, p.label);
    ASSERT_EQ(a.before.height(), p.before.height());
    ASSERT_EQ(a.after.width(), p.after.width());
    for (double v : a.before.pixels()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Augment, SameTransformOnBothImages) {
  RadiographPair p{"p", GrayImage::filled(8, 8, 0.5), GrayImage::filled(8, 8, 0.5), ChangeLabel::NoChange, {}, {}};
  p.before.at(1, 2) = 0.9;
  p.after.at(1, 2) = 0.9;
  AugmentPolicy policy;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    auto a = augment(p, policy, rng);
    EXPECT_EQ(a.before, a.after);
  }
}

TEST(Augment, PolicyValidation) {
  AugmentPolicy p;
  EXPECT_NO_THROW(p.validate());
  p.hflip_prob = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p = AugmentPolicy{};
  p.brightness_min = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = AugmentPolicy{};
  p.rotation_degrees.clear();
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Synth, BalancedAndDeterministic) {
  auto a = synth_generate(300, 7);
  auto counts = class_counts(a);
  for (auto c : counts) EXPECT_EQ(c, 100u);
  auto b = synth_generate(300, 7);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].before, b[i].before);
    ASSERT_EQ(a[i].after, b[i].after);
  }
  auto c = synth_generate(300, 8);
  EXPECT_NE(a[0].before, c[0].before);
  EXPECT_THROW(synth_generate(2, 7), DataError);
  auto odd = class_counts(synth_generate(7, 1));
  EXPECT_LE(*std::max_element(odd.begin(), odd.end()) - *std::min_element(odd.begin(), odd.end()), 1u);
}

TEST(Synth, BetterPairsShrinkAndOracleSeparates) {
  for (std::size_t size : {32u, 64u}) {
    auto pairs = synth_generate(300, 7, size);
    std::size_t correct = 0;
    for (const auto& p : pairs) {
      if (p.label == ChangeLabel::GettingBetter) {
        EXPECT_LT(dark_pixel_count(p.after), dark_pixel_count(p.before));
      }
      if (radius_ratio_oracle(p) == p.label) ++correct;
    }
    EXPECT_GE(static_cast<double>(correct) / 300.0, 0.99) << "size " << size;
  }
}

TEST(Split, StratifiedDisjointDeterministic) {
  auto pairs = synth_generate(300, 7, 32);
  auto s = split(pairs, 0.2, 1);
  EXPECT_EQ(s.train.size(), 240u);
  EXPECT_EQ(s.val.size(), 60u);
  for (auto c : class_counts(s.val)) EXPECT_EQ(c, 20u);
  std::set<std::string> ids;
  for (const auto& p : s.train) ids.insert(p.id);
  for (const auto& p : s.val) EXPECT_EQ(ids.count(p.id), 0u);
  EXPECT_EQ(ids.size() + s.val.size(), 300u);
  auto again = split(pairs, 0.2, 1);
  for (std::size_t i = 0; i < s.val.size(); ++i) EXPECT_EQ(again.val[i].id, s.val[i].id);
  auto other = split(pairs, 0.2, 2);
  bool differs = false;
  for (std::size_t i = 0; i < s.val.size(); ++i) differs |= other.val[i].id != s.val[i].id;
  EXPECT_TRUE(differs);
}

TEST(Split, EmptyClassIsAnError) {
  auto pairs = synth_generate(3, 1, 32);
  pairs.erase(pairs.begin());
  EXPECT_THROW(split(pairs, 0.5, 1), DataError);
  EXPECT_THROW(split(synth_generate(3, 1, 32), 1.0, 1), DataError);
}
