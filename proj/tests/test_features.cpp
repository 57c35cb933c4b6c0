#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "simres/datapipe.hpp"
#include "simres/errors.hpp"
#include "simres/features.hpp"

using namespace simres;

namespace {

GrayImage random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  return GrayImage(h, w, oracle::random_values(h * w, rng, 0.0, 1.0));
}

RowMatrixXd random_matrix(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  RowMatrixXd m(n, d);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = g(rng) * (1.0 + static_cast<double>(j));
  return m;
}

// Sample covariance computed with explicit loops.
Eigen::MatrixXd covariance_oracle(const RowMatrixXd& x) {
  const Eigen::Index n = x.rows(), d = x.cols();
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) mean[j] += x(i, j);
    mean[j] /= static_cast<double>(n);
  }
  Eigen::MatrixXd c(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) acc += (x(i, a) - mean[a]) * (x(i, b) - mean[b]);
      c(a, b) = acc / static_cast<double>(n - 1);
    }
  return c;
}

}  // namespace

TEST(GrayImage, RejectsOutOfRangePixels) {
  EXPECT_THROW(GrayImage(1, 2, {0.5, 1.5}), DataError);
  EXPECT_THROW(GrayImage(2, 2, {0.5}), DataError);
  EXPECT_THROW(GrayImage(0, 2, {}), DataError);
}

TEST(Subsample, IdentityAndConstant) {
  std::mt19937_64 rng(1);
  auto img = random_image(6, 5, rng);
  auto out = subsample(img, 6, 5);
  EXPECT_EQ(out, std::vector<double>(img.pixels().begin(), img.pixels().end()));
  for (double v : subsample(GrayImage::filled(8, 8, 0.3), 3, 2)) EXPECT_DOUBLE_EQ(v, 0.3);
}

TEST(Subsample, CheckerboardBoxMeans) {
  std::vector<double> px(16);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) px[y * 4 + x] = static_cast<double>((x + y) % 2);
  EXPECT_EQ(subsample(GrayImage(4, 4, px), 2, 2), (std::vector<double>{0.5, 0.5, 0.5, 0.5}));
}

TEST(Subsample, NestedPartitionsCompose) {
  std::mt19937_64 rng(2);
  auto img = random_image(64, 64, rng);
  auto mid = subsample(img, 32, 32);
  auto two_step = subsample(GrayImage(32, 32, mid), 16, 16);
  auto direct = subsample(img, 16, 16);
  for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(two_step[i], direct[i], 1e-12);
}

TEST(Subsample, RejectsUpsampling) {
  EXPECT_THROW(subsample(GrayImage::filled(4, 4, 0.0), 5, 4), DataError);
  EXPECT_THROW(subsample(GrayImage::filled(4, 4, 0.0), 0, 4), DataError);
}

TEST(Histogram, Examples) {
  auto h = intensity_histogram(GrayImage::filled(3, 3, 0.3), 10);
  for (std::size_t b = 0; b < 10; ++b) EXPECT_DOUBLE_EQ(h[b], b == 3 ? 1.0 : 0.0);
  std::vector<double> px(16, 0.1);
  std::fill(px.begin() + 8, px.end(), 0.9);
  EXPECT_EQ(intensity_histogram(GrayImage(4, 4, px), 2), (std::vector<double>{0.5, 0.5}));
  auto top = intensity_histogram(GrayImage::filled(1, 1, 1.0), 4);
  EXPECT_EQ(top, (std::vector<double>{0, 0, 0, 1}));
}

TEST(Histogram, SumsToOneAndIgnoresOrder) {
  std::mt19937_64 rng(3);
  auto px = oracle::random_values(400, rng, 0.0, 1.0);
  auto h = intensity_histogram(GrayImage(20, 20, px), 17);
  double s = 0.0;
  for (double v : h) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
  std::shuffle(px.begin(), px.end(), rng);
  EXPECT_EQ(intensity_histogram(GrayImage(20, 20, px), 17), h);
}

TEST(PCA, LineThroughOriginHandOracle) {
  RowMatrixXd x(3, 2);
  x << -1, -2, 0, 0, 1, 2;
  auto m = pca_fit(x, 1);
  EXPECT_NEAR(m.components(0, 0), 1.0 / std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(m.components(0, 1), 2.0 / std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(m.explained_variance(0), 5.0, 1e-12);
}

TEST(PCA, SignConventionHoldsForNegatedData) {
  RowMatrixXd x(3, 2);
  x << 1, 2, 0, 0, -1, -2;
  auto m = pca_fit(x, 1);
  EXPECT_GT(m.components(0, 0), 0.0);
}

TEST(PCA, FullRankRoundTrip) {
  std::mt19937_64 rng(4);
  auto x = random_matrix(12, 5, rng);
  auto m = pca_fit(x, 5);
  auto back = pca_reconstruct(m, pca_transform(m, x));
  EXPECT_LT((back - x).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(PCA, OrthonormalAndVariancesMatchCovarianceOracle) {
  std::mt19937_64 rng(5);
  auto x = random_matrix(40, 7, rng);
  auto m = pca_fit(x, 4);
  const Eigen::MatrixXd gram = m.components * m.components.transpose();
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  for (Eigen::Index i = 1; i < 4; ++i) EXPECT_GE(m.explained_variance(i - 1), m.explained_variance(i));
  const Eigen::MatrixXd cz = covariance_oracle(pca_transform(m, x));
  for (Eigen::Index a = 0; a < 4; ++a)
    for (Eigen::Index b = 0; b < 4; ++b) {
      if (a == b) EXPECT_NEAR(cz(a, a), m.explained_variance(a), 1e-8);
      else EXPECT_NEAR(cz(a, b), 0.0, 1e-6);
    }
  // each component is an eigenvector of the oracle covariance
  const Eigen::MatrixXd c = covariance_oracle(x);
  for (Eigen::Index r = 0; r < 4; ++r) {
    const Eigen::VectorXd v = m.components.row(r).transpose();
    EXPECT_LT((c * v - m.explained_variance(r) * v).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(PCA, ReconstructionErrorNonIncreasingInK) {
  std::mt19937_64 rng(6);
  auto x = random_matrix(30, 8, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= 8; ++k) {
    auto m = pca_fit(x, k);
    const double err = (pca_reconstruct(m, pca_transform(m, x)) - x).norm();
    EXPECT_LE(err, prev + 1e-12);
    prev = err;
  }
  EXPECT_LT(prev, 1e-8);
}

TEST(PCA, Errors) {
  RowMatrixXd one(1, 3);
  one << 1, 2, 3;
  EXPECT_THROW(pca_fit(one, 1), DataError);
  RowMatrixXd x(4, 3);
  x.setRandom();
  EXPECT_THROW(pca_fit(x, 4), DataError);
  EXPECT_THROW(pca_fit(x, 0), DataError);
  RowMatrixXd flat = RowMatrixXd::Constant(5, 3, 0.25);
  try {
    pca_fit(flat, 1);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("rank deficient below k"), std::string::npos);
  }
  auto m = pca_fit(x, 2);
  EXPECT_THROW(pca_transform(m, RowMatrixXd::Zero(2, 4)), DataError);
  EXPECT_LT(pca_transform(m, m.mean.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(HOG, ConstantImageAndLengths) {
  for (double v : hog(GrayImage::filled(32, 32, 0.4))) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(hog(GrayImage::filled(16, 16, 0.0)).size(), 36u);
  EXPECT_EQ(hog(GrayImage::filled(64, 64, 0.0)).size(), 1764u);
  EXPECT_EQ(HogSpec{}.descriptor_length(64, 64), 1764u);
  EXPECT_THROW(hog(GrayImage::filled(20, 16, 0.0)), DataError);
}

TEST(HOG, MatchesScalarReference) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto px = oracle::random_values(64 * 64, rng, 0.0, 1.0);
    auto got = hog(GrayImage(64, 64, px));
    auto want = oracle::hog(px, 64, 64);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-10) << "trial " << trial << " i " << i;
  }
}

TEST(HOG, GradientLinearity) {
  std::mt19937_64 rng(8);
  auto px = oracle::random_values(32 * 32, rng, 0.0, 0.5);
  const GrayImage img(32, 32, px);
  const auto base_cells = hog_cells(img);
  const auto base = hog(img);
  for (double c : {0.5, 0.75, 1.5, 2.0}) {
    std::vector<double> scaled(px);
    for (double& v : scaled) v *= c;
    const GrayImage s(32, 32, scaled);
    const auto cells = hog_cells(s);
    for (std::size_t i = 0; i < cells.size(); ++i) EXPECT_NEAR(cells[i], c * base_cells[i], 1e-12 * (1.0 + std::abs(cells[i])));
    const auto d = hog(s);
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], base[i], 1e-3);
  }
}

TEST(HogPca, Examples) {
  std::vector<GrayImage> same(3, GrayImage::filled(16, 16, 0.5));
  same[0].at(3, 3) = 0.9;
  same[1] = same[0];
  same[2] = same[0];
  try {
    hog_pca(same, 1);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("rank deficient below k"), std::string::npos);
  }
  std::mt19937_64 rng(9);
  std::vector<GrayImage> two{random_image(16, 16, rng), random_image(16, 16, rng)};
  auto r = hog_pca(two, 1);
  EXPECT_EQ(r.features.rows(), 2);
  EXPECT_EQ(r.features.cols(), 1);
}

TEST(HogPca, SyntheticVariancesNonIncreasing) {
  auto pairs = synth_generate(20, 11);
  std::vector<GrayImage> imgs;
  for (const auto& p : pairs) imgs.push_back(p.before);
  auto r = hog_pca(imgs, 5);
  const Eigen::MatrixXd c = covariance_oracle(r.features);
  for (Eigen::Index i = 1; i < 5; ++i) EXPECT_GE(c(i - 1, i - 1), c(i, i) - 1e-12);
}

TEST(FeatureCsv, HeaderAndRoundTrip) {
  RowMatrixXd m(2, 3);
  m << 0.1, -2.5e-17, 3.0, 1.0 / 3.0, 0, 7;
  const auto path = std::filesystem::temp_directory_path() / "simres_features_test.csv";
  write_feature_csv(path, m);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "f0,f1,f2");
  for (Eigen::Index i = 0; i < 2; ++i) {
    std::string line;
    std::getline(in, line);
    std::stringstream ss(line);
    std::string cell;
    for (Eigen::Index j = 0; j < 3; ++j) {
      std::getline(ss, cell, ',');
      EXPECT_EQ(std::stod(cell), m(i, j));
    }
  }
  std::filesystem::remove(path);
}
