#pragma once

// Classical image descriptors: box subsampling, intensity histograms, PCA and
// HOG. All of it runs in double precision on row-major grayscale images.

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace simres {

/// Row-major grayscale image with pixels in [0, 1].
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(std::size_t height, std::size_t width, std::vector<double> pixels);
  static GrayImage filled(std::size_t height, std::size_t width, double value);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }
  std::span<const double> pixels() const { return pixels_; }
  // Callers that write through this keep values in [0, 1].
  std::span<double> mutable_pixels() { return pixels_; }
  double at(std::size_t y, std::size_t x) const { return pixels_[y * width_ + x]; }
  double& at(std::size_t y, std::size_t x) { return pixels_[y * width_ + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  std::size_t height_ = 0, width_ = 0;
  std::vector<double> pixels_;
};

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Area-average downsampling: output pixel (i, j) is the mean over rows
/// [floor(i*H/oh), floor((i+1)*H/oh)) and the matching column range.
std::vector<double> subsample(const GrayImage& img, std::size_t out_h, std::size_t out_w);

/// Normalised histogram over `bins` uniform bins of [0, 1]; 1.0 lands in the
/// last bin.
std::vector<double> intensity_histogram(const GrayImage& img, std::size_t bins);

struct PCAModel {
  Eigen::VectorXd mean;                // [d]
  RowMatrixXd components;              // [k, d], orthonormal rows
  Eigen::VectorXd explained_variance;  // [k], non-increasing

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t k() const { return static_cast<std::size_t>(components.rows()); }
};

PCAModel pca_fit(const RowMatrixXd& x, std::size_t k);
RowMatrixXd pca_transform(const PCAModel& m, const RowMatrixXd& x);
RowMatrixXd pca_reconstruct(const PCAModel& m, const RowMatrixXd& z);

struct HogSpec {
  std::size_t cell = 8;
  std::size_t bins = 9;
  std::size_t block = 2;
  double eps = 1e-6;

  std::size_t descriptor_length(std::size_t h, std::size_t w) const;
};

/// Per-cell orientation histograms before block normalisation,
/// [cells_y * cells_x * bins] in row-major cell order.
std::vector<double> hog_cells(const GrayImage& img, const HogSpec& spec = {});
std::vector<double> hog(const GrayImage& img, const HogSpec& spec = {});

struct HogPca {
  PCAModel model;
  RowMatrixXd features;  // [n, k]
};

HogPca hog_pca(std::span<const GrayImage> images, std::size_t k, const HogSpec& spec = {});

/// Stacks equal-length vectors as matrix rows.
RowMatrixXd stack_rows(const std::vector<std::vector<double>>& rows);

/// CSV with header f0..f{d-1}; values written in shortest round-trip form.
void write_feature_csv(const std::filesystem::path& path, const RowMatrixXd& features);

}  // namespace simres
