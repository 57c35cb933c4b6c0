#include "simres/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "simres/errors.hpp"
#include "simres/textio.hpp"

namespace simres {

GrayImage::GrayImage(std::size_t height, std::size_t width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height == 0 || width == 0) throw DataError("image: extents must be positive");
  if (pixels_.size() != height * width) {
    throw DataError("image: " + std::to_string(pixels_.size()) + " pixels for " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
  for (double v : pixels_) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("image: pixel value outside [0,1]");
  }
}

GrayImage GrayImage::filled(std::size_t height, std::size_t width, double value) {
  return GrayImage(height, width, std::vector<double>(height * width, value));
}

std::vector<double> subsample(const GrayImage& img, std::size_t out_h, std::size_t out_w) {
  const std::size_t h = img.height(), w = img.width();
  if (out_h < 1 || out_w < 1) throw DataError("subsample: output extents must be >= 1");
  if (out_h > h || out_w > w) {
    throw DataError("subsample: cannot upsample " + std::to_string(h) + "x" + std::to_string(w) + " to " +
                    std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  std::vector<double> out(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t y0 = i * h / out_h, y1 = (i + 1) * h / out_h;
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t x0 = j * w / out_w, x1 = (j + 1) * w / out_w;
      double acc = 0.0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) acc += img.at(y, x);
      out[i * out_w + j] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

std::vector<double> intensity_histogram(const GrayImage& img, std::size_t bins) {
  if (bins < 1) throw DataError("intensity_histogram: bins must be >= 1");
  std::vector<std::size_t> counts(bins, 0);
  for (double v : img.pixels()) {
    const auto b = static_cast<std::size_t>(std::floor(v * static_cast<double>(bins)));
    ++counts[std::min(b, bins - 1)];
  }
  std::vector<double> out(bins);
  const double n = static_cast<double>(img.size());
  for (std::size_t b = 0; b < bins; ++b) out[b] = static_cast<double>(counts[b]) / n;
  return out;
}

// ---------------------------------------------------------------------------
// PCA

PCAModel pca_fit(const RowMatrixXd& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows()), d = static_cast<std::size_t>(x.cols());
  if (n < 2) throw DataError("pca_fit: need at least 2 samples, got " + std::to_string(n));
  if (k < 1 || k > std::min(n - 1, d)) {
    throw DataError("pca_fit: k = " + std::to_string(k) + " outside [1, " + std::to_string(std::min(n - 1, d)) + "]");
  }
  if (!x.allFinite()) throw DataError("pca_fit: non-finite input");
  PCAModel m;
  m.mean = x.colwise().mean().transpose();
  const RowMatrixXd centered = x.rowwise() - m.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double tol = static_cast<double>(std::max(n, d)) * std::numeric_limits<double>::epsilon() * (s.size() ? s(0) : 0.0);
  if (s.size() < static_cast<Eigen::Index>(k) || !(s(static_cast<Eigen::Index>(k) - 1) > tol)) {
    throw DataError("pca_fit: rank deficient below k = " + std::to_string(k));
  }
  const auto kk = static_cast<Eigen::Index>(k);
  m.components = svd.matrixV().leftCols(kk).transpose();
  for (Eigen::Index r = 0; r < kk; ++r) {
    auto row = m.components.row(r);
    const double peak = row.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      if (std::abs(row(j)) > 1e-12 * peak) {
        if (row(j) < 0) row = -row;
        break;
      }
    }
  }
  m.explained_variance = s.head(kk).array().square() / static_cast<double>(n - 1);
  return m;
}

RowMatrixXd pca_transform(const PCAModel& m, const RowMatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != m.dim()) {
    throw DataError("pca_transform: input has " + std::to_string(x.cols()) + " columns, model expects " + std::to_string(m.dim()));
  }
  return (x.rowwise() - m.mean.transpose()) * m.components.transpose();
}

RowMatrixXd pca_reconstruct(const PCAModel& m, const RowMatrixXd& z) {
  if (static_cast<std::size_t>(z.cols()) != m.k()) throw DataError("pca_reconstruct: code width does not match k");
  return (z * m.components).rowwise() + m.mean.transpose();
}

// ---------------------------------------------------------------------------
// HOG

std::size_t HogSpec::descriptor_length(std::size_t h, std::size_t w) const {
  const std::size_t cy = h / cell, cx = w / cell;
  if (cy < block || cx < block) return 0;
  return (cy - block + 1) * (cx - block + 1) * block * block * bins;
}

namespace {

void check_hog_input(const GrayImage& img, const HogSpec& spec) {
  if (spec.cell < 1 || spec.bins < 1 || spec.block < 1) throw DataError("hog: cell, bins and block must be positive");
  if (img.height() % spec.cell != 0 || img.width() % spec.cell != 0) {
    throw DataError("hog: image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                    " not divisible by cell " + std::to_string(spec.cell));
  }
  if (img.height() / spec.cell < spec.block || img.width() / spec.cell < spec.block) {
    throw DataError("hog: image smaller than one block");
  }
}

}  // namespace

std::vector<double> hog_cells(const GrayImage& img, const HogSpec& spec) {
  check_hog_input(img, spec);
  const std::size_t h = img.height(), w = img.width();
  const std::size_t cx = w / spec.cell;
  const double bin_width = 180.0 / static_cast<double>(spec.bins);
  std::vector<double> cells((h / spec.cell) * cx * spec.bins, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t up = y == 0 ? 0 : y - 1, down = std::min(y + 1, h - 1);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t left = x == 0 ? 0 : x - 1, right = std::min(x + 1, w - 1);
      const double gx = img.at(y, right) - img.at(y, left);
      const double gy = img.at(down, x) - img.at(up, x);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      // unsigned orientation in [0, 180)
      double angle = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (angle < 0.0) angle += 180.0;
      if (angle >= 180.0) angle -= 180.0;
      // split between the two nearest bin centres, wrapping at 180
      const double pos = angle / bin_width - 0.5;
      const double base = std::floor(pos);
      const double upper_share = pos - base;
      const auto nb = static_cast<long>(spec.bins);
      const long lo = (static_cast<long>(base) + nb) % nb;
      const long hi = (lo + 1) % nb;
      double* hist = cells.data() + ((y / spec.cell) * cx + x / spec.cell) * spec.bins;
      hist[lo] += (1.0 - upper_share) * mag;
      hist[hi] += upper_share * mag;
    }
  }
  return cells;
}

std::vector<double> hog(const GrayImage& img, const HogSpec& spec) {
  const std::vector<double> cells = hog_cells(img, spec);
  const std::size_t cy = img.height() / spec.cell, cx = img.width() / spec.cell;
  const std::size_t block_len = spec.block * spec.block * spec.bins;
  std::vector<double> out;
  out.reserve(spec.descriptor_length(img.height(), img.width()));
  std::vector<double> block(block_len);
  for (std::size_t by = 0; by + spec.block <= cy; ++by) {
    for (std::size_t bx = 0; bx + spec.block <= cx; ++bx) {
      std::size_t k = 0;
      for (std::size_t dy = 0; dy < spec.block; ++dy)
        for (std::size_t dx = 0; dx < spec.block; ++dx) {
          const double* hist = cells.data() + ((by + dy) * cx + bx + dx) * spec.bins;
          for (std::size_t b = 0; b < spec.bins; ++b) block[k++] = hist[b];
        }
      double sq = 0.0;
      for (double v : block) sq += v * v;
      const double scale = 1.0 / std::sqrt(sq + spec.eps * spec.eps);
      for (double v : block) out.push_back(v * scale);
    }
  }
  return out;
}

RowMatrixXd stack_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DataError("stack_rows: no rows");
  const std::size_t d = rows.front().size();
  RowMatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != d) throw DataError("stack_rows: row " + std::to_string(r) + " has a different length");
    m.row(static_cast<Eigen::Index>(r)) = Eigen::Map<const Eigen::RowVectorXd>(rows[r].data(), static_cast<Eigen::Index>(d));
  }
  return m;
}

HogPca hog_pca(std::span<const GrayImage> images, std::size_t k, const HogSpec& spec) {
  if (images.size() < 2) throw DataError("hog_pca: need at least 2 images");
  std::vector<std::vector<double>> rows;
  rows.reserve(images.size());
  for (const auto& img : images) rows.push_back(hog(img, spec));
  const RowMatrixXd descriptors = stack_rows(rows);
  HogPca out;
  out.model = pca_fit(descriptors, k);
  out.features = pca_transform(out.model, descriptors);
  return out;
}

void write_feature_csv(const std::filesystem::path& path, const RowMatrixXd& features) {
  std::string text;
  for (Eigen::Index j = 0; j < features.cols(); ++j) text += (j ? ",f" : "f") + std::to_string(j);
  text += '\n';
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      if (j) text += ',';
      text += format_double(features(i, j));
    }
    text += '\n';
  }
  write_text_file(path, text);
}

}  // namespace simres
