#pragma once

// Model x feature benchmark grid of validation macro-F1 scores.
//
// Protocols:
//   CNN rows, raw column   the network trains end to end on the image pair.
//   CNN rows, feature f    the trained network is frozen; its pooled embedding
//                          concatenated with the pair's f-features feeds an MLP
//                          head.
//   MLP rows               an MLP on the pair's f-features; raw means the
//                          flattened pixels of both images.
// Pair features concatenate the before and after vectors and are z-scored
// with statistics of the training split.

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "simres/datapipe.hpp"
#include "simres/features.hpp"
#include "simres/harness.hpp"
#include "simres/resnet.hpp"

namespace simres {

enum class FeatureKind { raw, subsample, histogram, pca, hog, hog_pca };
enum class ModelKind { resnet_simam, resnet_plain, mlp };

std::string_view to_string(FeatureKind f);
std::string_view to_string(ModelKind m);
FeatureKind parse_feature_kind(std::string_view s);
ModelKind parse_model_kind(std::string_view s);

const std::vector<FeatureKind>& all_feature_kinds();
const std::vector<ModelKind>& all_model_kinds();

struct FeatureParams {
  std::size_t subsample_extent = 8;  // per image, square
  std::size_t histogram_bins = 16;
  std::size_t pca_components = 16;
  HogSpec hog;

  void validate() const;
};

/// Turns pairs into fixed-length vectors. Kinds with learned state (pca,
/// hog_pca) fit on the pairs passed to fit().
class PairFeaturizer {
 public:
  PairFeaturizer(FeatureKind kind, FeatureParams params) : kind_(kind), params_(std::move(params)) {}

  void fit(const std::vector<RadiographPair>& pairs);
  RowMatrixXd transform(const std::vector<RadiographPair>& pairs) const;

 private:
  std::vector<double> image_features(const GrayImage& img) const;

  FeatureKind kind_;
  FeatureParams params_;
  std::optional<PCAModel> pca_;
};

/// Column-wise z-scoring; zero-variance columns are centred only.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const RowMatrixXd& x);
  RowMatrixXd apply(const RowMatrixXd& x) const;
};

/// Training settings for the MLP rows and heads: 100 epochs, batch 32,
/// otherwise the TrainConfig defaults.
TrainConfig default_head_config();

struct BenchConfig {
  ResNetConfig resnet;  // resnet_plain uses the same network with SimAM off
  TrainConfig cnn;
  TrainConfig head = default_head_config();
  std::size_t mlp_hidden = 64;
  FeatureParams features;
  std::uint64_t seed = 0;
  std::vector<ModelKind> models = all_model_kinds();
  std::vector<FeatureKind> feature_kinds = all_feature_kinds();

  void validate() const;
};

struct BenchGrid {
  std::vector<ModelKind> models;
  std::vector<FeatureKind> feature_kinds;
  std::vector<std::vector<double>> macro_f1;       // [model][feature]
  std::vector<std::vector<std::string>> protocol;  // [model][feature]
  std::string caption;
};

using ProgressFn = std::function<void(const std::string&)>;

BenchGrid benchmark_grid(const std::vector<RadiographPair>& train_pairs, const std::vector<RadiographPair>& val_pairs,
                         const BenchConfig& cfg, const ProgressFn& progress = {});

std::string format_grid_text(const BenchGrid& grid);
/// Header "model,<feature kinds>", one row per model kind.
std::string format_grid_csv(const BenchGrid& grid);

}  // namespace simres
