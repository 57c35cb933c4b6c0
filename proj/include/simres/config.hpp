#pragma once

// Run configuration: a JSON document mirroring the model, training,
// augmentation, feature and data settings. Every key is optional; unknown keys
// are rejected with their dotted path.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "simres/bench.hpp"
#include "simres/harness.hpp"
#include "simres/resnet.hpp"

namespace simres {

struct DataConfig {
  // Manifest path, relative to the config file's directory; empty means a
  // synthetic dataset of synth_count pairs.
  std::string manifest;
  std::size_t synth_count = 300;
  std::size_t image_size = 64;
  double val_fraction = 0.2;
  bool keep_rgb = false;
};

struct BenchSettings {
  std::vector<ModelKind> models = all_model_kinds();
  std::vector<FeatureKind> feature_kinds = all_feature_kinds();
  std::size_t mlp_hidden = 64;
  TrainConfig head = default_head_config();  // seed and augmentation unused
  FeatureParams features;
};

struct RunConfig {
  // Root of every random stream; see the seed_for_* helpers.
  std::uint64_t seed = 0;
  std::string output_dir = "run";  // relative to the working directory
  DataConfig data;
  // input_channels and num_classes come from the data, not the document.
  ResNetConfig model;
  // train.seed is derived from the root seed.
  TrainConfig train;
  BenchSettings bench;

  void validate() const;
};

RunConfig default_run_config();

/// Parses a document. ConfigError names the line for syntax errors and the
/// dotted key for unknown keys or bad values.
RunConfig parse_run_config(std::string_view text, std::string_view source = "config");
/// Reads and parses a file. Paths are kept as written.
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical form: every key present, sorted, two-space indent, trailing
/// newline. dump(parse(dump(c))) == dump(c).
std::string dump_run_config(const RunConfig& cfg);

std::uint64_t seed_for_data(const RunConfig& cfg);
std::uint64_t seed_for_split(const RunConfig& cfg);
std::uint64_t seed_for_model(const RunConfig& cfg);
std::uint64_t seed_for_train(const RunConfig& cfg);

/// Training settings with the derived seed filled in.
TrainConfig effective_train_config(const RunConfig& cfg);
BenchConfig effective_bench_config(const RunConfig& cfg);

}  // namespace simres
