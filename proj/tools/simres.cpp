// Command-line entry point: synthetic data, augmentation preview, features,
// training, evaluation, the benchmark grid, self-verification and config dump.
//
// Exit codes: 0 success, 1 verification failure, 2 I/O, 3 config or usage,
// 4 data (including shape errors raised while running a model).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "simres/bench.hpp"
#include "simres/checkpoint.hpp"
#include "simres/config.hpp"
#include "simres/datapipe.hpp"
#include "simres/harness.hpp"
#include "simres/parallel.hpp"
#include "simres/resnet.hpp"
#include "simres/textio.hpp"
#include "simres/verify.hpp"

using namespace simres;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kIo = 2, kConfig = 3, kData = 4 };

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  if (fs::is_directory(dir, ec)) return;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
}

struct LoadedRun {
  RunConfig cfg;
  fs::path base_dir;  // relative manifest paths resolve against this
};

LoadedRun load_run(const std::string& config_path) {
  if (config_path.empty()) return {default_run_config(), fs::current_path()};
  const fs::path p(config_path);
  return {load_run_config(p), p.has_parent_path() ? p.parent_path() : fs::path(".")};
}

fs::path manifest_path(const LoadedRun& run) {
  fs::path m(run.cfg.data.manifest);
  if (m.is_relative()) m = run.base_dir / m;
  return fs::absolute(m).lexically_normal();
}

std::vector<RadiographPair> load_pairs(const LoadedRun& run) {
  const auto& d = run.cfg.data;
  if (d.manifest.empty()) return synth_generate(d.synth_count, seed_for_data(run.cfg), d.image_size);
  return load_manifest(manifest_path(run), d.keep_rgb);
}

// The configuration stored next to the artifacts, with the manifest path made
// absolute so the checkpoint can be evaluated from any directory.
std::string stored_config(const LoadedRun& run) {
  RunConfig cfg = run.cfg;
  if (!cfg.data.manifest.empty()) cfg.data.manifest = manifest_path(run).string();
  return dump_run_config(cfg);
}

Split load_split(const LoadedRun& run) { return split(load_pairs(run), run.cfg.data.val_fraction, seed_for_split(run.cfg)); }

ResNetConfig model_config(const RunConfig& cfg, const std::vector<RadiographPair>& pairs) {
  ResNetConfig rc = cfg.model;
  rc.input_channels = pairs.front().channels();
  rc.num_classes = kNumLabels;
  return rc;
}

fs::path output_dir(const RunConfig& cfg, const std::string& override_dir) {
  return override_dir.empty() ? fs::path(cfg.output_dir) : fs::path(override_dir);
}

json report_json(const MetricsReport& r) {
  json j;
  j["labels"] = json::array();
  for (std::size_t c = 0; c < kNumLabels; ++c) j["labels"].push_back(std::string(label_token(static_cast<ChangeLabel>(c))));
  j["confusion"] = json::array();
  for (int t = 0; t < 3; ++t) j["confusion"].push_back({r.confusion(t, 0), r.confusion(t, 1), r.confusion(t, 2)});
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["macro_f1"] = r.macro_f1;
  j["accuracy"] = r.accuracy;
  return j;
}

void print_counts(const char* what, const std::vector<RadiographPair>& pairs) {
  const auto counts = class_counts(pairs);
  std::printf("%s: %zu pairs (", what, pairs.size());
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    std::printf("%s%s %zu", c ? ", " : "", std::string(label_token(static_cast<ChangeLabel>(c))).c_str(), counts[c]);
  }
  std::printf(")\n");
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(std::size_t n, std::uint64_t seed, std::size_t size, const std::string& out) {
  const auto pairs = synth_generate(n, seed, size);
  save_dataset(out, pairs);
  print_counts("wrote", pairs);
  std::printf("manifest: %s\n", (fs::path(out) / "manifest.tsv").string().c_str());
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& out_override, bool quiet) {
  const LoadedRun run = load_run(config_path);
  const Split data = load_split(run);
  print_counts("train", data.train);
  print_counts("validation", data.val);
  const fs::path out = output_dir(run.cfg, out_override);
  ensure_directory(out);

  auto model = build_model<float>(model_config(run.cfg, data.train), seed_for_model(run.cfg));
  const TrainConfig tc = effective_train_config(run.cfg);
  const PairData train_set(data.train), val_set(data.val);
  const auto curve = train(model, train_set, val_set, tc, [&](const CurvePoint& p) {
    if (quiet) return;
    std::fprintf(stderr, "epoch %zu/%zu  train_loss %.6f  train_acc %.4f  val_loss %.6f  val_acc %.4f\n", p.epoch, tc.epochs,
                 p.train_loss, p.train_accuracy, p.val_loss, p.val_accuracy);
  });
  const MetricsReport report = evaluate(model, val_set);

  const std::string canonical = stored_config(run);
  write_text_file(out / "config.json", canonical);
  save_checkpoint(out / "model.ckpt", model, canonical);
  export_curves(curve, out / "curves");
  json rj = report_json(report);
  rj["split"] = "validation";
  rj["epochs"] = tc.epochs;
  rj["train_size"] = data.train.size();
  rj["val_size"] = data.val.size();
  rj["final_train_loss"] = curve.back().train_loss;
  write_text_file(out / "report.json", rj.dump(2) + "\n");
  const std::string text = format_report(report);
  write_text_file(out / "report.txt", text);
  std::printf("%s", text.c_str());
  std::printf("artifacts: %s\n", out.string().c_str());
  return kOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, const std::string& which, const std::string& report_path) {
  LoadedRun run;
  if (config_path.empty()) {
    run = {parse_run_config(read_checkpoint_config(checkpoint), checkpoint), fs::current_path()};
  } else {
    run = load_run(config_path);
  }
  const Split data = load_split(run);
  std::vector<RadiographPair> pairs;
  if (which == "train") {
    pairs = data.train;
  } else if (which == "val") {
    pairs = data.val;
  } else {
    pairs = data.train;
    pairs.insert(pairs.end(), data.val.begin(), data.val.end());
  }
  auto model = build_model<float>(model_config(run.cfg, pairs), seed_for_model(run.cfg));
  load_checkpoint(checkpoint, model);
  const MetricsReport report = evaluate(model, PairData(pairs));
  print_counts(which.c_str(), pairs);
  std::printf("%s", format_report(report).c_str());
  if (!report_path.empty()) {
    json rj = report_json(report);
    rj["split"] = which;
    write_text_file(report_path, rj.dump(2) + "\n");
  }
  return kOk;
}

int cmd_bench(const std::string& config_path, const std::string& out_override, bool quiet) {
  const LoadedRun run = load_run(config_path);
  const Split data = load_split(run);
  print_counts("train", data.train);
  print_counts("validation", data.val);
  const fs::path out = output_dir(run.cfg, out_override);
  ensure_directory(out);
  const BenchGrid grid = benchmark_grid(data.train, data.val, effective_bench_config(run.cfg), [&](const std::string& msg) {
    if (!quiet) std::fprintf(stderr, "%s\n", msg.c_str());
  });
  write_text_file(out / "grid.csv", format_grid_csv(grid));
  const std::string text = format_grid_text(grid);
  write_text_file(out / "grid.txt", text);
  std::printf("%s", text.c_str());
  std::printf("artifacts: %s\n", out.string().c_str());
  return kOk;
}

int cmd_features(const std::string& config_path, const std::string& kind_name, const std::string& out_path) {
  const LoadedRun run = load_run(config_path);
  const FeatureKind kind = parse_feature_kind(kind_name);
  const Split data = load_split(run);
  PairFeaturizer fz(kind, run.cfg.bench.features);
  fz.fit(data.train);
  std::string csv = "id,split,label";
  const RowMatrixXd probe = fz.transform({data.train.front()});
  for (Eigen::Index j = 0; j < probe.cols(); ++j) csv += ",f" + std::to_string(j);
  csv += '\n';
  for (const auto* part : {&data.train, &data.val}) {
    const RowMatrixXd x = fz.transform(*part);
    const char* split_name = part == &data.train ? "train" : "val";
    for (std::size_t i = 0; i < part->size(); ++i) {
      csv += (*part)[i].id + "," + split_name + "," + std::string(label_token((*part)[i].label));
      for (Eigen::Index j = 0; j < x.cols(); ++j) csv += "," + format_double(x(static_cast<Eigen::Index>(i), j));
      csv += '\n';
    }
  }
  write_text_file(out_path, csv);
  std::printf("%s: %zu rows x %lld features (%s, fitted on the training split)\n", out_path.c_str(),
              data.train.size() + data.val.size(), static_cast<long long>(probe.cols()), std::string(to_string(kind)).c_str());
  return kOk;
}

int cmd_augment_preview(const std::string& config_path, std::size_t count, std::size_t pair_index, const std::string& out) {
  const LoadedRun run = load_run(config_path);
  const auto pairs = load_pairs(run);
  if (pair_index >= pairs.size()) throw DataError("augment-preview: pair index " + std::to_string(pair_index) + " out of range");
  const auto& p = pairs[pair_index];
  const AugmentPolicy policy = run.cfg.train.augmentation.value_or(AugmentPolicy{});
  policy.validate();
  ensure_directory(out);
  auto rng = make_rng(derive_seed(run.cfg.seed, "augment-preview", policy.seed), "pair", pair_index);
  std::string tsv = "file\thflip\tvflip\tangle_degrees\tbrightness\n";
  write_pgm(fs::path(out) / (p.id + "_orig_before.pgm"), p.before);
  write_pgm(fs::path(out) / (p.id + "_orig_after.pgm"), p.after);
  for (std::size_t k = 0; k < count; ++k) {
    const AugmentTransform t = sample_transform(policy, rng);
    const RadiographPair a = apply_transform(p, t);
    const std::string stem = p.id + "_aug" + std::to_string(k);
    write_pgm(fs::path(out) / (stem + "_before.pgm"), a.before);
    write_pgm(fs::path(out) / (stem + "_after.pgm"), a.after);
    tsv += stem + "\t" + (t.hflip ? "1" : "0") + "\t" + (t.vflip ? "1" : "0") + "\t" + format_double(t.angle_degrees) + "\t" +
           format_double(t.brightness) + "\n";
  }
  write_text_file(fs::path(out) / "transforms.tsv", tsv);
  std::printf("wrote %zu augmented copies of %s to %s\n", count, p.id.c_str(), out.c_str());
  return kOk;
}

int cmd_verify(const std::string& fault) {
  VerifyOptions opts;
  if (fault == "simam-lambda0") opts.simam_lambda = 0.0;
  const auto report = run_verify(opts, [](const CheckResult& c) {
    std::printf("%-4s %-28s %s (%.2f s)\n", c.passed ? "ok" : "FAIL", c.name.c_str(), c.detail.c_str(), c.seconds);
    std::fflush(stdout);
  });
  std::printf("%zu checks in %.1f s\n", report.checks.size(), report.seconds);
  if (report.over_budget) std::fprintf(stderr, "warning: verify took %.1f s, above the %.0f s budget\n", report.seconds, opts.soft_budget_seconds);
  if (!report.passed()) {
    std::printf("failed:");
    for (const auto& name : report.failures()) std::printf(" %s", name.c_str());
    std::printf("\n");
    return kVerifyFailed;
  }
  std::printf("all checks passed\n");
  return kOk;
}

int cmd_config_dump(const std::string& config_path) {
  std::printf("%s", dump_run_config(load_run(config_path).cfg).c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SimAM-ResNet training, evaluation and feature benchmark for before/after radiograph pairs"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads inside ops; results do not depend on it")->check(CLI::PositiveNumber);

  std::string config_path, out_dir, checkpoint, report_path, fault, kind, split_name = "val";
  bool quiet = false;
  std::size_t n = 300, size = 64, count = 8, pair_index = 0;
  std::uint64_t seed = 0;

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset (PGM pairs and manifest.tsv)");
  synth->add_option("-n,--count", n, "Number of pairs")->check(CLI::Range(std::size_t{3}, std::size_t{1} << 24));
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--size", size, "Image side length")->check(CLI::Range(std::size_t{32}, std::size_t{4096}));
  synth->add_option("-o,--out", out_dir, "Output directory (its parent must exist)")->required();

  auto* train_cmd = app.add_subcommand("train", "Train the network; writes checkpoint, curves and reports");
  train_cmd->add_option("-c,--config", config_path, "Run configuration (JSON)");
  train_cmd->add_option("-o,--out", out_dir, "Output directory, overrides output_dir");
  train_cmd->add_flag("-q,--quiet", quiet, "No per-epoch progress on stderr");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  eval_cmd->add_option("-c,--config", config_path, "Run configuration; defaults to the one stored in the checkpoint");
  eval_cmd->add_option("--split", split_name, "Which part of the data to score")->check(CLI::IsMember({"train", "val", "all"}));
  eval_cmd->add_option("--report", report_path, "Also write the report as JSON");

  auto* bench_cmd = app.add_subcommand("bench", "Model x feature macro-F1 grid");
  bench_cmd->add_option("-c,--config", config_path, "Run configuration (JSON)");
  bench_cmd->add_option("-o,--out", out_dir, "Output directory, overrides output_dir");
  bench_cmd->add_flag("-q,--quiet", quiet, "No per-cell progress on stderr");

  auto* feat_cmd = app.add_subcommand("features", "Write pair feature vectors as CSV");
  feat_cmd->add_option("-c,--config", config_path, "Run configuration (JSON)");
  feat_cmd->add_option("-k,--kind", kind, "raw | subsample | histogram | pca | hog | hog+pca")->required();
  feat_cmd->add_option("-o,--out", report_path, "Output CSV")->required();

  auto* aug_cmd = app.add_subcommand("augment-preview", "Write augmented copies of one pair as PGM");
  aug_cmd->add_option("-c,--config", config_path, "Run configuration; its augmentation policy is used if set");
  aug_cmd->add_option("-n,--count", count, "Number of augmented copies");
  aug_cmd->add_option("--pair", pair_index, "Index of the pair in the dataset");
  aug_cmd->add_option("-o,--out", out_dir, "Output directory")->required();

  auto* verify_cmd = app.add_subcommand("verify", "Run the built-in invariant checks");
  verify_cmd->add_option("--inject-fault", fault, "Deliberately break a check to exercise failure reporting")
      ->check(CLI::IsMember({"simam-lambda0"}));

  auto* config_cmd = app.add_subcommand("config", "Configuration utilities");
  config_cmd->require_subcommand(1);
  auto* dump_cmd = config_cmd->add_subcommand("dump", "Print the canonical form of a configuration");
  dump_cmd->add_option("-c,--config", config_path, "Run configuration; defaults when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  set_num_threads(threads);
  configure_allocator();
  try {
    if (*synth) return cmd_synth(n, seed, size, out_dir);
    if (*train_cmd) return cmd_train(config_path, out_dir, quiet);
    if (*eval_cmd) return cmd_eval(config_path, checkpoint, split_name, report_path);
    if (*bench_cmd) return cmd_bench(config_path, out_dir, quiet);
    if (*feat_cmd) return cmd_features(config_path, kind, report_path);
    if (*aug_cmd) return cmd_augment_preview(config_path, count, pair_index, out_dir);
    if (*verify_cmd) return cmd_verify(fault);
    if (*dump_cmd) return cmd_config_dump(config_path);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const TensorError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  }
  return kConfig;
}
