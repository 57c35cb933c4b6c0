#include "simres/config.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <set>

#include "json.hpp"

#include "simres/textio.hpp"

namespace simres {

using nlohmann::json;

namespace {

// Object view that rejects keys outside the allowed set up front.
class Obj {
 public:
  Obj(const json& j, std::string path, std::initializer_list<const char*> allowed) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + where() + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& item : j_.items()) {
      if (!ok.count(item.key())) throw ConfigError("config: unknown key '" + key_path(item.key()) + "'");
    }
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const char* key) const {
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get(const char* key, T& out) const {
    if (const json* v = find(key)) out = as<T>(*v, key_path(key));
  }

  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) const {
    if (const json* v = find(key)) {
      const auto s = as<std::string>(*v, key_path(key));
      try {
        out = parse(s);
      } catch (const std::exception& e) {
        throw ConfigError("config: " + key_path(key) + ": " + e.what());
      }
    }
  }

  template <typename T>
  static T as(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("config: " + path + " must be true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("config: " + path + " must be a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError("config: " + path + " must be a non-negative integer");
      return v.get<T>();
    } else {
      if (!v.is_number()) throw ConfigError("config: " + path + " must be a number");
      return v.get<T>();
    }
  }

 private:
  std::string where() const { return path_.empty() ? "document" : "'" + path_ + "'"; }

  const json& j_;
  std::string path_;
};

const json& array_at(const Obj& o, const char* key, const std::string& path) {
  const json* v = o.find(key);
  if (!v->is_array()) throw ConfigError("config: " + path + " must be an array");
  return *v;
}

template <typename T, typename Parse>
std::vector<T> enum_list(const Obj& o, const char* key, Parse parse) {
  const std::string path = o.key_path(key);
  std::vector<T> out;
  for (const auto& e : array_at(o, key, path)) {
    const auto s = Obj::as<std::string>(e, path + "[]");
    try {
      out.push_back(parse(s));
    } catch (const std::exception& ex) {
      throw ConfigError("config: " + path + ": " + ex.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Readers

AugmentPolicy read_augment(const json& j, const std::string& path) {
  const Obj o(j, path, {"hflip_prob", "vflip_prob", "rotation_degrees", "brightness_min", "brightness_max", "seed"});
  AugmentPolicy a;
  o.get("hflip_prob", a.hflip_prob);
  o.get("vflip_prob", a.vflip_prob);
  if (o.find("rotation_degrees")) {
    const std::string p = o.key_path("rotation_degrees");
    a.rotation_degrees.clear();
    for (const auto& e : array_at(o, "rotation_degrees", p)) a.rotation_degrees.push_back(Obj::as<double>(e, p + "[]"));
  }
  o.get("brightness_min", a.brightness_min);
  o.get("brightness_max", a.brightness_max);
  o.get("seed", a.seed);
  return a;
}

void read_train(const json& j, const std::string& path, TrainConfig& t, bool with_augmentation) {
  std::initializer_list<const char*> keys = {"epochs", "batch_size", "lr", "lr_floor", "momentum", "weight_decay", "grad_clip_norm",
                                             "augmentation"};
  std::initializer_list<const char*> head_keys = {"epochs", "batch_size", "lr", "lr_floor", "momentum", "weight_decay",
                                                  "grad_clip_norm"};
  const Obj o(j, path, with_augmentation ? keys : head_keys);
  o.get("epochs", t.epochs);
  o.get("batch_size", t.batch_size);
  o.get("lr", t.lr);
  o.get("lr_floor", t.lr_floor);
  o.get("momentum", t.momentum);
  o.get("weight_decay", t.weight_decay);
  o.get("grad_clip_norm", t.grad_clip_norm);
  if (const json* a = o.find("augmentation")) {
    if (a->is_null()) {
      t.augmentation.reset();
    } else {
      t.augmentation = read_augment(*a, o.key_path("augmentation"));
    }
  }
}

void read_model(const json& j, ResNetConfig& m) {
  const Obj o(j, "model", {"stem", "width_mult", "blocks_per_stage", "post_add_relu", "simam"});
  o.get_enum("stem", m.stem, parse_stem);
  o.get("width_mult", m.width_mult);
  if (o.find("blocks_per_stage")) {
    const std::string p = o.key_path("blocks_per_stage");
    const json& arr = array_at(o, "blocks_per_stage", p);
    if (arr.size() != m.blocks_per_stage.size()) throw ConfigError("config: " + p + " must list 4 stage block counts");
    for (std::size_t i = 0; i < arr.size(); ++i) m.blocks_per_stage[i] = Obj::as<std::size_t>(arr[i], p + "[]");
  }
  o.get("post_add_relu", m.post_add_relu);
  if (const json* s = o.find("simam")) {
    const Obj so(*s, "model.simam", {"lambda", "placement"});
    so.get("lambda", m.simam.lambda);
    so.get_enum("placement", m.simam.placement, parse_placement);
  }
}

void read_bench(const json& j, BenchSettings& b) {
  const Obj o(j, "bench", {"models", "features", "mlp_hidden", "head", "feature_params"});
  if (o.find("models")) b.models = enum_list<ModelKind>(o, "models", parse_model_kind);
  if (o.find("features")) b.feature_kinds = enum_list<FeatureKind>(o, "features", parse_feature_kind);
  o.get("mlp_hidden", b.mlp_hidden);
  if (const json* h = o.find("head")) read_train(*h, "bench.head", b.head, false);
  if (const json* f = o.find("feature_params")) {
    const Obj fo(*f, "bench.feature_params", {"subsample_extent", "histogram_bins", "pca_components", "hog"});
    fo.get("subsample_extent", b.features.subsample_extent);
    fo.get("histogram_bins", b.features.histogram_bins);
    fo.get("pca_components", b.features.pca_components);
    if (const json* h = fo.find("hog")) {
      const Obj ho(*h, "bench.feature_params.hog", {"cell", "bins", "block", "eps"});
      ho.get("cell", b.features.hog.cell);
      ho.get("bins", b.features.hog.bins);
      ho.get("block", b.features.hog.block);
      ho.get("eps", b.features.hog.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Writers

json write_train(const TrainConfig& t, bool with_augmentation) {
  json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["lr"] = t.lr;
  j["lr_floor"] = t.lr_floor;
  j["momentum"] = t.momentum;
  j["weight_decay"] = t.weight_decay;
  j["grad_clip_norm"] = t.grad_clip_norm;
  if (with_augmentation) {
    if (t.augmentation) {
      const auto& a = *t.augmentation;
      j["augmentation"] = {{"hflip_prob", a.hflip_prob},         {"vflip_prob", a.vflip_prob},
                           {"rotation_degrees", a.rotation_degrees}, {"brightness_min", a.brightness_min},
                           {"brightness_max", a.brightness_max}, {"seed", a.seed}};
    } else {
      j["augmentation"] = nullptr;
    }
  }
  return j;
}

template <typename T>
json name_list(const std::vector<T>& v) {
  json j = json::array();
  for (auto e : v) j.push_back(std::string(to_string(e)));
  return j;
}

void check_unique(const std::vector<std::string>& names, const char* what) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw ConfigError(std::string("config: ") + what + " lists '" + n + "' twice");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  try {
    model.simam.validate();
    if (!std::isfinite(model.simam.lambda)) throw ConfigError("model.simam.lambda must be finite");
    if (!(model.width_mult > 0.0 && model.width_mult <= 1.0)) throw ConfigError("model.width_mult must lie in (0, 1]");
    for (std::size_t c : model.blocks_per_stage) {
      if (c < 1) throw ConfigError("model.blocks_per_stage entries must be >= 1");
    }
    if (data.manifest.empty()) {
      if (data.synth_count < 3) throw ConfigError("data.synth_count must be >= 3");
      if (data.image_size < min_input_extent(model.stem)) {
        throw ConfigError("data.image_size must be >= " + std::to_string(min_input_extent(model.stem)) + " for stem " +
                          std::string(to_string(model.stem)));
      }
    }
    if (!(data.val_fraction > 0.0 && data.val_fraction < 1.0)) throw ConfigError("data.val_fraction must lie in (0, 1)");
    train.validate();
    bench.head.validate();
    bench.features.validate();
    if (bench.mlp_hidden < 1) throw ConfigError("bench.mlp_hidden must be >= 1");
    if (bench.models.empty() || bench.feature_kinds.empty()) throw ConfigError("bench.models and bench.features must be non-empty");
    std::vector<std::string> names;
    for (auto m : bench.models) names.emplace_back(to_string(m));
    check_unique(names, "bench.models");
    names.clear();
    for (auto f : bench.feature_kinds) names.emplace_back(to_string(f));
    check_unique(names, "bench.features");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    throw ConfigError(msg.rfind("config:", 0) == 0 ? msg : "config: " + msg);
  } catch (const TensorError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig default_run_config() { return RunConfig{}; }

RunConfig parse_run_config(std::string_view text, std::string_view source) {
  json doc;
  try {
    doc = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ConfigError(std::string(source) + ":" + std::to_string(line) + ": syntax error: " + e.what());
  }
  RunConfig cfg;
  const Obj o(doc, "", {"seed", "output_dir", "data", "model", "train", "bench"});
  o.get("seed", cfg.seed);
  o.get("output_dir", cfg.output_dir);
  if (const json* d = o.find("data")) {
    const Obj dob(*d, "data", {"manifest", "synth_count", "image_size", "val_fraction", "keep_rgb"});
    dob.get("manifest", cfg.data.manifest);
    dob.get("synth_count", cfg.data.synth_count);
    dob.get("image_size", cfg.data.image_size);
    dob.get("val_fraction", cfg.data.val_fraction);
    dob.get("keep_rgb", cfg.data.keep_rgb);
  }
  if (const json* m = o.find("model")) read_model(*m, cfg.model);
  if (const json* t = o.find("train")) read_train(*t, "train", cfg.train, true);
  if (const json* b = o.find("bench")) read_bench(*b, cfg.bench);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_file(path), path.string()); }

std::string dump_run_config(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["data"] = {{"manifest", cfg.data.manifest},
               {"synth_count", cfg.data.synth_count},
               {"image_size", cfg.data.image_size},
               {"val_fraction", cfg.data.val_fraction},
               {"keep_rgb", cfg.data.keep_rgb}};
  const auto& m = cfg.model;
  j["model"] = {{"stem", std::string(to_string(m.stem))},
                {"width_mult", m.width_mult},
                {"blocks_per_stage", m.blocks_per_stage},
                {"post_add_relu", m.post_add_relu},
                {"simam", {{"lambda", m.simam.lambda}, {"placement", std::string(to_string(m.simam.placement))}}}};
  j["train"] = write_train(cfg.train, true);
  const auto& f = cfg.bench.features;
  j["bench"] = {{"models", name_list(cfg.bench.models)},
                {"features", name_list(cfg.bench.feature_kinds)},
                {"mlp_hidden", cfg.bench.mlp_hidden},
                {"head", write_train(cfg.bench.head, false)},
                {"feature_params",
                 {{"subsample_extent", f.subsample_extent},
                  {"histogram_bins", f.histogram_bins},
                  {"pca_components", f.pca_components},
                  {"hog", {{"cell", f.hog.cell}, {"bins", f.hog.bins}, {"block", f.hog.block}, {"eps", f.hog.eps}}}}}};
  return j.dump(2) + "\n";
}

std::uint64_t seed_for_data(const RunConfig& cfg) { return derive_seed(cfg.seed, "data"); }
std::uint64_t seed_for_split(const RunConfig& cfg) { return derive_seed(cfg.seed, "split"); }
std::uint64_t seed_for_model(const RunConfig& cfg) { return derive_seed(cfg.seed, "model"); }
std::uint64_t seed_for_train(const RunConfig& cfg) { return derive_seed(cfg.seed, "train"); }

TrainConfig effective_train_config(const RunConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = seed_for_train(cfg);
  return t;
}

BenchConfig effective_bench_config(const RunConfig& cfg) {
  BenchConfig b;
  b.resnet = cfg.model;
  b.cnn = effective_train_config(cfg);
  b.head = cfg.bench.head;
  b.mlp_hidden = cfg.bench.mlp_hidden;
  b.features = cfg.bench.features;
  b.seed = derive_seed(cfg.seed, "bench");
  b.models = cfg.bench.models;
  b.feature_kinds = cfg.bench.feature_kinds;
  return b;
}

}  // namespace simres
