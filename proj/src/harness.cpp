#include "simres/harness.hpp"

#include <malloc.h>

#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "simres/textio.hpp"

namespace simres {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be finite and >= 0");
  if (!(lr_floor >= 0.0) || !std::isfinite(lr_floor)) throw ConfigError("train: lr_floor must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("train: weight_decay must be finite and >= 0");
  if (!(grad_clip_norm >= 0.0) || !std::isfinite(grad_clip_norm)) throw ConfigError("train: grad_clip_norm must be finite and >= 0");
  if (augmentation) augmentation->validate();
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  const double floor = std::min(cfg.lr_floor, cfg.lr);
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

PairData::PairData(std::vector<RadiographPair> pairs) : pairs_(std::move(pairs)) {
  for (const auto& p : pairs_) {
    const auto& f = pairs_.front();
    if (p.channels() != f.channels() || p.height() != f.height() || p.width() != f.width()) {
      throw DataError("dataset: pair " + p.id + " differs in shape from " + f.id);
    }
  }
}

FeatureData::FeatureData(RowMatrixXd features, std::vector<int> labels) : features_(std::move(features)), labels_(std::move(labels)) {
  if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
    throw DataError("feature dataset: " + std::to_string(features_.rows()) + " rows for " + std::to_string(labels_.size()) + " labels");
  }
  if (!features_.allFinite()) throw DataError("feature dataset: non-finite feature");
  for (int y : labels_) {
    if (y < 0 || y >= static_cast<int>(kNumLabels)) throw DataError("feature dataset: label out of range");
  }
}

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  if (window < 1) throw DataError("moving_average: window must be >= 1");
  std::vector<double> out;
  if (values.size() < window) return out;
  for (std::size_t i = 0; i + window <= values.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = i; j < i + window; ++j) s += values[j];
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

std::vector<double> train_losses(const std::vector<CurvePoint>& curve) {
  std::vector<double> out;
  out.reserve(curve.size());
  for (const auto& p : curve) out.push_back(p.train_loss);
  return out;
}

// ---------------------------------------------------------------------------
// Curve export

namespace {

constexpr const char* kCurveHeader = "epoch,train_loss,train_acc,val_loss,val_acc";

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Panel {
  double x0, y0, w, h;  // plot area in SVG units
  double lo, hi;        // value range
  std::string title;
};

std::string svg_panel(const Panel& p, const std::vector<CurvePoint>& curve, double CurvePoint::*train,
                      double CurvePoint::*val) {
  const double first = static_cast<double>(curve.front().epoch);
  const double last = static_cast<double>(curve.back().epoch);
  const double span_x = last > first ? last - first : 1.0;
  const double span_y = p.hi > p.lo ? p.hi - p.lo : 1.0;
  auto px = [&](double e) { return p.x0 + (e - first) / span_x * p.w; };
  auto py = [&](double v) { return p.y0 + p.h - (v - p.lo) / span_y * p.h; };
  std::string s;
  s += "<g>\n";
  s += "<rect x=\"" + fmt("%.2f", p.x0) + "\" y=\"" + fmt("%.2f", p.y0) + "\" width=\"" + fmt("%.2f", p.w) + "\" height=\"" +
       fmt("%.2f", p.h) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  s += "<text x=\"" + fmt("%.2f", p.x0 + p.w / 2) + "\" y=\"" + fmt("%.2f", p.y0 - 8) +
       "\" text-anchor=\"middle\" font-size=\"14\">" + p.title + "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = p.lo + span_y * t / 4.0;
    const double y = py(v);
    s += "<line x1=\"" + fmt("%.2f", p.x0 - 4) + "\" y1=\"" + fmt("%.2f", y) + "\" x2=\"" + fmt("%.2f", p.x0) + "\" y2=\"" +
         fmt("%.2f", y) + "\" stroke=\"#444\"/>\n";
    s += "<text x=\"" + fmt("%.2f", p.x0 - 6) + "\" y=\"" + fmt("%.2f", y + 4) + "\" text-anchor=\"end\" font-size=\"10\">" +
         fmt("%.3g", v) + "</text>\n";
  }
  s += "<text x=\"" + fmt("%.2f", p.x0) + "\" y=\"" + fmt("%.2f", p.y0 + p.h + 16) + "\" font-size=\"10\">" + fmt("%.0f", first) +
       "</text>\n";
  s += "<text x=\"" + fmt("%.2f", p.x0 + p.w) + "\" y=\"" + fmt("%.2f", p.y0 + p.h + 16) + "\" text-anchor=\"end\" font-size=\"10\">" +
       fmt("%.0f", last) + "</text>\n";
  s += "<text x=\"" + fmt("%.2f", p.x0 + p.w / 2) + "\" y=\"" + fmt("%.2f", p.y0 + p.h + 30) +
       "\" text-anchor=\"middle\" font-size=\"11\">epoch</text>\n";
  auto line = [&](double CurvePoint::*field, const char* colour) {
    std::string pts;
    for (const auto& c : curve) {
      if (!pts.empty()) pts += ' ';
      pts += fmt("%.2f", px(static_cast<double>(c.epoch))) + "," + fmt("%.2f", py(c.*field));
    }
    s += std::string("<polyline fill=\"none\" stroke=\"") + colour + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
  };
  line(train, "#1f77b4");
  line(val, "#ff7f0e");
  s += "</g>\n";
  return s;
}

}  // namespace

void export_curves(const std::vector<CurvePoint>& curve, const std::filesystem::path& prefix) {
  if (curve.empty()) throw DataError("export_curves: no curve points");
  std::string csv = std::string(kCurveHeader) + "\n";
  for (const auto& p : curve) {
    csv += std::to_string(p.epoch) + "," + format_double(p.train_loss) + "," + format_double(p.train_accuracy) + "," +
           format_double(p.val_loss) + "," + format_double(p.val_accuracy) + "\n";
  }
  double loss_hi = 0.0;
  for (const auto& p : curve) loss_hi = std::max({loss_hi, p.train_loss, p.val_loss});
  if (!std::isfinite(loss_hi)) loss_hi = 1.0;
  const double w = 380.0, h = 240.0;
  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"860\" height=\"340\" viewBox=\"0 0 860 340\">\n";
  svg += "<rect width=\"860\" height=\"340\" fill=\"white\"/>\n";
  svg += svg_panel({60, 40, w, h, 0.0, loss_hi, "loss"}, curve, &CurvePoint::train_loss, &CurvePoint::val_loss);
  svg += svg_panel({470, 40, w, h, 0.0, 1.0, "accuracy"}, curve, &CurvePoint::train_accuracy, &CurvePoint::val_accuracy);
  svg += "<text x=\"60\" y=\"330\" font-size=\"11\" fill=\"#1f77b4\">train</text>\n";
  svg += "<text x=\"110\" y=\"330\" font-size=\"11\" fill=\"#ff7f0e\">validation</text>\n";
  svg += "</svg>\n";
  const std::filesystem::path base = prefix;
  write_text_file(base.string() + ".csv", csv);
  write_text_file(base.string() + ".svg", svg);
}

std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) throw DataError(path.string() + ": not a curve CSV");
  std::vector<CurvePoint> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell[5];
    for (auto& c : cell) std::getline(row, c, ',');
    try {
      out.push_back({static_cast<std::size_t>(std::stoull(cell[0])), std::stod(cell[1]), std::stod(cell[2]), std::stod(cell[3]),
                     std::stod(cell[4])});
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed curve row");
    }
  }
  return out;
}

void configure_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace simres
