#include "crispdec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "crispdec/check.hpp"
#include "crispdec/ctsr.hpp"
#include "crispdec/pgm.hpp"

namespace crispdec {

namespace {

void require_same_size(const LabelMap& a, const LabelMap& b, const char* what) {
  require_shape(a.h == b.h && a.w == b.w,
                std::string(what) + ": prediction is " + std::to_string(a.h) + "x" +
                    std::to_string(a.w) + " but ground truth is " + std::to_string(b.h) + "x" +
                    std::to_string(b.w));
}

int64_t count_set(const Mask& m) { return std::count(m.begin(), m.end(), uint8_t{1}); }

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_optional(const std::optional<double>& v) {
  return v ? format_value(*v) : std::string();
}

}  // namespace

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  require_same_size(pred, gt, "confusion matrix");
  for (int64_t i = 0; i < gt.size(); ++i) {
    const int32_t g = gt.data[i];
    if (g == kIgnoreLabel) continue;
    const int32_t p = pred.data[i];
    require(g >= 0 && g < k, "ground-truth label " + std::to_string(g) + " outside [0, " +
                                 std::to_string(k) + ")");
    require(p >= 0 && p < k,
            "predicted label " + std::to_string(p) + " outside [0, " + std::to_string(k) + ")");
    ++counts[g * k + p];
  }
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts) t += c;
  return t;
}

IoUResult miou(const ConfusionMatrix& cm) {
  IoUResult out;
  out.per_class.resize(cm.k);
  double sum = 0;
  for (int64_t c = 0; c < cm.k; ++c) {
    int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int64_t o = 0; o < cm.k; ++o) {
      if (o == c) continue;
      fn += cm.at(c, o);
      fp += cm.at(o, c);
    }
    const int64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    out.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += *out.per_class[c];
    ++out.counted_classes;
  }
  out.mean = out.counted_classes > 0 ? sum / static_cast<double>(out.counted_classes) : 0.0;
  return out;
}

IoUResult miou(const LabelMap& pred, const LabelMap& gt, int64_t num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt);
  return miou(cm);
}

double boundary_f1(const LabelMap& pred, const LabelMap& gt, int band_px) {
  require_same_size(pred, gt, "boundary F1");
  const Mask pb = label_boundary(pred);
  const Mask gb = label_boundary(gt);
  const int64_t np = count_set(pb), ng = count_set(gb);
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const Mask g_band = chebyshev_band(gb, gt.h, gt.w, band_px);
  const Mask p_band = chebyshev_band(pb, gt.h, gt.w, band_px);
  int64_t p_hit = 0, g_hit = 0;
  for (size_t i = 0; i < pb.size(); ++i) {
    p_hit += pb[i] && g_band[i];
    g_hit += gb[i] && p_band[i];
  }
  const double precision = static_cast<double>(p_hit) / static_cast<double>(np);
  const double recall = static_cast<double>(g_hit) / static_cast<double>(ng);
  if (precision + recall == 0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double ece(const std::vector<double>& confidences, const std::vector<uint8_t>& correct, int bins) {
  require(confidences.size() == correct.size(), "ece: confidence and correctness sizes differ");
  require(bins >= 1, "ece: need at least one bin");
  if (confidences.empty()) return 0.0;
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<int64_t> count(bins, 0);
  for (size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    require(c >= 0.0 && c <= 1.0, "ece: confidence outside [0, 1]");
    const int b = std::min(bins - 1, static_cast<int>(c * bins));
    conf_sum[b] += c;
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(confidences.size());
  double out = 0;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    out += (nb / n) * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
  }
  return out;
}

double tv_smoothness(const Mask& mask, int64_t h, int64_t w) {
  require_shape(static_cast<int64_t>(mask.size()) == h * w, "tv_smoothness: mask size mismatch");
  if (h * w == 0) return 1.0;
  int64_t transitions = 0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const uint8_t v = mask[y * w + x];
      if (x + 1 < w && v != mask[y * w + x + 1]) ++transitions;
      if (y + 1 < h && v != mask[(y + 1) * w + x]) ++transitions;
    }
  const double score = 1.0 - static_cast<double>(transitions) / static_cast<double>(2 * h * w);
  return std::clamp(score, 0.0, 1.0);
}

double compactness(const Mask& mask, int64_t h, int64_t w, double eps) {
  require_shape(static_cast<int64_t>(mask.size()) == h * w, "compactness: mask size mismatch");
  int64_t area = 0, perimeter = 0;
  auto background = [&](int64_t y, int64_t x) {
    return y < 0 || y >= h || x < 0 || x >= w || !mask[y * w + x];
  };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!mask[y * w + x]) continue;
      ++area;
      perimeter += background(y - 1, x) + background(y + 1, x) + background(y, x - 1) +
                   background(y, x + 1);
    }
  if (area == 0) return 0.0;
  const double p = std::max(static_cast<double>(perimeter), eps);
  return std::clamp(4.0 * std::numbers::pi * static_cast<double>(area) / (p * p), 0.0, 1.0);
}

double edge_regularity(const Mask& mask, int64_t h, int64_t w, double tau) {
  require_shape(static_cast<int64_t>(mask.size()) == h * w, "edge_regularity: mask size mismatch");
  auto fg = [&](int64_t y, int64_t x) {
    return y >= 0 && y < h && x >= 0 && x < w && mask[y * w + x];
  };
  Mask boundary(h * w, 0);
  int64_t n = 0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!mask[y * w + x]) continue;
      bool exposed = false;
      for (int dy = -1; dy <= 1 && !exposed; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if ((dy || dx) && !fg(y + dy, x + dx)) {
            exposed = true;
            break;
          }
      if (exposed) {
        boundary[y * w + x] = 1;
        ++n;
      }
    }
  if (n == 0) return 0.0;
  auto on = [&](int64_t y, int64_t x) {
    return y >= 0 && y < h && x >= 0 && x < w && boundary[y * w + x];
  };
  int64_t flagged = 0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!boundary[y * w + x]) continue;
      const bool up = on(y - 1, x), down = on(y + 1, x), left = on(y, x - 1),
                 right = on(y, x + 1);
      const int degree = up + down + left + right;
      double kappa;
      if (degree != 2)
        kappa = std::numbers::pi;
      else if ((up && down) || (left && right))
        kappa = 0.0;
      else
        kappa = std::numbers::pi / 2;
      if (kappa > tau) ++flagged;
    }
  return static_cast<double>(flagged) / static_cast<double>(n);
}

StructuralScores structural_scores(const LabelMap& labels, double tau) {
  StructuralScores out;
  std::vector<int32_t> classes;
  for (int32_t v : labels.data)
    if (v >= 1 && v != kIgnoreLabel) classes.push_back(v);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.empty()) return out;
  double tv = 0, comp = 0, reg = 0, total = 0;
  Mask m(labels.size());
  for (int32_t c : classes) {
    int64_t area = 0;
    for (int64_t i = 0; i < labels.size(); ++i) {
      m[i] = labels.data[i] == c;
      area += m[i];
    }
    const double a = static_cast<double>(area);
    tv += a * tv_smoothness(m, labels.h, labels.w);
    comp += a * compactness(m, labels.h, labels.w);
    reg += a * edge_regularity(m, labels.h, labels.w, tau);
    total += a;
  }
  out.tv_smooth = tv / total;
  out.compactness = comp / total;
  out.edge_regularity = reg / total;
  return out;
}

MetricReport evaluate_image(const LabelMap& pred, const LabelMap& gt, int64_t num_classes,
                            const std::vector<double>* confidence, const MetricOptions& options) {
  MetricReport r;
  IoUResult iou = miou(pred, gt, num_classes);
  r.class_iou = iou.per_class;
  r.miou = iou.mean;
  r.boundary_f1 = boundary_f1(pred, gt, options.band_px);
  if (confidence) {
    require_shape(static_cast<int64_t>(confidence->size()) == gt.size(),
                  "confidence map does not match the image size");
    std::vector<double> conf;
    std::vector<uint8_t> correct;
    for (int64_t i = 0; i < gt.size(); ++i) {
      if (gt.data[i] == kIgnoreLabel) continue;
      conf.push_back((*confidence)[i]);
      correct.push_back(pred.data[i] == gt.data[i]);
    }
    r.ece = ece(conf, correct, options.ece_bins);
  }
  StructuralScores s = structural_scores(pred, options.curvature_threshold);
  r.tv_smooth = s.tv_smooth;
  r.compactness = s.compactness;
  r.edge_regularity = s.edge_regularity;
  return r;
}

MetricReport aggregate_reports(const std::vector<MetricReport>& reports, int64_t num_classes) {
  MetricReport out;
  out.class_iou.resize(num_classes);
  if (reports.empty()) return out;
  const double n = static_cast<double>(reports.size());
  out.tv_smooth = 0;
  double ece_sum = 0;
  int64_t ece_count = 0;
  std::vector<double> iou_sum(num_classes, 0.0);
  std::vector<int64_t> iou_count(num_classes, 0);
  for (const MetricReport& r : reports) {
    out.miou += r.miou / n;
    out.boundary_f1 += r.boundary_f1 / n;
    out.tv_smooth += r.tv_smooth / n;
    out.compactness += r.compactness / n;
    out.edge_regularity += r.edge_regularity / n;
    if (r.ece) {
      ece_sum += *r.ece;
      ++ece_count;
    }
    for (int64_t c = 0; c < num_classes && c < static_cast<int64_t>(r.class_iou.size()); ++c)
      if (r.class_iou[c]) {
        iou_sum[c] += *r.class_iou[c];
        ++iou_count[c];
      }
  }
  if (ece_count > 0) out.ece = ece_sum / static_cast<double>(ece_count);
  for (int64_t c = 0; c < num_classes; ++c)
    if (iou_count[c] > 0) out.class_iou[c] = iou_sum[c] / static_cast<double>(iou_count[c]);
  return out;
}

std::vector<std::string> eval_csv_columns(int64_t num_classes) {
  std::vector<std::string> cols = {"image",       "status",          "miou",
                                   "boundary_f1", "ece",             "tv_smooth",
                                   "compactness", "edge_regularity"};
  for (int64_t c = 0; c < num_classes; ++c) cols.push_back("iou_" + std::to_string(c));
  return cols;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  const auto cols = eval_csv_columns(num_classes);
  for (size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  auto emit = [&](const std::string& name, const std::string& status, const MetricReport* r) {
    os << name << ',' << status;
    if (!r) {
      for (size_t i = 2; i < cols.size(); ++i) os << ',';
      os << '\n';
      return;
    }
    os << ',' << format_value(r->miou) << ',' << format_value(r->boundary_f1) << ','
       << format_optional(r->ece) << ',' << format_value(r->tv_smooth) << ','
       << format_value(r->compactness) << ',' << format_value(r->edge_regularity);
    for (int64_t c = 0; c < num_classes; ++c)
      os << ',' << (c < static_cast<int64_t>(r->class_iou.size()) ? format_optional(r->class_iou[c])
                                                                 : std::string());
    os << '\n';
  };
  for (const EvalRow& row : rows) {
    if (row.error.empty()) {
      emit(row.name, "ok", &row.report);
    } else {
      std::string msg = row.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      emit(row.name, "error: " + msg, nullptr);
    }
  }
  if (ok_rows > 0) emit("mean", "ok", &aggregate);
  return os.str();
}

EvalReport evaluate_directories(const std::filesystem::path& pred_dir,
                                const std::filesystem::path& gt_dir, int64_t num_classes,
                                const std::optional<std::filesystem::path>& confidence_dir,
                                const MetricOptions& options) {
  namespace fs = std::filesystem;
  require(num_classes >= 1, "number of classes must be positive");
  require(fs::is_directory(pred_dir), "not a directory: " + pred_dir.string());
  require(fs::is_directory(gt_dir), "not a directory: " + gt_dir.string());
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(pred_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      names.push_back(entry.path().stem().string());
  std::sort(names.begin(), names.end());

  EvalReport report;
  report.num_classes = num_classes;
  std::vector<MetricReport> good;
  for (const std::string& name : names) {
    EvalRow row;
    row.name = name;
    try {
      LabelMap pred = read_pgm(pred_dir / (name + ".pgm"));
      LabelMap gt = read_pgm(gt_dir / (name + ".pgm"));
      std::vector<double> conf;
      if (confidence_dir) {
        Tensor t = load_ctsr(*confidence_dir / (name + ".ctsr"));
        require_shape(t.numel() == gt.size(), "confidence map does not match the image size");
        conf.assign(t.data().begin(), t.data().end());
      }
      row.report = evaluate_image(pred, gt, num_classes, confidence_dir ? &conf : nullptr, options);
      good.push_back(row.report);
      ++report.ok_rows;
    } catch (const std::exception& e) {
      row.error = e.what();
      ++report.error_rows;
    }
    report.rows.push_back(std::move(row));
  }
  report.aggregate = aggregate_reports(good, num_classes);
  return report;
}

}  // namespace crispdec
