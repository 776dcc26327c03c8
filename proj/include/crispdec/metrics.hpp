#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "crispdec/label_map.hpp"

namespace crispdec {

/// K x K counts, rows = ground truth, columns = prediction. Pixels whose
/// ground truth is IGNORE are skipped.
struct ConfusionMatrix {
  int64_t k = 0;
  std::vector<int64_t> counts;

  explicit ConfusionMatrix(int64_t num_classes = 0)
      : k(num_classes), counts(num_classes * num_classes, 0) {}
  void add(const LabelMap& pred, const LabelMap& gt);
  int64_t at(int64_t gt, int64_t pred) const { return counts[gt * k + pred]; }
  int64_t total() const;
};

struct IoUResult {
  std::vector<std::optional<double>> per_class;  // empty when absent from both
  double mean = 0;
  int64_t counted_classes = 0;
};

IoUResult miou(const ConfusionMatrix& cm);
IoUResult miou(const LabelMap& pred, const LabelMap& gt, int64_t num_classes);

/// F1 of class-agnostic boundary pixels with Chebyshev tolerance < band_px.
double boundary_f1(const LabelMap& pred, const LabelMap& gt, int band_px = 2);

/// Expected calibration error with equal-width bins; confidence 1.0 falls in
/// the last bin. Returns 0 for no samples.
double ece(const std::vector<double>& confidences, const std::vector<uint8_t>& correct,
           int bins = 10);

/// Binary-mask structural scores; the mask holds 0/1 per pixel.
double tv_smoothness(const Mask& mask, int64_t h, int64_t w);
double compactness(const Mask& mask, int64_t h, int64_t w, double eps = 1e-6);

inline constexpr double kDefaultCurvatureThreshold = 0.78539816339744830962;  // pi / 4

/// Fraction of boundary pixels whose discrete turning angle exceeds tau.
/// Boundary pixels are foreground pixels with a background (or off-image)
/// 8-neighbour; the angle at a pixel comes from its 4-adjacent neighbours
/// within the boundary set (straight: 0, corner: pi/2, end or junction: pi).
double edge_regularity(const Mask& mask, int64_t h, int64_t w,
                       double tau = kDefaultCurvatureThreshold);

struct StructuralScores {
  double tv_smooth = 1.0;
  double compactness = 0.0;
  double edge_regularity = 0.0;
};

/// Per-class scores on the binary mask of every foreground class (label >= 1)
/// present in `labels`, averaged with weights proportional to class area.
/// Without foreground: TV 1, compactness 0, edge regularity 0.
StructuralScores structural_scores(const LabelMap& labels, double tau = kDefaultCurvatureThreshold);

struct MetricReport {
  std::vector<std::optional<double>> class_iou;
  double miou = 0;
  double boundary_f1 = 0;
  std::optional<double> ece;
  double tv_smooth = 1.0;
  double compactness = 0;
  double edge_regularity = 0;
};

struct MetricOptions {
  int band_px = 2;
  int ece_bins = 10;
  double curvature_threshold = kDefaultCurvatureThreshold;
};

/// Every metric for one image. `confidence` (max softmax per pixel, H x W)
/// enables ECE over the non-IGNORE ground-truth pixels.
MetricReport evaluate_image(const LabelMap& pred, const LabelMap& gt, int64_t num_classes,
                            const std::vector<double>* confidence = nullptr,
                            const MetricOptions& options = {});

struct EvalRow {
  std::string name;
  std::string error;  // non-empty for failed images
  MetricReport report;
};

struct EvalReport {
  int64_t num_classes = 0;
  std::vector<EvalRow> rows;  // ordered by file name
  MetricReport aggregate;     // mean of the per-image values over successful rows
  int64_t ok_rows = 0;
  int64_t error_rows = 0;

  /// Header plus one row per image plus a final "mean" row.
  std::string to_csv() const;
};

/// Mean of per-image reports (per-class IoU and ECE over images that have them).
MetricReport aggregate_reports(const std::vector<MetricReport>& reports, int64_t num_classes);

/// Compares <pred_dir>/<name>.pgm to <gt_dir>/<name>.pgm for every PGM in
/// pred_dir. Confidences are read from <confidence_dir>/<name>.ctsr when a
/// directory is given. Unreadable or mismatched pairs become error rows.
EvalReport evaluate_directories(const std::filesystem::path& pred_dir,
                                const std::filesystem::path& gt_dir, int64_t num_classes,
                                const std::optional<std::filesystem::path>& confidence_dir = {},
                                const MetricOptions& options = {});

/// Column names of the evaluation CSV for K classes, in order.
std::vector<std::string> eval_csv_columns(int64_t num_classes);

}  // namespace crispdec
