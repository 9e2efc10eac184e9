#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wslmm/tensor.hpp"

namespace wsl {

/// 100 * mismatches / n.
double classification_error(std::span<const std::size_t> preds,
                            std::span<const std::size_t> labels);

struct F1Pair {
  double plus = 0;   ///< foreground, in [0,1]
  double minus = 0;  ///< background, in [0,1]
};

/// F1 = 2TP / (2TP + FP + FN) on the binarized prediction (pred >= threshold)
/// and on both complements. Both masks empty for a polarity -> 1, exactly one
/// empty -> 0.
F1Pair f1_scores(const Tensor<double>& pred, const Tensor<std::uint8_t>& gt,
                 double threshold = 0.5);

/// 2|A n B| / (|A| + |B|) by explicit index sets; 1 when both are empty.
double dice_oracle(const Tensor<std::uint8_t>& a, const Tensor<std::uint8_t>& b);

enum class Polarity { kForeground, kBackground };

constexpr std::size_t kRecallGridPoints = 1001;

struct PrCurve {
  std::vector<double> recall;     ///< 0, 0.001, ..., 1
  std::vector<double> precision;  ///< mean over used images
  std::size_t used = 0;
  std::size_t skipped = 0;  ///< images with no positives for this polarity
};

/// Per-image PR curve from a threshold sweep, linearly interpolated onto the
/// shared recall grid (constant beyond the first and last achievable recall),
/// then averaged pointwise.
PrCurve avg_pr_curve(const std::vector<Tensor<double>>& preds,
                     const std::vector<Tensor<std::uint8_t>>& gts, Polarity polarity);

struct SampleRow {
  std::string id;
  std::size_t label = 0;
  std::size_t pred = 0;
  bool has_gt = false;
  F1Pair f1;
};

struct MetricsReport {
  double classification_error = 0;  ///< percent
  bool has_pixel = false;
  double f1_plus = 0;   ///< percent, mean over samples with ground truth
  double f1_minus = 0;  ///< percent
  std::vector<SampleRow> rows;
  PrCurve pr_fg;
  PrCurve pr_bg;
};

/// gts[i] may be empty (shape {}) for samples without ground truth.
MetricsReport evaluate(const std::vector<std::string>& ids, std::span<const std::size_t> labels,
                       std::span<const std::size_t> preds, const std::vector<Tensor<double>>& masks,
                       const std::vector<Tensor<std::uint8_t>>& gts);

/// Constant all-ones predictor, F1 in percent.
F1Pair all_ones_baseline(const std::vector<Tensor<std::uint8_t>>& gts);

/// id,label,pred,f1_plus,f1_minus per sample plus a trailing summary row.
void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report);
/// recall,precision
void write_pr_csv(const std::filesystem::path& path, const PrCurve& curve);

}  // namespace wsl
