#include "wslmm/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <stdexcept>

namespace wsl {

double classification_error(std::span<const std::size_t> preds,
                            std::span<const std::size_t> labels) {
  if (preds.empty()) throw std::invalid_argument("classification_error: empty input");
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("classification_error: " + std::to_string(preds.size()) +
                                " predictions for " + std::to_string(labels.size()) + " labels");
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) wrong += preds[i] != labels[i];
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(preds.size());
}

namespace {

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

void check_same(const Shape& a, const Shape& b, const char* who) {
  if (a != b) throw std::invalid_argument(std::string(who) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

F1Pair f1_scores(const Tensor<double>& pred, const Tensor<std::uint8_t>& gt, double threshold) {
  check_same(pred.shape, gt.shape, "f1_scores");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] >= threshold;
    const bool g = gt.data[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
    tn += !p && !g;
  }
  // On the complements, TN plays the role of TP and FP/FN swap.
  return {f1_from_counts(tp, fp, fn), f1_from_counts(tn, fn, fp)};
}

double dice_oracle(const Tensor<std::uint8_t>& a, const Tensor<std::uint8_t>& b) {
  check_same(a.shape, b.shape, "dice_oracle");
  std::set<std::size_t> sa, sb, both;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.data[i]) sa.insert(i);
    if (b.data[i]) sb.insert(i);
  }
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(both, both.end()));
  if (sa.empty() && sb.empty()) return 1.0;
  return 2.0 * static_cast<double>(both.size()) / static_cast<double>(sa.size() + sb.size());
}

namespace {

// Returns false when the image has no positives for this polarity.
bool image_curve(const Tensor<double>& pred, const Tensor<std::uint8_t>& gt, Polarity pol,
                 std::vector<double>& out) {
  const std::size_t n = pred.size();
  std::vector<std::pair<double, bool>> items(n);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool fg = gt.data[i] != 0;
    const bool pos = pol == Polarity::kForeground ? fg : !fg;
    const double s = pol == Polarity::kForeground ? pred.data[i] : 1.0 - pred.data[i];
    items[i] = {s, pos};
    positives += pos;
  }
  if (positives == 0) return false;
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<double> rec, prec;
  std::size_t tp = 0, taken = 0;
  for (std::size_t i = 0; i < n;) {
    const double s = items[i].first;
    while (i < n && items[i].first == s) {
      tp += items[i].second;
      ++taken;
      ++i;
    }
    const double r = static_cast<double>(tp) / static_cast<double>(positives);
    const double p = static_cast<double>(tp) / static_cast<double>(taken);
    if (!rec.empty() && r == rec.back()) continue;  // keep the higher-threshold point
    rec.push_back(r);
    prec.push_back(p);
  }

  out.resize(kRecallGridPoints);
  std::size_t j = 0;
  for (std::size_t g = 0; g < kRecallGridPoints; ++g) {
    const double r = static_cast<double>(g) / static_cast<double>(kRecallGridPoints - 1);
    if (r <= rec.front()) {
      out[g] = prec.front();
    } else if (r >= rec.back()) {
      out[g] = prec.back();
    } else {
      while (rec[j + 1] < r) ++j;
      const double w = (r - rec[j]) / (rec[j + 1] - rec[j]);
      out[g] = prec[j] + w * (prec[j + 1] - prec[j]);
    }
  }
  return true;
}

}  // namespace

PrCurve avg_pr_curve(const std::vector<Tensor<double>>& preds,
                     const std::vector<Tensor<std::uint8_t>>& gts, Polarity polarity) {
  if (preds.size() != gts.size()) throw std::invalid_argument("avg_pr_curve: count mismatch");
  PrCurve c;
  c.recall.resize(kRecallGridPoints);
  for (std::size_t g = 0; g < kRecallGridPoints; ++g)
    c.recall[g] = static_cast<double>(g) / static_cast<double>(kRecallGridPoints - 1);
  c.precision.assign(kRecallGridPoints, 0.0);
  std::vector<double> one;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (gts[i].size() == 0) continue;
    check_same(preds[i].shape, gts[i].shape, "avg_pr_curve");
    if (!image_curve(preds[i], gts[i], polarity, one)) {
      ++c.skipped;
      continue;
    }
    for (std::size_t g = 0; g < kRecallGridPoints; ++g) c.precision[g] += one[g];
    ++c.used;
  }
  if (c.used == 0) throw std::invalid_argument("avg_pr_curve: no image with ground truth for this polarity");
  for (auto& p : c.precision) p /= static_cast<double>(c.used);
  return c;
}

MetricsReport evaluate(const std::vector<std::string>& ids, std::span<const std::size_t> labels,
                       std::span<const std::size_t> preds, const std::vector<Tensor<double>>& masks,
                       const std::vector<Tensor<std::uint8_t>>& gts) {
  const std::size_t n = ids.size();
  if (labels.size() != n || preds.size() != n || masks.size() != n || gts.size() != n) {
    throw std::invalid_argument("evaluate: inconsistent input lengths");
  }
  MetricsReport r;
  r.classification_error = classification_error(preds, labels);
  std::size_t with_gt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    SampleRow row{ids[i], labels[i], preds[i], gts[i].size() != 0, {}};
    if (row.has_gt) {
      row.f1 = f1_scores(masks[i], gts[i]);
      r.f1_plus += row.f1.plus;
      r.f1_minus += row.f1.minus;
      ++with_gt;
    }
    r.rows.push_back(std::move(row));
  }
  if (with_gt > 0) {
    r.has_pixel = true;
    r.f1_plus = 100.0 * r.f1_plus / static_cast<double>(with_gt);
    r.f1_minus = 100.0 * r.f1_minus / static_cast<double>(with_gt);
    r.pr_fg = avg_pr_curve(masks, gts, Polarity::kForeground);
    try {
      r.pr_bg = avg_pr_curve(masks, gts, Polarity::kBackground);
    } catch (const std::invalid_argument&) {
      r.pr_bg = {};  // every mask is full foreground
    }
  }
  return r;
}

F1Pair all_ones_baseline(const std::vector<Tensor<std::uint8_t>>& gts) {
  F1Pair acc;
  std::size_t used = 0;
  for (const auto& g : gts) {
    if (g.size() == 0) continue;
    const auto f = f1_scores(Tensor<double>(g.shape, 1.0), g);
    acc.plus += f.plus;
    acc.minus += f.minus;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("all_ones_baseline: no ground-truth masks");
  acc.plus = 100.0 * acc.plus / static_cast<double>(used);
  acc.minus = 100.0 * acc.minus / static_cast<double>(used);
  return acc;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "id,label,pred,f1_plus,f1_minus\n";
  for (const auto& r : report.rows) {
    os << r.id << ',' << r.label << ',' << r.pred << ',';
    if (r.has_gt) {
      os << num(100.0 * r.f1.plus) << ',' << num(100.0 * r.f1.minus) << '\n';
    } else {
      os << "NA,NA\n";
    }
  }
  os << "summary,error=" << num(report.classification_error) << ",,";
  if (report.has_pixel) {
    os << num(report.f1_plus) << ',' << num(report.f1_minus) << '\n';
  } else {
    os << "NA,NA\n";
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

void write_pr_csv(const std::filesystem::path& path, const PrCurve& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "recall,precision\n";
  for (std::size_t g = 0; g < curve.recall.size(); ++g)
    os << num(curve.recall[g]) << ',' << num(curve.precision[g]) << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace wsl
