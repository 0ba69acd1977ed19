#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stoneseg/errors.hpp"
#include "stoneseg/image.hpp"

namespace stoneseg {

struct ConfusionCounts {
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;

  long total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct ConfusionMetrics {
  ConfusionCounts counts;
  double accuracy = 0.0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Points run from (0,0) to (1,1) with thresholds descending.
struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

namespace detail {

template <typename A, typename B>
void check_same_size(const Eigen::ArrayBase<A>& a, const Eigen::ArrayBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                     ")");
  }
}

// Scores paired with labels, flattened in row-major order.
RocCurve roc_from_scores(const std::vector<std::pair<double, bool>>& scored);

inline double ratio_or_one(long num, long den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

/// 2|P∩G| / (|P|+|G|); two empty masks score 1.
template <typename P, typename G>
double dice(const Eigen::ArrayBase<P>& pred, const Eigen::ArrayBase<G>& gt) {
  detail::check_same_size(pred, gt, "dice");
  const auto p = (pred.derived() != 0);
  const auto g = (gt.derived() != 0);
  const long overlap = (p && g).count();
  const long sum = p.count() + g.count();
  return sum == 0 ? 1.0 : 2.0 * static_cast<double>(overlap) / static_cast<double>(sum);
}

template <typename P, typename G>
ConfusionCounts confusion_counts(const Eigen::ArrayBase<P>& pred, const Eigen::ArrayBase<G>& gt) {
  detail::check_same_size(pred, gt, "confusion_counts");
  const auto p = (pred.derived() != 0);
  const auto g = (gt.derived() != 0);
  ConfusionCounts c;
  c.tp = (p && g).count();
  c.fp = (p && !g).count();
  c.fn = (!p && g).count();
  c.tn = static_cast<long>(pred.size()) - c.tp - c.fp - c.fn;
  return c;
}

/// Accuracy, IoU, precision and recall; 0/0 ratios are reported as 1.
inline ConfusionMetrics confusion_metrics(const ConfusionCounts& c) {
  ConfusionMetrics m;
  m.counts = c;
  m.accuracy = detail::ratio_or_one(c.tp + c.tn, c.total());
  m.iou = detail::ratio_or_one(c.tp, c.tp + c.fp + c.fn);
  m.precision = detail::ratio_or_one(c.tp, c.tp + c.fp);
  m.recall = detail::ratio_or_one(c.tp, c.tp + c.fn);
  return m;
}

template <typename P, typename G>
ConfusionMetrics confusion_metrics(const Eigen::ArrayBase<P>& pred, const Eigen::ArrayBase<G>& gt) {
  return confusion_metrics(confusion_counts(pred, gt));
}

/// 10 log10(1 / MSE) with peak 1; a perfect prediction gives +infinity.
template <typename P, typename G>
double psnr(const Eigen::ArrayBase<P>& prob, const Eigen::ArrayBase<G>& gt) {
  detail::check_same_size(prob, gt, "psnr");
  const double mse = (prob.derived().template cast<double>() - gt.derived().template cast<double>()).square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps].
template <typename P, typename G>
double bce(const Eigen::ArrayBase<P>& prob, const Eigen::ArrayBase<G>& gt) {
  detail::check_same_size(prob, gt, "bce");
  const auto p = prob.derived().template cast<double>().max(kBceEpsilon).min(1.0 - kBceEpsilon);
  const auto y = gt.derived().template cast<double>();
  return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean();
}

/// Threshold sweep over every distinct score; equal scores move together.
/// Throws DataError("degenerate ROC") unless gt holds both classes.
template <typename P, typename G>
RocCurve roc_auc(const Eigen::ArrayBase<P>& prob, const Eigen::ArrayBase<G>& gt) {
  detail::check_same_size(prob, gt, "roc_auc");
  std::vector<std::pair<double, bool>> scored;
  scored.reserve(static_cast<std::size_t>(prob.size()));
  for (Eigen::Index r = 0; r < prob.rows(); ++r) {
    for (Eigen::Index c = 0; c < prob.cols(); ++c) {
      scored.emplace_back(static_cast<double>(prob(r, c)), gt(r, c) != 0);
    }
  }
  return detail::roc_from_scores(scored);
}

/// 1 where probability >= 0.5.
template <typename Derived>
BinaryMask predict_mask(const Eigen::ArrayBase<Derived>& prob) {
  return (prob.derived() >= typename Derived::Scalar(0.5)).template cast<std::uint8_t>();
}

/// Per-frame averages plus pooled AUC over all pixels of a frame set.
struct MetricReport {
  double dice = 0.0;
  double accuracy = 0.0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double psnr = 0.0;
  std::optional<double> auc_mean;    // over frames with both classes present
  std::optional<double> auc_pooled;  // one curve over every pixel
  double bce = 0.0;
  ConfusionCounts counts;            // summed over frames
  long frames = 0;
};

/// Accumulates frames and produces a MetricReport.
class MetricAccumulator {
 public:
  void add(const ProbabilityMap<float>& prob, const BinaryMask& gt);
  MetricReport report() const;

 private:
  double dice_sum_ = 0.0;
  double accuracy_sum_ = 0.0;
  double iou_sum_ = 0.0;
  double precision_sum_ = 0.0;
  double recall_sum_ = 0.0;
  double psnr_sum_ = 0.0;
  double bce_sum_ = 0.0;
  double auc_sum_ = 0.0;
  long auc_frames_ = 0;
  long frames_ = 0;
  ConfusionCounts counts_;
  std::vector<std::pair<double, bool>> pooled_;
};

/// JSON with the keys dice, accuracy, iou, psnr, auc, bce, tp, fp, tn, fn
/// plus auc_mean, auc_pooled, precision, recall and frames. Infinite PSNR
/// is written as the string "inf"; undefined AUC as null.
nlohmann::json to_json(const MetricReport& report);

}  // namespace stoneseg
