#include "stoneseg/metrics.hpp"

#include <algorithm>

namespace stoneseg {
namespace detail {

RocCurve roc_from_scores(const std::vector<std::pair<double, bool>>& scored) {
  long positives = 0;
  for (const auto& s : scored) positives += s.second ? 1 : 0;
  const long negatives = static_cast<long>(scored.size()) - positives;
  if (positives == 0 || negatives == 0) throw DataError("degenerate ROC: ground truth has a single class");

  std::vector<std::pair<double, bool>> sorted = scored;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  long tp = 0;
  long fp = 0;
  // Twice the area times positives*negatives, accumulated exactly.
  long double twice_scaled_area = 0.0L;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double score = sorted[i].first;
    const long tp_before = tp;
    const long fp_before = fp;
    for (; i < sorted.size() && sorted[i].first == score; ++i) {
      if (sorted[i].second) {
        ++tp;
      } else {
        ++fp;
      }
    }
    twice_scaled_area += static_cast<long double>(fp - fp_before) * static_cast<long double>(tp + tp_before);
    curve.points.push_back({static_cast<double>(fp) / negatives, static_cast<double>(tp) / positives});
  }
  curve.auc = static_cast<double>(twice_scaled_area / (2.0L * positives * negatives));
  return curve;
}

}  // namespace detail

void MetricAccumulator::add(const ProbabilityMap<float>& prob, const BinaryMask& gt) {
  const BinaryMask pred = predict_mask(prob);
  const ConfusionMetrics cm = confusion_metrics(pred, gt);
  dice_sum_ += dice(pred, gt);
  accuracy_sum_ += cm.accuracy;
  iou_sum_ += cm.iou;
  precision_sum_ += cm.precision;
  recall_sum_ += cm.recall;
  psnr_sum_ += psnr(prob, gt);
  bce_sum_ += bce(prob, gt);
  counts_ += cm.counts;
  ++frames_;

  const long positives = (gt != 0).count();
  if (positives > 0 && positives < gt.size()) {
    auc_sum_ += roc_auc(prob, gt).auc;
    ++auc_frames_;
  }
  for (Eigen::Index r = 0; r < prob.rows(); ++r) {
    for (Eigen::Index c = 0; c < prob.cols(); ++c) pooled_.emplace_back(prob(r, c), gt(r, c) != 0);
  }
}

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  r.frames = frames_;
  r.counts = counts_;
  if (frames_ == 0) return r;
  const auto n = static_cast<double>(frames_);
  r.dice = dice_sum_ / n;
  r.accuracy = accuracy_sum_ / n;
  r.iou = iou_sum_ / n;
  r.precision = precision_sum_ / n;
  r.recall = recall_sum_ / n;
  r.psnr = psnr_sum_ / n;
  r.bce = bce_sum_ / n;
  if (auc_frames_ > 0) r.auc_mean = auc_sum_ / static_cast<double>(auc_frames_);
  try {
    r.auc_pooled = detail::roc_from_scores(pooled_).auc;
  } catch (const DataError&) {
    r.auc_pooled.reset();
  }
  return r;
}

nlohmann::json to_json(const MetricReport& report) {
  using nlohmann::json;
  const auto optional_number = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["dice"] = report.dice;
  j["accuracy"] = report.accuracy;
  j["iou"] = report.iou;
  j["psnr"] = std::isinf(report.psnr) ? json("inf") : json(report.psnr);
  j["auc"] = optional_number(report.auc_mean);
  j["auc_mean"] = optional_number(report.auc_mean);
  j["auc_pooled"] = optional_number(report.auc_pooled);
  j["bce"] = report.bce;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["tp"] = report.counts.tp;
  j["fp"] = report.counts.fp;
  j["tn"] = report.counts.tn;
  j["fn"] = report.counts.fn;
  j["frames"] = report.frames;
  return j;
}

}  // namespace stoneseg
