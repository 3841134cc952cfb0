#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/batching.hpp"
#include "unit/boxes.hpp"
#include "unit/heads.hpp"

namespace unit {

inline std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

/// Ranked predictions of one class at one IoU threshold.
struct PRCurve {
  std::vector<char> true_positive;  // in rank order
  std::size_t ground_truths = 0;

  std::vector<double> precision() const {
    std::vector<double> p;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < true_positive.size(); ++i) {
      tp += true_positive[i] ? 1 : 0;
      p.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    }
    return p;
  }
  std::vector<double> recall() const {
    std::vector<double> r;
    std::size_t tp = 0;
    for (char hit : true_positive) {
      tp += hit ? 1 : 0;
      r.push_back(ground_truths ? static_cast<double>(tp) / static_cast<double>(ground_truths) : 0.0);
    }
    return r;
  }

  /// 101-point interpolated average precision.
  double average_precision() const {
    if (ground_truths == 0) return 0.0;
    std::vector<double> p = precision();
    const std::vector<double> r = recall();
    for (std::size_t i = p.size(); i-- > 1;) p[i - 1] = std::max(p[i - 1], p[i]);
    double sum = 0;
    std::size_t k = 0;
    for (int i = 0; i <= 100; ++i) {
      const double level = i / 100.0;
      while (k < r.size() && r[k] < level) ++k;
      if (k < r.size()) sum += p[k];
    }
    return sum / 101.0;
  }
};

/// Greedy matching in score order (ties: earlier prediction first), each
/// prediction taking the highest-IoU unmatched ground truth of its class.
inline PRCurve pr_curve(const std::vector<std::vector<Detection>>& predictions,
                        const std::vector<DetectionTarget>& ground_truths, int cls, double threshold) {
  if (predictions.size() != ground_truths.size())
    throw std::invalid_argument("mAP: prediction and ground-truth image counts differ");
  struct Ranked {
    double score;
    std::size_t image, order;
    Box box;
  };
  std::vector<Ranked> ranked;
  PRCurve curve;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    for (const auto& d : predictions[i])
      if (d.label == cls) ranked.push_back({d.score, i, ranked.size(), d.box});
    for (int c : ground_truths[i].classes) curve.ground_truths += c == cls ? 1 : 0;
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
  std::vector<std::vector<char>> taken(ground_truths.size());
  for (std::size_t i = 0; i < ground_truths.size(); ++i) taken[i].assign(ground_truths[i].size(), 0);
  for (const auto& p : ranked) {
    const auto& gt = ground_truths[p.image];
    int best = -1;
    double best_iou = threshold;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (gt.classes[g] != cls || taken[p.image][g]) continue;
      const double v = iou(p.box, gt.boxes[g]);
      if (v >= best_iou && (best < 0 || v > best_iou)) best = static_cast<int>(g), best_iou = v;
    }
    if (best >= 0) taken[p.image][best] = 1;
    curve.true_positive.push_back(best >= 0 ? 1 : 0);
  }
  return curve;
}

/// Mean AP over classes that have ground truth and over the given thresholds.
inline double mean_average_precision(const std::vector<std::vector<Detection>>& predictions,
                                     const std::vector<DetectionTarget>& ground_truths,
                                     const std::vector<double>& iou_thresholds, std::size_t num_classes) {
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    bool present = false;
    for (const auto& gt : ground_truths)
      present = present || std::find(gt.classes.begin(), gt.classes.end(), static_cast<int>(c)) != gt.classes.end();
    if (!present) continue;
    for (double t : iou_thresholds) {
      sum += pr_curve(predictions, ground_truths, static_cast<int>(c), t).average_precision();
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("accuracy: label lists differ in length");
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

struct MetricValue {
  std::string task;
  std::string name;
  double value = 0.0;
};

struct EvalConfig {
  std::size_t samples = 256;
  std::size_t batch_size = 32;
  double score_threshold = 0.0;
};

/// Validation metrics of one task: mAP and mAP@0.5 for detection, accuracy
/// otherwise. Uses the fixed test-time resize and no dropout.
template <class T>
std::vector<MetricValue> evaluate(const UnitModel<T>& model, const std::string& task, std::uint64_t data_seed,
                                  const EvalConfig& cfg) {
  const TaskSpec& spec = model.task(task);
  if (!known_dataset(task)) throw std::invalid_argument("evaluate: no dataset for task '" + task + "'");
  std::vector<std::vector<Detection>> predictions;
  std::vector<DetectionTarget> truths;
  std::vector<int> predicted, gold;
  for (std::size_t start = 0; start < cfg.samples; start += cfg.batch_size) {
    std::vector<std::uint64_t> indices;
    for (std::size_t i = start; i < std::min(cfg.samples, start + cfg.batch_size); ++i)
      indices.push_back(sample_index(Split::validation, i));
    Batch batch = make_batch(spec, data_seed, indices);
    if (spec.head == HeadType::detection) {
      auto dets = postprocess_detections(model.detect(batch), cfg.score_threshold);
      predictions.insert(predictions.end(), dets.begin(), dets.end());
      truths.insert(truths.end(), batch.targets.begin(), batch.targets.end());
    } else {
      Tensor<T> logits = model.classify(batch);
      const std::size_t c = logits.dim(1);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k)
          if (logits[i * c + k] > logits[i * c + best]) best = k;
        predicted.push_back(static_cast<int>(best));
      }
      gold.insert(gold.end(), batch.labels.begin(), batch.labels.end());
    }
  }
  if (spec.head == HeadType::detection) {
    return {{task, "mAP", mean_average_precision(predictions, truths, coco_iou_thresholds(), spec.num_classes)},
            {task, "mAP50", mean_average_precision(predictions, truths, {0.5}, spec.num_classes)}};
  }
  return {{task, "accuracy", accuracy(predicted, gold)}};
}

}  // namespace unit
