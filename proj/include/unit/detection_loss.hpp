#pragma once

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <vector>

#include "unit/heads.hpp"
#include "unit/matching.hpp"

namespace unit {

/// Ground truth for one image.
struct DetectionTarget {
  std::vector<int> classes;
  std::vector<Box> boxes;
  std::vector<int> attributes;  // empty when the dataset has no attribute labels

  std::size_t size() const { return classes.size(); }
};

struct DetectionLossWeights {
  double cls = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
  double background = 0.1;
  double attribute = 0.5;

  MatchingWeights matching() const { return {cls, l1, giou}; }
};

template <class T>
struct DetectionLossTerms {
  Tensor<T> total;
  std::vector<double> per_layer;
  std::vector<std::vector<Assignment>> assignments;  // [layer][image]
};

/// Computes attribute logits for one layer given a class id per query slot
/// (matched slots carry their ground-truth class).
template <class T>
using AttributeFn = std::function<Tensor<T>(std::size_t layer, std::span<const int> classes)>;

/// Hungarian matching per image, then per layer: class cross-entropy over all
/// slots (background down-weighted), L1 and 1-GIoU on matched boxes normalized by
/// the ground-truth count, and attribute cross-entropy on matched slots. The
/// layer losses are summed with equal weight. Assignments are constants.
template <class T>
DetectionLossTerms<T> detection_loss(const std::vector<DetectionOutputs<T>>& layers,
                                     const std::vector<DetectionTarget>& targets, const DetectionLossWeights& w,
                                     const AttributeFn<T>& attribute_fn = {}) {
  if (layers.empty()) throw std::invalid_argument("detection_loss: no layer outputs");
  DetectionLossTerms<T> terms;
  const std::size_t b = layers.front().batch(), q = layers.front().queries(), k = layers.front().num_classes();
  if (targets.size() != b) throw std::invalid_argument("detection_loss: target count does not match batch");
  std::size_t gt_total = 0;
  for (const auto& t : targets) gt_total += t.size();
  const T norm = T(1) / T(std::max<std::size_t>(gt_total, 1));
  std::vector<T> class_weights(k + 1, T(1));
  class_weights[k] = T(w.background);

  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& out = layers[l];
    std::vector<int> slot_class(b * q, static_cast<int>(k));
    std::vector<int> slot_target(b * q, -1);
    std::vector<Assignment> assignments(b);
    std::vector<double> probs(q * (k + 1)), boxes(q * 4);
    for (std::size_t i = 0; i < b; ++i) {
      if (targets[i].size() == 0) continue;
      for (std::size_t j = 0; j < q; ++j) {
        const std::size_t row = i * q + j;
        double mx = -1e300, s = 0;
        for (std::size_t c = 0; c <= k; ++c) mx = std::max(mx, double(out.class_logits[row * (k + 1) + c]));
        for (std::size_t c = 0; c <= k; ++c)
          s += (probs[j * (k + 1) + c] = std::exp(double(out.class_logits[row * (k + 1) + c]) - mx));
        for (std::size_t c = 0; c <= k; ++c) probs[j * (k + 1) + c] /= s;
        for (std::size_t c = 0; c < 4; ++c) boxes[j * 4 + c] = double(out.boxes[row * 4 + c]);
      }
      CostMatrix cost = matching_cost({q, k + 1, probs, boxes}, targets[i].classes, targets[i].boxes, w.matching());
      assignments[i] = hungarian_match(cost);
      for (std::size_t g = 0; g < targets[i].size(); ++g) {
        const std::size_t slot = i * q + static_cast<std::size_t>(assignments[i].query_of_target[g]);
        slot_class[slot] = targets[i].classes[g];
        slot_target[slot] = static_cast<int>(g);
      }
    }

    Tensor<T> loss = ad::scale(ad::cross_entropy<T>(ad::reshape(out.class_logits, {b * q, k + 1}), slot_class,
                                                    class_weights),
                               T(w.cls));

    // Matched slots in slot order, so the sums do not depend on target order.
    std::vector<int> matched_rows;
    std::vector<T> matched_boxes;
    std::vector<int> matched_attrs;
    for (std::size_t slot = 0; slot < b * q; ++slot) {
      if (slot_target[slot] < 0) continue;
      const auto& t = targets[slot / q];
      const Box& bx = t.boxes[slot_target[slot]];
      matched_rows.push_back(static_cast<int>(slot));
      matched_boxes.insert(matched_boxes.end(), {T(bx.cx), T(bx.cy), T(bx.w), T(bx.h)});
      if (!t.attributes.empty()) matched_attrs.push_back(t.attributes[slot_target[slot]]);
    }
    if (!matched_rows.empty()) {
      const std::size_t n = matched_rows.size();
      Tensor<T> pred = ad::gather_rows(ad::reshape(out.boxes, {b * q, 4}), matched_rows);
      Tensor<T> tgt(Shape{n, 4}, matched_boxes);
      loss = ad::add(loss, ad::scale(ad::l1_distance(pred, tgt), T(w.l1) * norm));
      Tensor<T> one_minus_giou = ad::sub(Tensor<T>::full({n}, T(1)), ad::generalized_iou(pred, tgt));
      loss = ad::add(loss, ad::scale(ad::sum(one_minus_giou), T(w.giou) * norm));

      Tensor<T> attr_logits = out.attribute_logits;
      if (attribute_fn) attr_logits = attribute_fn(l, slot_class);
      if (attr_logits.defined() && matched_attrs.size() == n) {
        const std::size_t a = attr_logits.shape().back();
        Tensor<T> matched = ad::gather_rows(ad::reshape(attr_logits, {b * q, a}), matched_rows);
        loss = ad::add(loss, ad::scale(ad::cross_entropy<T>(matched, matched_attrs), T(w.attribute)));
      }
    }
    terms.per_layer.push_back(double(loss.item()));
    terms.total = terms.total.defined() ? ad::add(terms.total, loss) : loss;
    terms.assignments.push_back(std::move(assignments));
  }
  return terms;
}

}  // namespace unit
