#include <cmath>

#include <gtest/gtest.h>

#include "unit/detection_loss.hpp"

using namespace unit;
using TD = ad::Tensor<double>;

namespace {

constexpr std::size_t kQueries = 5, kClasses = 3;

DetectionOutputs<double> random_outputs(Rng& rng, std::size_t batch) {
  std::vector<double> logits(batch * kQueries * (kClasses + 1)), boxes(batch * kQueries * 4);
  for (auto& v : logits) v = rng.normal();
  for (std::size_t i = 0; i < batch * kQueries; ++i) {
    boxes[4 * i] = rng.uniform(0.2, 0.8);
    boxes[4 * i + 1] = rng.uniform(0.2, 0.8);
    boxes[4 * i + 2] = rng.uniform(0.05, 0.4);
    boxes[4 * i + 3] = rng.uniform(0.05, 0.4);
  }
  return {TD({batch, kQueries, kClasses + 1}, logits), TD({batch, kQueries, 4}, boxes), {}};
}

DetectionTarget random_target(Rng& rng, std::size_t n) {
  DetectionTarget t;
  for (std::size_t i = 0; i < n; ++i) {
    t.classes.push_back(static_cast<int>(rng.uniform_int(std::uint64_t{kClasses})));
    t.boxes.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)});
  }
  return t;
}

}  // namespace

TEST(DetectionLoss, TotalIsSumOfIndependentLayerLosses) {
  Rng rng(1);
  std::vector<DetectionOutputs<double>> layers{random_outputs(rng, 2), random_outputs(rng, 2), random_outputs(rng, 2)};
  std::vector<DetectionTarget> targets{random_target(rng, 3), random_target(rng, 1)};
  DetectionLossWeights w;
  auto terms = detection_loss(layers, targets, w);
  double sum = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const double alone = detection_loss<double>({layers[l]}, targets, w).total.item();
    EXPECT_NEAR(terms.per_layer[l], alone, 1e-12);
    sum += alone;
  }
  EXPECT_NEAR(terms.total.item(), sum, 1e-12);
  EXPECT_EQ(terms.assignments.size(), 3u);
}

TEST(DetectionLoss, GroundTruthOrderDoesNotMatter) {
  Rng rng(2);
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<DetectionOutputs<double>> layers{random_outputs(rng, 1), random_outputs(rng, 1)};
    DetectionTarget t = random_target(rng, 4), r;
    for (int i = 3; i >= 0; --i) {
      r.classes.push_back(t.classes[i]);
      r.boxes.push_back(t.boxes[i]);
    }
    EXPECT_EQ(detection_loss<double>(layers, {t}, {}).total.item(), detection_loss<double>(layers, {r}, {}).total.item());
  }
}

TEST(DetectionLoss, QueryPermutationInvariance) {
  Rng rng(3);
  auto out = random_outputs(rng, 1);
  DetectionTarget t = random_target(rng, 2);
  // Reverse the query order of logits and boxes.
  std::vector<double> lg(out.class_logits.size()), bx(out.boxes.size());
  for (std::size_t j = 0; j < kQueries; ++j) {
    for (std::size_t c = 0; c <= kClasses; ++c)
      lg[(kQueries - 1 - j) * (kClasses + 1) + c] = out.class_logits[j * (kClasses + 1) + c];
    for (std::size_t c = 0; c < 4; ++c) bx[(kQueries - 1 - j) * 4 + c] = out.boxes[j * 4 + c];
  }
  DetectionOutputs<double> rev{TD(out.class_logits.shape(), lg), TD(out.boxes.shape(), bx), {}};
  EXPECT_NEAR(detection_loss<double>({out}, {t}, {}).total.item(), detection_loss<double>({rev}, {t}, {}).total.item(),
              1e-12);
}

TEST(DetectionLoss, NearPerfectPredictionsGiveTinyLoss) {
  DetectionTarget t;
  t.classes = {2, 0};
  t.boxes = {{0.3, 0.3, 0.2, 0.1}, {0.7, 0.6, 0.1, 0.3}};
  std::vector<double> logits(kQueries * (kClasses + 1), 0.0), boxes(kQueries * 4, 0.5);
  for (std::size_t j = 0; j < kQueries; ++j) logits[j * (kClasses + 1) + kClasses] = 50;  // background
  logits[0 * (kClasses + 1) + kClasses] = 0, logits[0 * (kClasses + 1) + 2] = 50;
  logits[3 * (kClasses + 1) + kClasses] = 0, logits[3 * (kClasses + 1) + 0] = 50;
  boxes[0] = 0.3, boxes[1] = 0.3, boxes[2] = 0.2, boxes[3] = 0.1;
  boxes[12] = 0.7, boxes[13] = 0.6, boxes[14] = 0.1, boxes[15] = 0.3;
  DetectionOutputs<double> out{TD({1, kQueries, kClasses + 1}, logits), TD({1, kQueries, 4}, boxes), {}};
  const std::size_t layers = 3;
  std::vector<DetectionOutputs<double>> all(layers, out);
  auto terms = detection_loss(all, {t}, {});
  EXPECT_LT(terms.total.item(), 1e-6 * layers);
  EXPECT_EQ(terms.assignments[0][0].query_of_target, (std::vector<int>{0, 3}));
}

TEST(DetectionLoss, NoTargetsIsAllBackgroundClassification) {
  Rng rng(4);
  auto out = random_outputs(rng, 2);
  std::vector<int> bg(2 * kQueries, static_cast<int>(kClasses));
  std::vector<double> cw(kClasses + 1, 1.0);
  cw[kClasses] = 0.1;
  const double expected =
      ad::cross_entropy<double>(ad::reshape(out.class_logits, {2 * kQueries, kClasses + 1}), bg, cw).item();
  EXPECT_NEAR(detection_loss<double>({out}, {DetectionTarget{}, DetectionTarget{}}, {}).total.item(), expected, 1e-12);
}

TEST(DetectionLoss, AttributeTermUsesMatchedSlotsOnly) {
  Rng rng(5);
  auto out = random_outputs(rng, 1);
  DetectionTarget t = random_target(rng, 2);
  t.attributes = {1, 0};
  std::vector<double> al(kQueries * 2);
  for (auto& v : al) v = rng.normal();
  out.attribute_logits = TD({1, kQueries, 2}, al);
  DetectionLossWeights w;
  const double with = detection_loss<double>({out}, {t}, w).total.item();
  w.attribute = 0;
  const double without = detection_loss<double>({out}, {t}, w).total.item();
  const auto a = detection_loss<double>({out}, {t}, w).assignments[0][0];
  double ce = 0;
  for (std::size_t g = 0; g < 2; ++g) {
    const std::size_t s = static_cast<std::size_t>(a.query_of_target[g]);
    const double l0 = al[2 * s], l1 = al[2 * s + 1];
    const double lse = std::log(std::exp(l0) + std::exp(l1));
    ce += lse - (t.attributes[g] ? l1 : l0);
  }
  EXPECT_NEAR(with - without, 0.5 * ce / 2, 1e-12);
}

TEST(DetectionLoss, BatchSizeMismatchIsAnError) {
  Rng rng(6);
  EXPECT_THROW(detection_loss<double>({random_outputs(rng, 2)}, {DetectionTarget{}}, {}), std::invalid_argument);
}
