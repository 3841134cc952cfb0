#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "unit/augment.hpp"
#include "unit/batching.hpp"
#include "unit/datasets.hpp"

using namespace unit;

namespace {

bool same_color(const Image& im, std::size_t y, std::size_t x, int color) {
  for (std::size_t c = 0; c < 3; ++c)
    if (im.at(y, x, c) != data::color_rgb[color][c]) return false;
  return true;
}

// Tight pixel bound of `color` inside the stored box grown by one pixel.
std::array<long, 4> mask_bound(const data::ShapeScene& s, const data::SceneObject& o) {
  const long n = static_cast<long>(data::image_size);
  const long x1 = std::max(0L, std::lround(o.box.x1() * n) - 1), x2 = std::min(n, std::lround(o.box.x2() * n) + 1);
  const long y1 = std::max(0L, std::lround(o.box.y1() * n) - 1), y2 = std::min(n, std::lround(o.box.y2() * n) + 1);
  std::array<long, 4> b{n, n, -1, -1};
  for (long y = y1; y < y2; ++y)
    for (long x = x1; x < x2; ++x)
      if (same_color(s.image, static_cast<std::size_t>(y), static_cast<std::size_t>(x), o.color)) {
        b[0] = std::min(b[0], x), b[1] = std::min(b[1], y), b[2] = std::max(b[2], x + 1), b[3] = std::max(b[3], y + 1);
      }
  return b;
}

}  // namespace

TEST(Shapes, ObjectCountAndDeterminism) {
  for (std::uint64_t i = 0; i < 500; ++i) {
    auto a = data::gen_shapes_scene(3, i, true);
    ASSERT_GE(a.objects.size(), 1u);
    ASSERT_LE(a.objects.size(), 5u);
    auto b = data::gen_shapes_scene(3, i, true);
    ASSERT_EQ(a.image.pixels, b.image.pixels);
  }
}

TEST(Shapes, BoxesMatchPixelMask) {
  const double px = 1.0 / static_cast<double>(data::image_size);
  for (std::uint64_t i = 0; i < 300; ++i) {
    auto s = data::gen_shapes_scene(5, i, i % 2 == 0);
    for (const auto& o : s.objects) {
      auto b = mask_bound(s, o);
      ASSERT_GE(b[2], 0) << "object has no pixels";
      EXPECT_LE(std::abs(b[0] * px - o.box.x1()), px);
      EXPECT_LE(std::abs(b[1] * px - o.box.y1()), px);
      EXPECT_LE(std::abs(b[2] * px - o.box.x2()), px);
      EXPECT_LE(std::abs(b[3] * px - o.box.y2()), px);
    }
  }
}

TEST(Shapes, AttributeLabelsOnlyWhenRequested) {
  EXPECT_TRUE(data::gen_shapes_scene(1, 0, false).target().attributes.empty());
  auto t = data::gen_shapes_scene(1, 0, true).target();
  EXPECT_EQ(t.attributes.size(), t.size());
}

TEST(Vqa, AnswersFollowTheScene) {
  std::map<int, int> freq;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto s = data::gen_vqa_sample(2, static_cast<std::uint64_t>(i));
    ++freq[s.answer];
    std::istringstream q(s.question);
    std::string op, a, b;
    q >> op >> a >> b;
    auto idx = [](const auto& names, const std::string& w) {
      for (std::size_t k = 0; k < names.size(); ++k)
        if (w == names[k]) return static_cast<int>(k);
      return -1;
    };
    if (op == "count") {
      ASSERT_EQ(s.answer, s.scene.count(idx(data::shape_names, a)));
    } else {
      ASSERT_EQ(op, "exists");
      ASSERT_EQ(s.answer == data::vqa_yes, s.scene.has(idx(data::color_names, a), idx(data::shape_names, b)));
    }
    ASSERT_EQ(s.tokens.front(), Vocabulary::cls_id);
  }
  for (const auto& [answer, count] : freq) EXPECT_LT(count, n / 2) << "answer " << answer;
}

TEST(Ve, LabelsFollowRulesAndAreBalanced) {
  std::array<int, 3> freq{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto s = data::gen_ve_sample(4, static_cast<std::uint64_t>(i));
    ++freq[static_cast<std::size_t>(s.label)];
    std::istringstream c(s.caption);
    std::string first, a, b;
    c >> first >> a >> b;
    if (first == "a") {
      int color = -1, shape = -1;
      for (int k = 0; k < 3; ++k) {
        if (a == data::color_names[k]) color = k;
        if (b == data::shape_names[k]) shape = k;
      }
      ASSERT_EQ(s.label, s.scene.has(color, shape) ? data::ve_entail : data::ve_contradict);
    } else {
      ASSERT_EQ(s.label, data::ve_neutral);
    }
  }
  for (int f : freq) EXPECT_NEAR(static_cast<double>(f) / n, 1.0 / 3.0, 0.05);
}

TEST(Text, RulesHold) {
  for (std::uint64_t i = 0; i < 2000; ++i) {
    auto p = data::gen_text_sample(1, i, "text_polarity");
    int pos = 0, neg = 0;
    std::istringstream is(p.first);
    for (std::string w; is >> w;) {
      pos += std::count(data::positive_words.begin(), data::positive_words.end(), w);
      neg += std::count(data::negative_words.begin(), data::negative_words.end(), w);
    }
    ASSERT_EQ(p.label, pos > neg ? 1 : 0);

    auto c = data::gen_text_sample(1, i, "text_containment");
    ASSERT_EQ(c.label == 0, c.first.find(c.second) != std::string::npos);

    auto q = data::gen_text_sample(1, i, "text_paraphrase");
    auto strip = [&](const std::string& s) {
      std::string out;
      std::istringstream ss(s);
      for (std::string w; ss >> w;) {
        if (w == "the" || w == "a") continue;
        for (std::size_t r = 0; r < 3; ++r)
          if (w == data::relation_synonyms[r]) w = data::relations[r];
        out += w + " ";
      }
      return out;
    };
    ASSERT_EQ(q.label == 0, strip(q.first) == strip(q.second));

    auto t = data::gen_text_sample(1, i, "text_nli3");
    ASSERT_LT(t.label, 3);
    ASSERT_EQ(t.label == 0, t.first.find(t.second) != std::string::npos);
    ASSERT_EQ(t.tokens[0], Vocabulary::cls_id);
    for (int id : t.tokens) ASSERT_NE(id, Vocabulary::unk_id);
  }
}

TEST(Text, PolarityMajorityExampleAndDuplicatePair) {
  // 3 positive, 1 negative lexicon word: the majority rule says positive.
  int pos = 0;
  for (const char* w : {"good", "great", "fun", "bad"}) pos += std::count(data::positive_words.begin(), data::positive_words.end(), std::string(w));
  EXPECT_EQ(pos, 3);
  bool found_duplicate = false;
  for (std::uint64_t i = 0; i < 200 && !found_duplicate; ++i) {
    auto s = data::gen_text_sample(0, i, "text_paraphrase");
    if (s.first == s.second) {
      EXPECT_EQ(s.label, 0);
      found_duplicate = true;
    }
  }
  EXPECT_TRUE(found_duplicate);
}

TEST(Text, DeterministicAndBalanced) {
  for (const char* task : {"text_containment", "text_nli3", "text_paraphrase", "text_polarity"}) {
    std::array<int, 3> freq{};
    const int n = 6000;
    for (int i = 0; i < n; ++i) {
      auto a = data::gen_text_sample(9, static_cast<std::uint64_t>(i), task);
      auto b = data::gen_text_sample(9, static_cast<std::uint64_t>(i), task);
      ASSERT_EQ(a.tokens, b.tokens);
      ++freq[static_cast<std::size_t>(a.label)];
    }
    const std::size_t c = data::text_task_classes(data::parse_text_task(task));
    for (std::size_t k = 0; k < c; ++k) EXPECT_NEAR(static_cast<double>(freq[k]) / n, 1.0 / static_cast<double>(c), 0.05) << task;
  }
  EXPECT_THROW(data::gen_text_sample(0, 0, "text_unknown"), std::invalid_argument);
}

TEST(Splits, TrainAndValidationAreDisjoint) {
  EXPECT_EQ(sample_index(Split::validation, 0), validation_offset);
  EXPECT_LT(sample_index(Split::train, 1000000), validation_offset);
  int identical = 0;
  for (std::uint64_t i = 0; i < 200; ++i)
    identical += data::gen_shapes_scene(0, sample_index(Split::train, i), false).image.pixels ==
                 data::gen_shapes_scene(0, sample_index(Split::validation, i), false).image.pixels;
  EXPECT_EQ(identical, 0);
}

TEST(Augment, ResizeBoundsAndBoxesInsideUnitSquare) {
  AugmentConfig cfg;
  Rng rng(12);
  for (std::uint64_t i = 0; i < 300; ++i) {
    auto s = data::gen_shapes_scene(1, i, true);
    AugmentRecord rec;
    auto [im, t] = scale_crop_augment(s.image, s.target(), rng, cfg, &rec);
    EXPECT_GE(rec.side, cfg.min_side);
    EXPECT_LE(rec.side, cfg.max_side);
    EXPECT_GE(rec.crop_h, cfg.min_crop);
    EXPECT_LE(rec.crop_w, cfg.max_crop);
    EXPECT_EQ(im.height, data::image_size);
    EXPECT_EQ(im.width, data::image_size);
    EXPECT_EQ(t.attributes.size(), t.size());
    for (const auto& b : t.boxes) {
      EXPECT_GE(b.x1(), -1e-12);
      EXPECT_GE(b.y1(), -1e-12);
      EXPECT_LE(b.x2(), 1 + 1e-12);
      EXPECT_LE(b.y2(), 1 + 1e-12);
      EXPECT_GT(b.w, 0);
      EXPECT_GT(b.h, 0);
    }
  }
}

TEST(Augment, FullImageCropKeepsTargets) {
  auto s = data::gen_shapes_scene(2, 7, true);
  DetectionTarget t = s.target();
  AugmentConfig cfg{64, 64, 64, 64, 64, 1.0};
  Rng rng(1);
  auto [im, out] = scale_crop_augment(s.image, t, rng, cfg);
  EXPECT_EQ(im.pixels, s.image.pixels);
  ASSERT_EQ(out.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_NEAR(out.boxes[i].cx, t.boxes[i].cx, 1e-12);
    EXPECT_NEAR(out.boxes[i].w, t.boxes[i].w, 1e-12);
  }
  DetectionTarget same = crop_target(t, 64, 64, 0, 0, 64, 64, 1.0);
  EXPECT_EQ(same.classes, t.classes);
}

TEST(Augment, ClippedBoxesAreDroppedWithTheirLabels) {
  DetectionTarget t;
  t.classes = {0, 1};
  t.attributes = {2, 1};
  t.boxes = {Box::from_xyxy(0.0, 0.0, 0.25, 0.25), Box::from_xyxy(0.6, 0.6, 0.9, 0.9)};
  // 64x64 image, crop the lower-right 32x32 window: only the second box survives.
  DetectionTarget out = crop_target(t, 64, 64, 32, 32, 32, 32, 1.0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.classes[0], 1);
  EXPECT_EQ(out.attributes[0], 1);
  EXPECT_NEAR(out.boxes[0].x1(), (0.6 * 64 - 32) / 32, 1e-12);
}

TEST(Batching, EvalBatchesUseTheFixedResize) {
  const TaskSpec spec = default_tasks()[0];
  Batch a = make_batch(spec, 0, {sample_index(Split::validation, 3)});
  Batch b = make_batch(spec, 0, {sample_index(Split::validation, 3)});
  EXPECT_EQ(a.images[0].pixels, b.images[0].pixels);
  auto scene = data::gen_shapes_scene(0, sample_index(Split::validation, 3), false);
  EXPECT_EQ(a.images[0].pixels, test_time_resize(scene.image).pixels);
  EXPECT_EQ(a.targets[0].classes, scene.target().classes);
}

TEST(Batching, EveryDefaultTaskProducesItsInputs) {
  for (const auto& spec : default_tasks()) {
    Batch b = make_batch(spec, 1, {0, 1, 2});
    EXPECT_EQ(b.size(), 3u) << spec.name;
    EXPECT_EQ(b.images.empty(), !spec.uses_image) << spec.name;
    EXPECT_EQ(b.tokens.batch() == 0, !spec.uses_text) << spec.name;
    if (spec.head == HeadType::classifier) {
      ASSERT_EQ(b.labels.size(), 3u);
      for (int l : b.labels) EXPECT_LT(static_cast<std::size_t>(l), spec.num_classes) << spec.name;
    }
  }
}
