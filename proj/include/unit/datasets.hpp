#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unit/boxes.hpp"
#include "unit/detection_loss.hpp"
#include "unit/image.hpp"
#include "unit/rng.hpp"
#include "unit/vocabulary.hpp"

namespace unit::data {

inline constexpr std::size_t image_size = 64;

inline constexpr std::array<const char*, 3> shape_names{"rectangle", "circle", "triangle"};
inline constexpr std::array<const char*, 3> color_names{"red", "green", "blue"};
inline constexpr std::array<std::array<float, 3>, 3> color_rgb{{{0.9f, 0.15f, 0.15f}, {0.15f, 0.8f, 0.2f}, {0.2f, 0.3f, 0.95f}}};

inline constexpr std::array<const char*, 4> quantifiers{"some", "many", "several", "few"};
inline constexpr std::array<const char*, 3> relations{"above", "below", "near"};
inline constexpr std::array<const char*, 3> relation_synonyms{"over", "under", "beside"};
inline constexpr std::array<const char*, 6> positive_words{"good", "great", "fun", "lovely", "superb", "charming"};
inline constexpr std::array<const char*, 6> negative_words{"bad", "dull", "awful", "boring", "weak", "messy"};
inline constexpr std::array<const char*, 12> filler_words{"movie", "film", "plot", "acting", "story", "was",
                                                          "very",  "quite", "really", "but", "it", "this"};
inline constexpr std::array<const char*, 8> template_words{"count", "exists", "there", "is", "are", "a", "the", "and"};

/// The closed vocabulary shared by every text-bearing task.
inline const Vocabulary& default_vocabulary() {
  static const Vocabulary vocab = [] {
    Vocabulary v;
    for (auto* w : color_names) v.add(w);
    for (auto* w : shape_names) v.add(w);
    for (auto* w : quantifiers) v.add(w);
    for (auto* w : relations) v.add(w);
    for (auto* w : relation_synonyms) v.add(w);
    for (auto* w : template_words) v.add(w);
    for (auto* w : positive_words) v.add(w);
    for (auto* w : negative_words) v.add(w);
    for (auto* w : filler_words) v.add(w);
    return v;
  }();
  return vocab;
}

struct SceneObject {
  int shape = 0;      // index into shape_names
  int color = 0;      // index into color_names
  Box box;            // tight bound of the rendered pixels, normalized
};

struct ShapeScene {
  Image image;
  std::vector<SceneObject> objects;
  float background = 0.0f;
  bool with_attributes = true;

  DetectionTarget target() const {
    DetectionTarget t;
    for (const auto& o : objects) {
      t.classes.push_back(o.shape);
      t.boxes.push_back(o.box);
      if (with_attributes) t.attributes.push_back(o.color);
    }
    return t;
  }

  int count(int shape) const {
    return static_cast<int>(std::count_if(objects.begin(), objects.end(), [&](const auto& o) { return o.shape == shape; }));
  }
  bool has(int color, int shape) const {
    return std::any_of(objects.begin(), objects.end(), [&](const auto& o) { return o.shape == shape && o.color == color; });
  }
};

// Stream salts keep the generators independent for a shared (seed, index).
enum class Stream : std::uint64_t { detection = 11, attribute_detection = 12, vqa = 13, ve = 14, text = 15 };

namespace detail {

inline bool inside_shape(int shape, double px, double py, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  const double lx = px - static_cast<double>(x0), ly = py - static_cast<double>(y0);
  const double fw = static_cast<double>(w), fh = static_cast<double>(h);
  switch (shape) {
    case 0:
      return lx >= 0 && lx < fw && ly >= 0 && ly < fh;
    case 1: {
      const double r = fw / 2;
      return (lx - r) * (lx - r) + (ly - r) * (ly - r) <= r * r;
    }
    default: {
      // Apex at top centre, base along the bottom edge.
      if (ly < 0 || ly >= fh) return false;
      const double half = 0.5 * fw * (ly / fh);
      return std::abs(lx - fw / 2) <= half;
    }
  }
}

}  // namespace detail

/// Renders 1..5 hard-edged shapes on a flat background. Objects keep a gap of at
/// least two pixels so every box is the exact bound of its own pixels.
inline ShapeScene render_scene(Rng& rng, bool with_attributes) {
  ShapeScene scene;
  scene.with_attributes = with_attributes;
  scene.background = static_cast<float>(rng.uniform(0.05, 0.35));
  scene.image = Image(image_size, image_size, scene.background);
  const int wanted = static_cast<int>(rng.uniform_int(1, 5));
  struct Placed {
    std::size_t x0, y0, w, h;
  };
  std::vector<Placed> placed;
  for (int attempt = 0; attempt < 200 && static_cast<int>(placed.size()) < wanted; ++attempt) {
    const int shape = static_cast<int>(rng.uniform_int(3));
    const int color = static_cast<int>(rng.uniform_int(3));
    const auto w = static_cast<std::size_t>(rng.uniform_int(10, 22));
    const auto h = shape == 1 ? w : static_cast<std::size_t>(rng.uniform_int(10, 22));
    const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(image_size - w)));
    const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(image_size - h)));
    const bool clash = std::any_of(placed.begin(), placed.end(), [&](const Placed& p) {
      return x0 < p.x0 + p.w + 2 && p.x0 < x0 + w + 2 && y0 < p.y0 + p.h + 2 && p.y0 < y0 + h + 2;
    });
    if (clash) continue;
    std::size_t minx = image_size, miny = image_size, maxx = 0, maxy = 0;
    for (std::size_t y = y0; y < y0 + h; ++y)
      for (std::size_t x = x0; x < x0 + w; ++x) {
        if (!detail::inside_shape(shape, x + 0.5, y + 0.5, x0, y0, w, h)) continue;
        for (std::size_t c = 0; c < 3; ++c) scene.image.at(y, x, c) = color_rgb[color][c];
        minx = std::min(minx, x), maxx = std::max(maxx, x), miny = std::min(miny, y), maxy = std::max(maxy, y);
      }
    const double s = static_cast<double>(image_size);
    scene.objects.push_back({shape, color, Box::from_xyxy(minx / s, miny / s, (maxx + 1) / s, (maxy + 1) / s)});
    placed.push_back({x0, y0, w, h});
  }
  return scene;
}

inline ShapeScene gen_shapes_scene(std::uint64_t seed, std::uint64_t index, bool with_attributes) {
  Rng rng(derive_seed(seed, index,
                      static_cast<std::uint64_t>(with_attributes ? Stream::attribute_detection : Stream::detection)));
  return render_scene(rng, with_attributes);
}

// ---------------------------------------------------------------------------
// Vision-and-language samples.

inline constexpr int vqa_yes = 6;
inline constexpr int vqa_no = 7;
inline constexpr std::size_t vqa_classes = 8;  // counts 0..5, yes, no

struct VqaSample {
  ShapeScene scene;
  std::string question;
  std::vector<int> tokens;
  int answer = 0;
};

/// Templates "count <shape>" (answer = count) and "exists <color> <shape>"
/// (answer yes/no), half each; existence questions are balanced.
inline VqaSample gen_vqa_sample(std::uint64_t seed, std::uint64_t index) {
  Rng rng(derive_seed(seed, index, static_cast<std::uint64_t>(Stream::vqa)));
  VqaSample s;
  s.scene = render_scene(rng, true);
  if (rng.bernoulli(0.5)) {
    const int shape = static_cast<int>(rng.uniform_int(3));
    s.question = std::string("count ") + shape_names[shape];
    s.answer = s.scene.count(shape);
  } else {
    int color = 0, shape = 0;
    if (rng.bernoulli(0.5)) {
      const auto& o = s.scene.objects[rng.uniform_int(s.scene.objects.size())];
      color = o.color, shape = o.shape;
    } else {
      color = static_cast<int>(rng.uniform_int(3)), shape = static_cast<int>(rng.uniform_int(3));
    }
    s.question = std::string("exists ") + color_names[color] + " " + shape_names[shape];
    s.answer = s.scene.has(color, shape) ? vqa_yes : vqa_no;
  }
  s.tokens = default_vocabulary().tokenize(s.question);
  return s;
}

enum VeLabel : int { ve_entail = 0, ve_neutral = 1, ve_contradict = 2 };

struct VeSample {
  ShapeScene scene;
  std::string caption;
  std::vector<int> tokens;
  int label = 0;
};

/// entail: "a <color> <shape>" for a present pair; contradict: the same template
/// for an absent pair; neutral: "<quantifier> <shape>" for a present shape.
inline VeSample gen_ve_sample(std::uint64_t seed, std::uint64_t index) {
  Rng rng(derive_seed(seed, index, static_cast<std::uint64_t>(Stream::ve)));
  VeSample s;
  s.scene = render_scene(rng, true);
  s.label = static_cast<int>(rng.uniform_int(3));
  if (s.label == ve_entail) {
    const auto& o = s.scene.objects[rng.uniform_int(s.scene.objects.size())];
    s.caption = std::string("a ") + color_names[o.color] + " " + shape_names[o.shape];
  } else if (s.label == ve_neutral) {
    const auto& o = s.scene.objects[rng.uniform_int(s.scene.objects.size())];
    s.caption = std::string(quantifiers[rng.uniform_int(quantifiers.size())]) + " " + shape_names[o.shape];
  } else {
    std::vector<std::pair<int, int>> absent;
    for (int c = 0; c < 3; ++c)
      for (int sh = 0; sh < 3; ++sh)
        if (!s.scene.has(c, sh)) absent.emplace_back(c, sh);
    const auto [c, sh] = absent[rng.uniform_int(absent.size())];
    s.caption = std::string("a ") + color_names[c] + " " + shape_names[sh];
  }
  s.tokens = default_vocabulary().tokenize(s.caption);
  return s;
}

// ---------------------------------------------------------------------------
// Text-only samples.

enum class TextTask { containment, nli3, paraphrase, polarity };

inline TextTask parse_text_task(const std::string& name) {
  if (name == "text_containment") return TextTask::containment;
  if (name == "text_nli3") return TextTask::nli3;
  if (name == "text_paraphrase") return TextTask::paraphrase;
  if (name == "text_polarity") return TextTask::polarity;
  throw std::invalid_argument("unknown text task '" + name + "'");
}

inline std::size_t text_task_classes(TextTask t) { return t == TextTask::nli3 ? 3 : 2; }

struct TextSample {
  std::string first, second;  // second is empty for single sentences
  std::vector<int> tokens;
  int label = 0;
};

namespace detail {

inline std::string pair_phrase(int color, int shape) {
  return std::string(color_names[color]) + " " + shape_names[shape];
}

/// "<det> <color> <shape> <relation> <det> <color> <shape>" with a random
/// determiner and relation surface form.
struct Relation {
  int c1, s1, rel, c2, s2;

  std::string render(Rng& rng) const {
    auto det = [&] { return std::string(rng.bernoulli(0.5) ? "the" : "a"); };
    const std::string r = rng.bernoulli(0.5) ? relations[rel] : relation_synonyms[rel];
    const std::string a = det();
    return a + " " + pair_phrase(c1, s1) + " " + r + " " + det() + " " + pair_phrase(c2, s2);
  }
  bool operator==(const Relation&) const = default;
};

}  // namespace detail

/// containment: premise lists 2-3 pairs with distinct shapes; label 0 when the
///   hypothesis pair is listed, else 1 (listed shape in another color, or an
///   unlisted shape).
/// nli3: premise lists 1-2 pairs with distinct shapes; 0 entail (pair listed),
///   1 neutral (shape not mentioned), 2 contradict (shape listed in another color).
/// paraphrase: 0 when both sentences state the same relation up to determiners and
///   relation synonyms, 1 when one content word is replaced by a word absent from
///   the first sentence.
/// polarity: 1, 3 or 5 lexicon words among fillers; label 1 when positive words
///   are the majority, else 0.
inline TextSample gen_text_sample(std::uint64_t seed, std::uint64_t index, const std::string& task) {
  const TextTask kind = parse_text_task(task);
  Rng rng(derive_seed(seed, index, static_cast<std::uint64_t>(Stream::text), static_cast<std::uint64_t>(kind)));
  const Vocabulary& vocab = default_vocabulary();
  TextSample s;
  auto join_pairs = [](const std::vector<std::pair<int, int>>& pairs) {
    std::string out;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      out += (i ? " and " : "") + detail::pair_phrase(pairs[i].first, pairs[i].second);
    return out;
  };
  switch (kind) {
    case TextTask::containment: {
      std::array<int, 3> shapes{0, 1, 2};
      for (std::size_t i = 2; i > 0; --i) std::swap(shapes[i], shapes[rng.uniform_int(i + 1)]);
      const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 3));
      std::vector<std::pair<int, int>> premise;
      for (std::size_t i = 0; i < n; ++i) premise.emplace_back(static_cast<int>(rng.uniform_int(3)), shapes[i]);
      s.label = static_cast<int>(rng.uniform_int(2));
      std::pair<int, int> hyp = premise[rng.uniform_int(n)];
      if (s.label == 1) {
        if (n < 3 && rng.bernoulli(0.5)) hyp.second = shapes[2];
        else hyp.first = (hyp.first + 1 + static_cast<int>(rng.uniform_int(2))) % 3;
      }
      s.first = join_pairs(premise);
      s.second = detail::pair_phrase(hyp.first, hyp.second);
      break;
    }
    case TextTask::nli3: {
      std::array<int, 3> shapes{0, 1, 2};
      for (std::size_t i = 2; i > 0; --i) std::swap(shapes[i], shapes[rng.uniform_int(i + 1)]);
      const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 2));
      std::vector<std::pair<int, int>> premise;
      for (std::size_t i = 0; i < n; ++i) premise.emplace_back(static_cast<int>(rng.uniform_int(3)), shapes[i]);
      s.label = static_cast<int>(rng.uniform_int(3));
      std::pair<int, int> hyp;
      if (s.label == 0) {
        hyp = premise[rng.uniform_int(n)];
      } else if (s.label == 1) {
        hyp = {static_cast<int>(rng.uniform_int(3)), shapes[n + rng.uniform_int(3 - n)]};
      } else {
        const auto& p = premise[rng.uniform_int(n)];
        hyp = {(p.first + 1 + static_cast<int>(rng.uniform_int(2))) % 3, p.second};
      }
      s.first = join_pairs(premise);
      s.second = detail::pair_phrase(hyp.first, hyp.second);
      break;
    }
    case TextTask::paraphrase: {
      detail::Relation a{static_cast<int>(rng.uniform_int(3)), static_cast<int>(rng.uniform_int(3)),
                         static_cast<int>(rng.uniform_int(3)), static_cast<int>(rng.uniform_int(3)),
                         static_cast<int>(rng.uniform_int(3))};
      detail::Relation b = a;
      s.label = static_cast<int>(rng.uniform_int(2));
      if (s.label == 1) {
        // the replacement word never occurs in the first sentence
        auto unused = [&](int x, int y) {
          std::vector<int> free;
          for (int v = 0; v < 3; ++v)
            if (v != x && v != y) free.push_back(v);
          return free[rng.uniform_int(free.size())];
        };
        switch (rng.uniform_int(5)) {
          case 0: b.c1 = unused(a.c1, a.c2); break;
          case 1: b.s1 = unused(a.s1, a.s2); break;
          case 2: b.rel = unused(a.rel, a.rel); break;
          case 3: b.c2 = unused(a.c1, a.c2); break;
          default: b.s2 = unused(a.s1, a.s2); break;
        }
      }
      s.first = a.render(rng);
      s.second = b.render(rng);
      break;
    }
    case TextTask::polarity: {
      s.label = static_cast<int>(rng.uniform_int(2));
      const int lexicon = 1 + 2 * static_cast<int>(rng.uniform_int(3));
      const int majority = lexicon / 2 + 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(lexicon - lexicon / 2)));
      const int positives = s.label == 1 ? majority : lexicon - majority;
      const int fillers = static_cast<int>(rng.uniform_int(3, 6));
      std::vector<std::string> words;
      for (int i = 0; i < positives; ++i) words.push_back(positive_words[rng.uniform_int(positive_words.size())]);
      for (int i = positives; i < lexicon; ++i) words.push_back(negative_words[rng.uniform_int(negative_words.size())]);
      for (int i = 0; i < fillers; ++i) words.push_back(filler_words[rng.uniform_int(filler_words.size())]);
      for (std::size_t i = words.size() - 1; i > 0; --i) std::swap(words[i], words[rng.uniform_int(i + 1)]);
      for (const auto& w : words) s.first += (s.first.empty() ? "" : " ") + w;
      break;
    }
  }
  s.tokens = s.second.empty() ? vocab.tokenize(s.first) : vocab.tokenize_pair(s.first, s.second);
  return s;
}

}  // namespace unit::data
