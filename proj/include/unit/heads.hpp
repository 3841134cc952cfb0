#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/boxes.hpp"
#include "unit/transformer.hpp"

namespace unit {

/// Class, box and (optionally) attribute outputs of one decoder layer.
template <class T>
struct DetectionOutputs {
  Tensor<T> class_logits;      // [B, q, K+1]; index K is background
  Tensor<T> boxes;             // [B, q, 4] in (0,1), (cx, cy, w, h)
  Tensor<T> attribute_logits;  // [B, q, A]; undefined without an attribute head

  std::size_t batch() const { return class_logits.dim(0); }
  std::size_t queries() const { return class_logits.dim(1); }
  std::size_t num_classes() const { return class_logits.dim(2) - 1; }
};

template <class T>
class DetectionHeads {
 public:
  static constexpr std::size_t class_embedding_width = 16;

  DetectionHeads() = default;

  DetectionHeads(ParameterStore<T>& store, const std::string& name, std::size_t width, std::size_t num_classes,
                 std::size_t num_attributes, Rng& rng)
      : num_classes_(num_classes) {
    if (num_classes == 0) throw std::invalid_argument(name + ": detection head needs at least one class");
    class_head_ = Linear<T>::make(store, name + ".class", width, num_classes + 1, rng);
    box_mlp_[0] = Linear<T>::make(store, name + ".box0", width, width, rng);
    box_mlp_[1] = Linear<T>::make(store, name + ".box1", width, width, rng);
    box_mlp_[2] = Linear<T>::make(store, name + ".box2", width, 4, rng);
    if (num_attributes > 0) {
      class_embed_ = store.add(name + ".attr_class_embed", {num_classes + 1, class_embedding_width}, Init::normal, rng,
                               1.0);
      attribute_head_ = Linear<T>::make(store, name + ".attr", width + class_embedding_width, num_attributes, rng);
    }
  }

  std::size_t num_classes() const { return num_classes_; }
  bool has_attributes() const { return class_embed_.defined(); }

  Tensor<T> class_logits(const Tensor<T>& h) const { return class_head_(h); }

  Tensor<T> boxes(const Tensor<T>& h) const {
    Tensor<T> x = ad::relu(box_mlp_[0](h));
    x = ad::relu(box_mlp_[1](x));
    return ad::sigmoid(box_mlp_[2](x));
  }

  /// Attribute logits conditioned on a class per query ([B*q] class ids,
  /// background allowed).
  Tensor<T> attribute_logits(const Tensor<T>& h, std::span<const int> classes) const {
    if (!has_attributes()) return {};
    Tensor<T> emb = ad::embedding(class_embed_, classes, {h.dim(0), h.dim(1)});
    return attribute_head_(ad::concat<T>({h, emb}, 2));
  }

  /// Heads on one layer; attributes are conditioned on the predicted class.
  DetectionOutputs<T> operator()(const Tensor<T>& h) const {
    DetectionOutputs<T> out{class_logits(h), boxes(h), {}};
    if (has_attributes()) out.attribute_logits = attribute_logits(h, argmax_classes(out.class_logits));
    return out;
  }

  static std::vector<int> argmax_classes(const Tensor<T>& logits) {
    const std::size_t c = logits.shape().back(), n = logits.size() / c;
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (logits[i * c + k] > logits[i * c + best]) best = k;
      out[i] = static_cast<int>(best);
    }
    return out;
  }

 private:
  std::size_t num_classes_ = 0;
  Linear<T> class_head_;
  std::array<Linear<T>, 3> box_mlp_;
  Tensor<T> class_embed_;
  Linear<T> attribute_head_;
};

/// Shared heads on every decoder layer when training, on the top layer only
/// otherwise.
template <class T>
std::vector<DetectionOutputs<T>> detection_heads(const std::vector<Tensor<T>>& decoder_layers,
                                                 const DetectionHeads<T>& heads, bool train) {
  if (decoder_layers.empty()) throw std::invalid_argument("detection_heads: no decoder outputs");
  std::vector<DetectionOutputs<T>> out;
  if (train) {
    for (const auto& h : decoder_layers) out.push_back(heads(h));
  } else {
    out.push_back(heads(decoder_layers.back()));
  }
  return out;
}

/// Two-layer GeLU classifier on the first query slot of the top decoder layer:
/// logits = W_1 GeLU(W_2 h + b_2) + b_1.
template <class T>
class ClassifierHead {
 public:
  ClassifierHead() = default;

  ClassifierHead(ParameterStore<T>& store, const std::string& name, std::size_t width, std::size_t num_classes,
                 double dropout, Rng& rng)
      : dropout_(dropout) {
    if (num_classes < 2) throw std::invalid_argument(name + ": classifier needs at least two classes");
    hidden_ = Linear<T>::make(store, name + ".hidden", width, width, rng);
    output_ = Linear<T>::make(store, name + ".out", width, num_classes, rng);
  }

  std::size_t num_classes() const { return output_.out_features(); }
  const Linear<T>& hidden() const { return hidden_; }
  const Linear<T>& output() const { return output_; }

  /// h_dec [B, q, d] -> logits [B, c].
  Tensor<T> classify(const Tensor<T>& h_dec, const ForwardContext& ctx) const {
    const std::size_t b = h_dec.dim(0), d = h_dec.dim(2);
    Tensor<T> first = ad::reshape(ad::slice(h_dec, 1, 0, 1), {b, d});
    Tensor<T> hidden = apply_dropout(ad::gelu(hidden_(first)), dropout_, ctx);
    return output_(hidden);
  }

 private:
  double dropout_ = 0.1;
  Linear<T> hidden_, output_;
};

struct Detection {
  int label = 0;
  double score = 0.0;
  Box box;
  int attribute = -1;
};

/// Per image: queries whose arg-max class is not background and whose score
/// exceeds `score_threshold`, in query order.
template <class T>
std::vector<std::vector<Detection>> postprocess_detections(const DetectionOutputs<T>& top, double score_threshold) {
  const std::size_t b = top.batch(), q = top.queries(), c = top.num_classes() + 1;
  const std::size_t attrs = top.attribute_logits.defined() ? top.attribute_logits.dim(2) : 0;
  std::vector<std::vector<Detection>> out(b);
  std::vector<double> probs(c);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < q; ++j) {
      const std::size_t row = i * q + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, static_cast<double>(top.class_logits[row * c + k]));
      double s = 0;
      for (std::size_t k = 0; k < c; ++k) s += (probs[k] = std::exp(static_cast<double>(top.class_logits[row * c + k]) - mx));
      std::size_t best = 0;
      for (std::size_t k = 0; k < c; ++k) {
        probs[k] /= s;
        if (probs[k] > probs[best]) best = k;
      }
      if (best == c - 1 || !(probs[best] > score_threshold)) continue;
      Detection det;
      det.label = static_cast<int>(best);
      det.score = probs[best];
      det.box = {top.boxes[row * 4 + 0], top.boxes[row * 4 + 1], top.boxes[row * 4 + 2], top.boxes[row * 4 + 3]};
      if (attrs > 0) {
        std::size_t a_best = 0;
        for (std::size_t a = 1; a < attrs; ++a)
          if (top.attribute_logits[row * attrs + a] > top.attribute_logits[row * attrs + a_best]) a_best = a;
        det.attribute = static_cast<int>(a_best);
      }
      out[i].push_back(det);
    }
  return out;
}

/// One detection per line: image_id class score cx cy w h attribute.
inline void write_detections(std::ostream& os, std::size_t image_id, const std::vector<Detection>& dets) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& d : dets)
    os << image_id << ' ' << d.label << ' ' << d.score << ' ' << d.box.cx << ' ' << d.box.cy << ' ' << d.box.w << ' '
       << d.box.h << ' ' << d.attribute << '\n';
}

/// Parses the line format above, grouping by image id (ids index the result).
inline std::vector<std::vector<Detection>> read_detections(std::istream& is, std::size_t num_images) {
  std::vector<std::vector<Detection>> out(num_images);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t image = 0;
    Detection d;
    if (!(ls >> image >> d.label >> d.score >> d.box.cx >> d.box.cy >> d.box.w >> d.box.h >> d.attribute)) {
      throw std::runtime_error("detections: malformed line " + std::to_string(line_no));
    }
    if (image >= num_images) throw std::runtime_error("detections: image id out of range on line " + std::to_string(line_no));
    out[image].push_back(d);
  }
  return out;
}

}  // namespace unit
