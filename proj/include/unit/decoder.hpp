#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/transformer.hpp"

namespace unit {

enum class DecoderMode { shared, separate };

struct DecoderConfig {
  std::size_t layers = 2;
  LayerConfig layer{64, 4, 128, 0.1, Activation::relu};
  DecoderMode mode = DecoderMode::shared;
};

/// N_d decoder layers plus the learned input projections for encoder widths
/// that differ from the decoder width.
template <class T>
class DecoderStack {
 public:
  DecoderStack() = default;

  DecoderStack(ParameterStore<T>& store, const std::string& name, const DecoderConfig& cfg, std::size_t image_width,
               std::size_t text_width, Rng& rng)
      : name_(name) {
    const std::size_t d = cfg.layer.width;
    if (image_width != d) image_proj_ = Linear<T>::make(store, name + ".image_proj", image_width, d, rng);
    if (text_width != d) text_proj_ = Linear<T>::make(store, name + ".text_proj", text_width, d, rng);
    for (std::size_t i = 0; i < cfg.layers; ++i)
      layers_.push_back(DecoderLayerParams<T>::make(store, name + ".layer" + std::to_string(i), cfg.layer, rng));
  }

  const std::string& name() const { return name_; }
  std::size_t depth() const { return layers_.size(); }
  std::size_t width() const { return layers_.front().self_attention.width(); }

  EncodedSequence<T> project(const EncodedSequence<T>& seq, Modality m) const {
    const auto& proj = m == Modality::image ? image_proj_ : text_proj_;
    if (!proj) return seq;
    return {(*proj)(seq.states), seq.padding, seq.origin};
  }

  /// Runs every layer; element l is the output of layer l (each of length q).
  std::vector<Tensor<T>> run(const EncodedSequence<T>& enc, const Tensor<T>& queries,
                             const ForwardContext& ctx) const {
    const std::size_t b = enc.batch(), q = queries.dim(0);
    Tensor<T> y = ad::expand(ad::reshape(queries, {1, q, queries.dim(1)}), b);
    std::vector<Tensor<T>> outputs;
    outputs.reserve(layers_.size());
    for (const auto& layer : layers_) {
      y = decoder_layer(y, queries, enc, layer, ctx);
      outputs.push_back(y);
    }
    return outputs;
  }

 private:
  std::string name_;
  std::optional<Linear<T>> image_proj_, text_proj_;
  std::vector<DecoderLayerParams<T>> layers_;
};

/// Image states first, then text states, along the sequence axis.
template <class T>
EncodedSequence<T> concat_modalities(const EncodedSequence<T>& image, const EncodedSequence<T>& text) {
  if (text.states.rank() != 3 || text.length() == 0) throw std::invalid_argument("concat_modalities: empty text sequence");
  if (image.states.rank() != 3 || image.length() == 0) throw std::invalid_argument("concat_modalities: empty image sequence");
  if (image.width() != text.width()) {
    throw std::invalid_argument("concat_modalities: widths " + std::to_string(image.width()) + " and " +
                                std::to_string(text.width()) + " differ after projection");
  }
  if (image.batch() != text.batch()) throw std::invalid_argument("concat_modalities: batch sizes differ");
  EncodedSequence<T> out;
  out.states = ad::concat<T>({image.states, text.states}, 1);
  const std::size_t b = image.batch(), li = image.length(), lt = text.length();
  if (!image.padding.empty() || !text.padding.empty()) {
    out.padding.assign(b * (li + lt), 0);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < li && !image.padding.empty(); ++j)
        out.padding[i * (li + lt) + j] = image.padding[i * li + j];
      for (std::size_t j = 0; j < lt && !text.padding.empty(); ++j)
        out.padding[i * (li + lt) + li + j] = text.padding[i * lt + j];
    }
  }
  out.origin = image.origin;
  out.origin.insert(out.origin.end(), text.origin.begin(), text.origin.end());
  return out;
}

/// The domain-agnostic decoder: one stack shared by every task or one stack per
/// task, plus one learned query table per task in either mode.
template <class T>
class UnifiedDecoder {
 public:
  UnifiedDecoder() = default;

  UnifiedDecoder(ParameterStore<T>& store, const DecoderConfig& cfg, const std::map<std::string, std::size_t>& queries,
                 const std::vector<std::string>& task_order, std::size_t image_width, std::size_t text_width, Rng& rng)
      : mode_(cfg.mode) {
    if (cfg.mode == DecoderMode::shared) {
      stacks_.emplace("", DecoderStack<T>(store, "decoder.shared", cfg, image_width, text_width, rng));
    } else {
      for (const auto& t : task_order)
        stacks_.emplace(t, DecoderStack<T>(store, "decoder." + t, cfg, image_width, text_width, rng));
    }
    for (const auto& t : task_order) {
      const std::size_t q = queries.at(t);
      if (q == 0) throw std::invalid_argument("decoder: task '" + t + "' needs at least one query");
      queries_[t] = store.add("queries." + t, {q, cfg.layer.width}, Init::normal, rng, 1.0);
    }
  }

  DecoderMode mode() const { return mode_; }

  const DecoderStack<T>& select_decoder(const std::string& task) const {
    if (!queries_.count(task)) throw std::invalid_argument("decoder: unknown task '" + task + "'");
    return mode_ == DecoderMode::shared ? stacks_.at("") : stacks_.at(task);
  }

  const Tensor<T>& query_table(const std::string& task) const {
    auto it = queries_.find(task);
    if (it == queries_.end()) throw std::invalid_argument("decoder: unknown task '" + task + "'");
    return it->second;
  }

  /// Per-layer decoder outputs for one task over already-assembled states.
  std::vector<Tensor<T>> decode(const EncodedSequence<T>& enc, const std::string& task,
                                const ForwardContext& ctx) const {
    return select_decoder(task).run(enc, query_table(task), ctx);
  }

 private:
  DecoderMode mode_ = DecoderMode::shared;
  std::map<std::string, DecoderStack<T>> stacks_;
  std::map<std::string, Tensor<T>> queries_;
};

}  // namespace unit
