#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/transformer.hpp"
#include "unit/vocabulary.hpp"

namespace unit {

struct ImageEncoderConfig {
  std::array<std::size_t, 3> backbone_channels{16, 32, 64};
  std::size_t layers = 2;
  LayerConfig layer{64, 4, 128, 0.1, Activation::relu};
};

struct TextEncoderConfig {
  std::size_t vocab_size = 64;
  std::size_t max_length = 32;
  std::size_t layers = 2;
  LayerConfig layer{64, 4, 128, 0.0, Activation::gelu};
};

/// Stride-8 convolutional backbone: three 3x3 stride-2 convolutions with relu.
template <class T>
struct ConvBackbone {
  struct Stage {
    Tensor<T> weight, bias;
  };
  std::array<Stage, 3> stages;
  static constexpr std::size_t total_stride = 8;

  static ConvBackbone make(ParameterStore<T>& store, const std::string& name, std::array<std::size_t, 3> channels,
                           Rng& rng) {
    ConvBackbone b;
    std::size_t in = 3;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string stage = name + ".conv" + std::to_string(i + 1);
      b.stages[i] = {store.add(stage + ".weight", {3, 3, in, channels[i]}, Init::xavier_uniform, rng),
                     store.add(stage + ".bias", {channels[i]}, Init::zeros, rng)};
      in = channels[i];
    }
    return b;
  }

  std::size_t out_channels() const { return stages.back().weight.dim(3); }

  /// images [B, H, W, 3] -> feature map [B, H/8, W/8, C].
  Tensor<T> operator()(const Tensor<T>& images) const {
    if (images.rank() != 4 || images.dim(3) != 3) {
      throw std::invalid_argument("conv_backbone: expects [B,H,W,3], got " + ad::shape_str(images.shape()));
    }
    if (images.dim(1) % total_stride != 0 || images.dim(2) % total_stride != 0) {
      throw std::invalid_argument("conv_backbone: image extents " + std::to_string(images.dim(1)) + "x" +
                                  std::to_string(images.dim(2)) + " are not multiples of " +
                                  std::to_string(total_stride));
    }
    Tensor<T> x = images;
    for (const auto& s : stages) x = ad::relu(ad::conv2d(x, s.weight, s.bias, {3, 2, 1}));
    return x;
  }
};

template <class T>
class ImageEncoder {
 public:
  ImageEncoder() = default;

  ImageEncoder(ParameterStore<T>& store, const ImageEncoderConfig& cfg, const std::vector<std::string>& tasks,
               Rng& rng)
      : cfg_(cfg) {
    backbone_ = ConvBackbone<T>::make(store, "image_encoder.backbone", cfg.backbone_channels, rng);
    projection_ = Linear<T>::make(store, "image_encoder.input_proj", backbone_.out_channels(), cfg.layer.width, rng);
    for (std::size_t i = 0; i < cfg.layers; ++i)
      layers_.push_back(
          EncoderLayerParams<T>::make(store, "image_encoder.layer" + std::to_string(i), cfg.layer, rng));
    // Task tokens last, so the shared weights do not depend on the task set.
    for (const auto& t : tasks)
      task_tokens_[t] = store.add("image_encoder.task_token." + t, {1, 1, cfg.layer.width}, Init::normal, rng);
  }

  std::size_t width() const { return cfg_.layer.width; }
  const ConvBackbone<T>& backbone() const { return backbone_; }
  bool has_task(const std::string& task) const { return task_tokens_.count(task) > 0; }

  Tensor<T> conv_backbone(const Tensor<T>& images) const { return backbone_(images); }

  /// Projects the feature map, adds the 2-D positional encoding, optionally
  /// prefixes the task token, encodes, and strips the task position again.
  EncodedSequence<T> encode(const Tensor<T>& images, const std::string& task, bool use_task_token,
                            const ForwardContext& ctx) const {
    auto tok = task_tokens_.find(task);
    if (tok == task_tokens_.end()) throw std::invalid_argument("image encoder: unknown task '" + task + "'");
    Tensor<T> feat = backbone_(images);
    const std::size_t b = feat.dim(0), hv = feat.dim(1), wv = feat.dim(2), length = hv * wv;
    Tensor<T> x = projection_(ad::reshape(feat, {b, length, feat.dim(3)}));
    x = ad::add(x, positional_encoding_2d<T>(hv, wv, width()));
    if (use_task_token) x = ad::concat<T>({ad::expand(tok->second, b), x}, 1);
    for (const auto& layer : layers_) x = encoder_layer(x, {}, layer, ctx);
    if (use_task_token) x = ad::slice(x, 1, 1, length);
    return {x, {}, std::vector<Modality>(length, Modality::image)};
  }

 private:
  ImageEncoderConfig cfg_;
  ConvBackbone<T> backbone_;
  Linear<T> projection_;
  std::map<std::string, Tensor<T>> task_tokens_;
  std::vector<EncoderLayerParams<T>> layers_;
};

/// Right-padded token ids for a batch of sequences.
struct TokenBatch {
  std::vector<int> ids;               // [B * seq_len]
  std::vector<std::size_t> lengths;   // unpadded length per sequence
  std::size_t seq_len = 0;

  std::size_t batch() const { return lengths.size(); }

  static TokenBatch pad(const std::vector<std::vector<int>>& sequences) {
    TokenBatch tb;
    for (const auto& s : sequences) tb.seq_len = std::max(tb.seq_len, s.size());
    tb.ids.assign(sequences.size() * tb.seq_len, Vocabulary::pad_id);
    for (std::size_t b = 0; b < sequences.size(); ++b) {
      std::copy(sequences[b].begin(), sequences[b].end(), tb.ids.begin() + b * tb.seq_len);
      tb.lengths.push_back(sequences[b].size());
    }
    return tb;
  }
};

template <class T>
class TextEncoder {
 public:
  TextEncoder() = default;

  TextEncoder(ParameterStore<T>& store, const TextEncoderConfig& cfg, const std::vector<std::string>& tasks, Rng& rng)
      : cfg_(cfg) {
    const std::size_t d = cfg.layer.width;
    token_embed_ = store.add("text_encoder.token_embed", {cfg.vocab_size, d}, Init::normal, rng);
    pos_embed_ = store.add("text_encoder.pos_embed", {cfg.max_length, d}, Init::normal, rng);
    embed_norm_ = LayerNorm<T>::make(store, "text_encoder.embed_norm", d, rng);
    for (std::size_t i = 0; i < cfg.layers; ++i)
      layers_.push_back(EncoderLayerParams<T>::make(store, "text_encoder.layer" + std::to_string(i), cfg.layer, rng));
    for (const auto& t : tasks)
      task_tokens_[t] = store.add("text_encoder.task_token." + t, {1, 1, d}, Init::normal, rng);
  }

  std::size_t width() const { return cfg_.layer.width; }
  bool has_task(const std::string& task) const { return task_tokens_.count(task) > 0; }

  /// Hidden states for a padded token batch; [CLS]-only returns one position.
  EncodedSequence<T> encode(const TokenBatch& tokens, const std::string& task, bool use_task_token, bool cls_only,
                            const ForwardContext& ctx) const {
    auto tok = task_tokens_.find(task);
    if (tok == task_tokens_.end()) throw std::invalid_argument("text encoder: unknown task '" + task + "'");
    const std::size_t b = tokens.batch(), s = tokens.seq_len;
    if (b == 0 || s == 0) throw std::invalid_argument("text encoder: empty token batch");
    if (s > cfg_.max_length) {
      throw std::invalid_argument("text encoder: sequence length " + std::to_string(s) + " exceeds maximum " +
                                  std::to_string(cfg_.max_length));
    }
    for (std::size_t i = 0; i < b; ++i)
      if (tokens.lengths[i] == 0 || tokens.ids[i * s] != Vocabulary::cls_id)
        throw std::invalid_argument("text encoder: sequence " + std::to_string(i) + " does not start with [CLS]");

    Tensor<T> x = ad::embedding(token_embed_, tokens.ids, {b, s});
    x = embed_norm_(ad::add(x, ad::slice(pos_embed_, 0, 0, s)));
    const std::size_t offset = use_task_token ? 1 : 0;
    if (use_task_token) x = ad::concat<T>({ad::expand(tok->second, b), x}, 1);
    std::vector<std::uint8_t> padding(b * (s + offset), 0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = tokens.lengths[i]; j < s; ++j) padding[i * (s + offset) + offset + j] = 1;
    for (const auto& layer : layers_) x = encoder_layer(x, padding, layer, ctx);
    if (cls_only) return {ad::slice(x, 1, offset, 1), {}, {Modality::text}};
    if (use_task_token) x = ad::slice(x, 1, 1, s);
    std::vector<std::uint8_t> text_padding(b * s, 0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = tokens.lengths[i]; j < s; ++j) text_padding[i * s + j] = 1;
    if (std::find(text_padding.begin(), text_padding.end(), 1) == text_padding.end()) text_padding.clear();
    return {x, std::move(text_padding), std::vector<Modality>(s, Modality::text)};
  }

 private:
  TextEncoderConfig cfg_;
  Tensor<T> token_embed_, pos_embed_;
  LayerNorm<T> embed_norm_;
  std::map<std::string, Tensor<T>> task_tokens_;
  std::vector<EncoderLayerParams<T>> layers_;
};

}  // namespace unit
