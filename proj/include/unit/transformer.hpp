#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/autodiff/nn_ops.hpp"
#include "unit/parameters.hpp"

namespace unit {

enum class Modality : std::uint8_t { image, text };

/// Hidden states [B, L, d] plus per-position bookkeeping.
template <class T>
struct EncodedSequence {
  Tensor<T> states;
  // B*L flags, nonzero = padding (excluded from attention). Empty = no padding.
  std::vector<std::uint8_t> padding;
  // Modality that produced each of the L positions.
  std::vector<Modality> origin;

  std::size_t batch() const { return states.dim(0); }
  std::size_t length() const { return states.dim(1); }
  std::size_t width() const { return states.dim(2); }
};

/// Per-call forward settings.
struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;  // dropout source, required when train

  Rng& dropout_rng() const {
    if (!rng) throw std::logic_error("ForwardContext: training forward without an rng");
    return *rng;
  }
};

template <class T>
Tensor<T> apply_dropout(const Tensor<T>& x, double p, const ForwardContext& ctx) {
  if (!ctx.train || p == 0.0) return x;
  return ad::dropout(x, p, ctx.dropout_rng(), true);
}

template <class T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static Linear make(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    return {store.add(name + ".weight", {in, out}, Init::xavier_uniform, rng),
            store.add(name + ".bias", {out}, Init::zeros, rng)};
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor<T> operator()(const Tensor<T>& x) const { return ad::linear(x, weight, bias); }
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  T eps = T(1e-5);

  static LayerNorm make(ParameterStore<T>& store, const std::string& name, std::size_t d, Rng& rng) {
    return {store.add(name + ".gamma", {d}, Init::ones, rng), store.add(name + ".beta", {d}, Init::zeros, rng)};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return ad::layer_norm(x, gamma, beta, eps); }
};

enum class Activation { relu, gelu };

struct LayerConfig {
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t intermediate = 128;
  double dropout = 0.1;
  Activation activation = Activation::relu;

  void validate(const std::string& where) const {
    if (heads == 0 || width % heads != 0)
      throw std::invalid_argument(where + ": width " + std::to_string(width) + " not divisible by " +
                                  std::to_string(heads) + " heads");
    if (intermediate == 0) throw std::invalid_argument(where + ": intermediate size must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument(where + ": dropout must lie in [0,1)");
  }
};

/// Query/key/value/output projections of one multi-head attention block.
template <class T>
struct AttentionParams {
  Linear<T> query, key, value, output;
  std::size_t heads = 1;

  static AttentionParams make(ParameterStore<T>& store, const std::string& name, std::size_t d, std::size_t heads,
                              Rng& rng) {
    if (heads == 0 || d % heads != 0) throw std::invalid_argument(name + ": width not divisible by heads");
    return {Linear<T>::make(store, name + ".query", d, d, rng), Linear<T>::make(store, name + ".key", d, d, rng),
            Linear<T>::make(store, name + ".value", d, d, rng), Linear<T>::make(store, name + ".output", d, d, rng),
            heads};
  }

  std::size_t width() const { return query.in_features(); }
};

template <class T>
struct AttentionResult {
  Tensor<T> output;              // [B, Lq, d]
  std::vector<T> weights;        // [B, heads, Lq, Lk]
};

/// Multi-head attention. Positional signals, when given, are added to the
/// query/key projection inputs only (values stay position-free).
template <class T>
AttentionResult<T> multi_head_attention(const Tensor<T>& queries, const Tensor<T>& keys_values,
                                        std::span<const std::uint8_t> key_padding, const AttentionParams<T>& params,
                                        const Tensor<T>& query_pos = {}, const Tensor<T>& key_pos = {},
                                        bool keep_weights = false) {
  const std::size_t d = params.width();
  if (queries.shape().back() != d || keys_values.shape().back() != d) {
    throw std::invalid_argument("multi_head_attention: width mismatch, expected " + std::to_string(d));
  }
  const Tensor<T> q_in = query_pos.defined() ? ad::add(queries, query_pos) : queries;
  const Tensor<T> k_in = key_pos.defined() ? ad::add(keys_values, key_pos) : keys_values;
  AttentionResult<T> result;
  Tensor<T> mixed = ad::attention(params.query(q_in), params.key(k_in), params.value(keys_values), params.heads,
                                  key_padding, keep_weights ? &result.weights : nullptr);
  result.output = params.output(mixed);
  return result;
}

template <class T>
struct FeedForward {
  Linear<T> expand, contract;
  Activation activation = Activation::relu;

  static FeedForward make(ParameterStore<T>& store, const std::string& name, const LayerConfig& cfg, Rng& rng) {
    return {Linear<T>::make(store, name + ".expand", cfg.width, cfg.intermediate, rng),
            Linear<T>::make(store, name + ".contract", cfg.intermediate, cfg.width, rng), cfg.activation};
  }

  Tensor<T> operator()(const Tensor<T>& x, double dropout, const ForwardContext& ctx) const {
    Tensor<T> h = expand(x);
    h = activation == Activation::gelu ? ad::gelu(h) : ad::relu(h);
    return contract(apply_dropout(h, dropout, ctx));
  }
};

template <class T>
struct EncoderLayerParams {
  AttentionParams<T> self_attention;
  LayerNorm<T> norm1;
  FeedForward<T> feed_forward;
  LayerNorm<T> norm2;
  double dropout = 0.1;

  static EncoderLayerParams make(ParameterStore<T>& store, const std::string& name, const LayerConfig& cfg,
                                 Rng& rng) {
    cfg.validate(name);
    EncoderLayerParams p;
    p.self_attention = AttentionParams<T>::make(store, name + ".self_attention", cfg.width, cfg.heads, rng);
    p.norm1 = LayerNorm<T>::make(store, name + ".norm1", cfg.width, rng);
    p.feed_forward = FeedForward<T>::make(store, name + ".feed_forward", cfg, rng);
    p.norm2 = LayerNorm<T>::make(store, name + ".norm2", cfg.width, rng);
    p.dropout = cfg.dropout;
    return p;
  }
};

/// Post-norm encoder layer: x = LN(x + SA(x)); x = LN(x + FFN(x)).
template <class T>
Tensor<T> encoder_layer(const Tensor<T>& x, std::span<const std::uint8_t> padding, const EncoderLayerParams<T>& p,
                        const ForwardContext& ctx) {
  if (x.rank() != 3 || x.dim(2) != p.self_attention.width()) {
    throw std::invalid_argument("encoder_layer: input " + ad::shape_str(x.shape()) + " does not match width " +
                                std::to_string(p.self_attention.width()));
  }
  auto attn = multi_head_attention(x, x, padding, p.self_attention);
  Tensor<T> h = p.norm1(ad::add(x, apply_dropout(attn.output, p.dropout, ctx)));
  Tensor<T> ff = p.feed_forward(h, p.dropout, ctx);
  return p.norm2(ad::add(h, apply_dropout(ff, p.dropout, ctx)));
}

template <class T>
struct DecoderLayerParams {
  AttentionParams<T> self_attention;
  LayerNorm<T> norm1;
  AttentionParams<T> cross_attention;
  LayerNorm<T> norm2;
  FeedForward<T> feed_forward;
  LayerNorm<T> norm3;
  double dropout = 0.1;

  static DecoderLayerParams make(ParameterStore<T>& store, const std::string& name, const LayerConfig& cfg,
                                 Rng& rng) {
    cfg.validate(name);
    DecoderLayerParams p;
    p.self_attention = AttentionParams<T>::make(store, name + ".self_attention", cfg.width, cfg.heads, rng);
    p.norm1 = LayerNorm<T>::make(store, name + ".norm1", cfg.width, rng);
    p.cross_attention = AttentionParams<T>::make(store, name + ".cross_attention", cfg.width, cfg.heads, rng);
    p.norm2 = LayerNorm<T>::make(store, name + ".norm2", cfg.width, rng);
    p.feed_forward = FeedForward<T>::make(store, name + ".feed_forward", cfg, rng);
    p.norm3 = LayerNorm<T>::make(store, name + ".norm3", cfg.width, rng);
    p.dropout = cfg.dropout;
    return p;
  }
};

/// Post-norm decoder layer with unmasked self-attention over the query slots,
/// cross-attention into `enc`, then feed-forward. `query_pos` [q, d] is re-added
/// to the attention queries (and self-attention keys) at every call.
template <class T>
Tensor<T> decoder_layer(const Tensor<T>& y, const Tensor<T>& query_pos, const EncodedSequence<T>& enc,
                        const DecoderLayerParams<T>& p, const ForwardContext& ctx) {
  const std::size_t d = p.self_attention.width();
  if (y.rank() != 3 || y.dim(2) != d || enc.states.rank() != 3 || enc.width() != d) {
    throw std::invalid_argument("decoder_layer: width mismatch, expected " + std::to_string(d));
  }
  if (enc.length() == 0) throw std::invalid_argument("decoder_layer: empty encoder sequence");
  auto self = multi_head_attention(y, y, {}, p.self_attention, query_pos, query_pos);
  Tensor<T> h = p.norm1(ad::add(y, apply_dropout(self.output, p.dropout, ctx)));
  auto cross = multi_head_attention(h, enc.states, enc.padding, p.cross_attention, query_pos);
  h = p.norm2(ad::add(h, apply_dropout(cross.output, p.dropout, ctx)));
  Tensor<T> ff = p.feed_forward(h, p.dropout, ctx);
  return p.norm3(ad::add(h, apply_dropout(ff, p.dropout, ctx)));
}

/// Fixed 2-D sinusoidal encoding, [H*W, d]. Channels [0, d/2) encode the row,
/// [d/2, d) the column; within each half even channels are sines and odd
/// channels cosines of geometrically spaced frequencies.
template <class T>
Tensor<T> positional_encoding_2d(std::size_t height, std::size_t width, std::size_t d) {
  if (d == 0 || d % 4 != 0) throw std::invalid_argument("positional_encoding_2d: width must be divisible by 4");
  const std::size_t half = d / 2;
  std::vector<T> out(height * width * d);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      T* row = out.data() + (y * width + x) * d;
      for (std::size_t i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
        row[2 * i] = static_cast<T>(std::sin(static_cast<double>(y) * freq));
        row[2 * i + 1] = static_cast<T>(std::cos(static_cast<double>(y) * freq));
        row[half + 2 * i] = static_cast<T>(std::sin(static_cast<double>(x) * freq));
        row[half + 2 * i + 1] = static_cast<T>(std::cos(static_cast<double>(x) * freq));
      }
    }
  return Tensor<T>(Shape{height * width, d}, std::move(out));
}

}  // namespace unit
