#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "unit/autodiff/gradcheck.hpp"
#include "unit/autodiff/nn_ops.hpp"
#include "unit/boxes.hpp"
#include "unit/decoder.hpp"
#include "unit/detection_loss.hpp"
#include "unit/encoders.hpp"
#include "unit/heads.hpp"

namespace unit {

struct GradCase {
  std::string name;
  // Builds one random instance from `rng` and checks it.
  std::function<ad::GradCheckResult(Rng&)> run;
};

struct GradCaseReport {
  std::string name;
  std::size_t instances = 0;
  double worst_error = 0.0;
  std::size_t redrawn = 0;  // instances rejected for sitting on a relu kink
};

namespace gradcheck_detail {

using TD = Tensor<double>;
using Inputs = std::vector<TD>;

inline TD random(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return TD(std::move(shape), std::move(v));
}

/// Values bounded away from zero so relu kinks are not straddled.
inline TD away_from_zero(Rng& rng, Shape shape) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.1, 1.5);
  return TD(std::move(shape), std::move(v));
}

/// Weighted sum with fixed random coefficients, so every output entry matters.
inline TD probe(const TD& y, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(y, random(rng, y.shape())));
}

inline TD random_boxes(Rng& rng, std::size_t n) {
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.uniform(0.1, 0.5), h = rng.uniform(0.1, 0.5);
    v.insert(v.end(), {rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), w, h});
  }
  return TD(Shape{n, 4}, std::move(v));
}

inline std::vector<TD> params_of(const ParameterStore<double>& store) {
  std::vector<TD> out;
  for (const auto& [name, t] : store.entries()) out.push_back(t);
  return out;
}

/// Checks a module: `inputs` plus every parameter of `store`.
inline ad::GradCheckResult check_module(const ParameterStore<double>& store, Inputs inputs,
                                        const std::function<TD(const Inputs&)>& fn) {
  for (auto& p : params_of(store)) inputs.push_back(p);
  return ad::gradcheck(fn, inputs);
}

}  // namespace gradcheck_detail

/// Every differentiable primitive and composite used by the model, checked
/// against central differences at 64-bit.
inline std::vector<GradCase> gradcheck_cases() {
  using namespace gradcheck_detail;
  using ad::gradcheck;
  std::vector<GradCase> c;
  auto unary = [&](std::string name, std::function<TD(const TD&)> f, bool kinked = false) {
    c.push_back({name, [f, kinked](Rng& rng) {
                   const std::uint64_t s = rng.next();
                   TD x = kinked ? away_from_zero(rng, {3, 5}) : random(rng, {3, 5});
                   return gradcheck([&](const Inputs& in) { return probe(f(in[0]), s); }, {x});
                 }});
  };
  c.push_back({"add", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 return gradcheck([&](const Inputs& in) { return probe(ad::add(in[0], in[1]), s); },
                                  {random(rng, {2, 3, 4}), random(rng, {3, 4})});
               }});
  c.push_back({"sub", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 return gradcheck([&](const Inputs& in) { return probe(ad::sub(in[0], in[1]), s); },
                                  {random(rng, {2, 3, 4}), random(rng, {4})});
               }});
  c.push_back({"mul", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 return gradcheck([&](const Inputs& in) { return probe(ad::mul(in[0], in[1]), s); },
                                  {random(rng, {2, 3, 4}), random(rng, {3, 4})});
               }});
  c.push_back({"matmul", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 return gradcheck([&](const Inputs& in) { return probe(ad::matmul(in[0], in[1]), s); },
                                  {random(rng, {2, 3, 4}), random(rng, {4, 5})});
               }});
  c.push_back({"linear", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 return gradcheck([&](const Inputs& in) { return probe(ad::linear(in[0], in[1], in[2]), s); },
                                  {random(rng, {3, 4}), random(rng, {4, 2}), random(rng, {2})});
               }});
  unary("transpose", [](const TD& x) { return ad::transpose(x); });
  unary("reshape", [](const TD& x) { return ad::reshape(x, {5, 3}); });
  c.push_back({"concat", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 return gradcheck([&](const Inputs& in) { return probe(ad::concat<double>({in[0], in[1]}, 1), s); },
                                  {random(rng, {2, 3, 4}), random(rng, {2, 2, 4})});
               }});
  c.push_back({"slice", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 return gradcheck([&](const Inputs& in) { return probe(ad::slice(in[0], 1, 1, 2), s); },
                                  {random(rng, {2, 4, 3})});
               }});
  c.push_back({"expand", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 return gradcheck([&](const Inputs& in) { return probe(ad::expand(in[0], 3), s); },
                                  {random(rng, {1, 2, 3})});
               }});
  c.push_back({"embedding", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 std::vector<int> ids;
                 for (int i = 0; i < 6; ++i) ids.push_back(static_cast<int>(rng.uniform_int(5)));
                 return gradcheck([&](const Inputs& in) { return probe(ad::embedding(in[0], ids, {2, 3}), s); },
                                  {random(rng, {5, 4})});
               }});
  c.push_back({"gather_rows", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 std::vector<int> rows{static_cast<int>(rng.uniform_int(4)), static_cast<int>(rng.uniform_int(4)), 3};
                 return gradcheck([&](const Inputs& in) { return probe(ad::gather_rows(in[0], rows), s); },
                                  {random(rng, {4, 3})});
               }});
  c.push_back({"conv2d", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 const ad::Conv2dGeometry geo{3, rng.bernoulli(0.5) ? std::size_t{2} : std::size_t{1}, 1};
                 return gradcheck([&](const Inputs& in) { return probe(ad::conv2d(in[0], in[1], in[2], geo), s); },
                                  {random(rng, {2, 6, 6, 2}), random(rng, {3, 3, 2, 3}), random(rng, {3})});
               }});
  unary("relu", [](const TD& x) { return ad::relu(x); }, true);
  unary("sigmoid", [](const TD& x) { return ad::sigmoid(x); });
  unary("gelu", [](const TD& x) { return ad::gelu(x); });
  unary("dropout", [](const TD& x) {
    Rng mask(7);  // the same mask on every evaluation
    return ad::dropout(x, 0.3, mask, true);
  });
  unary("softmax", [](const TD& x) { return ad::softmax(x, 1); });
  c.push_back({"layer_norm", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 return gradcheck([&](const Inputs& in) { return probe(ad::layer_norm(in[0], in[1], in[2], 1e-5), s); },
                                  {random(rng, {3, 6}), random(rng, {6}), random(rng, {6})});
               }});
  unary("sum", [](const TD& x) { return ad::scale(ad::sum(x), 1.7); });
  unary("mean", [](const TD& x) { return ad::scale(ad::mean(x), 1.7); });
  c.push_back({"l1_distance", [](Rng& rng) {
                 return gradcheck([&](const Inputs& in) { return ad::l1_distance(in[0], in[1]); },
                                  {away_from_zero(rng, {3, 4}), TD::zeros({3, 4})});
               }});
  c.push_back({"cross_entropy", [](Rng& rng) {
                 std::vector<int> t{static_cast<int>(rng.uniform_int(4)), static_cast<int>(rng.uniform_int(4)), 3};
                 std::vector<double> w{1.0, 0.5, 2.0, 0.1};
                 return gradcheck([&](const Inputs& in) { return ad::cross_entropy<double>(in[0], t, w); },
                                  {random(rng, {3, 4})});
               }});
  c.push_back({"attention", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 std::vector<std::uint8_t> pad{0, 0, 0, 1, 0, 0, 1, 1};
                 return gradcheck(
                     [&](const Inputs& in) { return probe(ad::attention(in[0], in[1], in[2], 2, pad), s); },
                     {random(rng, {2, 3, 4}), random(rng, {2, 4, 4}), random(rng, {2, 4, 4})});
               }});
  c.push_back({"generalized_iou", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 return gradcheck([&](const Inputs& in) { return probe(ad::generalized_iou(in[0], in[1]), s); },
                                  {random_boxes(rng, 4), random_boxes(rng, 4)});
               }});
  c.push_back({"composite_chain", [](Rng& rng) {
                 std::vector<int> t{0, 1, 2, 3};
                 for (auto& v : t) v = static_cast<int>(rng.uniform_int(4));
                 return gradcheck(
                     [&](const Inputs& in) {
                       return ad::cross_entropy<double>(ad::softmax(ad::gelu(ad::matmul(in[0], in[1])), 1), t);
                     },
                     {random(rng, {4, 4}), random(rng, {4, 4})});
               }});
  c.push_back({"encoder_layer", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 ParameterStore<double> store;
                 auto p = EncoderLayerParams<double>::make(store, "enc", {8, 2, 12, 0.0, Activation::gelu}, rng);
                 return check_module(store, {random(rng, {1, 3, 8})}, [&](const Inputs& in) {
                   return probe(encoder_layer(in[0], {}, p, {}), s);
                 });
               }});
  c.push_back({"decoder_layer", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 ParameterStore<double> store;
                 auto p = DecoderLayerParams<double>::make(store, "dec", {8, 2, 12, 0.0, Activation::relu}, rng);
                 return check_module(store, {random(rng, {1, 3, 8}), random(rng, {3, 8}), random(rng, {1, 5, 8})},
                                     [&](const Inputs& in) {
                                       EncodedSequence<double> enc{in[2], {}, {}};
                                       return probe(decoder_layer(in[0], in[1], enc, p, {}), s);
                                     });
               }});
  c.push_back({"conv_backbone", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 ParameterStore<double> store;
                 auto b = ConvBackbone<double>::make(store, "backbone", {2, 3, 4}, rng);
                 return check_module(store, {random(rng, {1, 16, 16, 3})},
                                     [&](const Inputs& in) { return probe(b(in[0]), s); });
               }});
  c.push_back({"text_encoder", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 ParameterStore<double> store;
                 TextEncoderConfig cfg{10, 6, 1, {8, 2, 12, 0.0, Activation::gelu}};
                 TextEncoder<double> enc(store, cfg, {"t"}, rng);
                 TokenBatch tokens = TokenBatch::pad({{0, 4, 5, 6}, {0, 7}});
                 return check_module(store, {}, [&](const Inputs&) {
                   return probe(enc.encode(tokens, "t", true, false, {}).states, s);
                 });
               }});
  c.push_back({"detection_heads", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 ParameterStore<double> store;
                 DetectionHeads<double> heads(store, "det", 8, 3, 3, rng);
                 std::vector<int> classes{0, 1, 2, 3, 1, 0};
                 return check_module(store, {random(rng, {2, 3, 8})}, [&](const Inputs& in) {
                   TD y = ad::add(probe(heads.class_logits(in[0]), s), probe(heads.boxes(in[0]), s + 1));
                   return ad::add(y, probe(heads.attribute_logits(in[0], classes), s + 2));
                 });
               }});
  c.push_back({"classifier_head", [](Rng& rng) {
                 const std::uint64_t s = rng.next();
                 ParameterStore<double> store;
                 ClassifierHead<double> head(store, "cls", 8, 3, 0.0, rng);
                 return check_module(store, {random(rng, {2, 4, 8})},
                                     [&](const Inputs& in) { return probe(head.classify(in[0], {}), s); });
               }});
  c.push_back({"detection_loss", [](Rng& rng) {
                 DetectionTarget a{{0, 2}, {Box{0.3, 0.3, 0.2, 0.2}, Box{0.7, 0.6, 0.3, 0.2}}, {1, 0}};
                 DetectionTarget b{{1}, {Box{0.5, 0.5, 0.4, 0.3}}, {2}};
                 return gradcheck(
                     [&](const Inputs& in) {
                       std::vector<DetectionOutputs<double>> layers;
                       for (std::size_t l = 0; l < 2; ++l)
                         layers.push_back({in[2 * l], ad::sigmoid(in[2 * l + 1]), in[4 + l]});
                       return detection_loss(layers, {a, b}, DetectionLossWeights{}).total;
                     },
                     {random(rng, {2, 4, 4}), random(rng, {2, 4, 4}), random(rng, {2, 4, 4}), random(rng, {2, 4, 4}),
                      random(rng, {2, 4, 3}), random(rng, {2, 4, 3})});
               }});
  return c;
}

/// Runs `instances` random instances of every case and keeps the worst error.
/// An instance with a relu input within 1e-4 of the kink is redrawn, since
/// central differences are meaningless there.
inline std::vector<GradCaseReport> run_gradcheck_suite(std::size_t instances = 20, std::uint64_t seed = 0) {
  constexpr std::size_t max_redraws = 50;
  std::vector<GradCaseReport> out;
  for (const auto& gc : gradcheck_cases()) {
    GradCaseReport r{gc.name, 0, 0.0};
    for (std::size_t i = 0; i < instances; ++i) {
      ad::GradCheckResult res;
      for (std::size_t attempt = 0; attempt < max_redraws; ++attempt) {
        Rng rng(derive_seed(seed, name_hash(gc.name), i, attempt));
        res = gc.run(rng);
        if (!res.near_kink()) break;
        ++r.redrawn;
      }
      r.worst_error = std::max(r.worst_error, res.max_relative_error);
      ++r.instances;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace unit
