#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "unit/decoder.hpp"
#include "unit/detection_loss.hpp"
#include "unit/encoders.hpp"
#include "unit/heads.hpp"
#include "unit/image.hpp"

namespace unit {

enum class HeadType { detection, classifier };

/// Identity, inputs, head and sampling weight of one registered dataset.
struct TaskSpec {
  std::string name;
  bool uses_image = false;
  bool uses_text = false;
  HeadType head = HeadType::classifier;
  std::size_t num_classes = 2;     // K for detection, c_t otherwise
  std::size_t num_attributes = 0;  // detection only
  std::size_t queries = 4;
  double probability = 0.0;
};

/// The default eight datasets with the joint-training sampling weights.
inline std::vector<TaskSpec> default_tasks() {
  return {
      {"shapes_det", true, false, HeadType::detection, 3, 0, 12, 0.20},
      {"shapes_attr_det", true, false, HeadType::detection, 3, 3, 12, 0.07},
      {"shapes_vqa", true, true, HeadType::classifier, 8, 0, 4, 0.26},
      {"shapes_ve", true, true, HeadType::classifier, 3, 0, 4, 0.12},
      {"text_containment", false, true, HeadType::classifier, 2, 0, 4, 0.10},
      {"text_nli3", false, true, HeadType::classifier, 3, 0, 4, 0.10},
      {"text_paraphrase", false, true, HeadType::classifier, 2, 0, 4, 0.10},
      {"text_polarity", false, true, HeadType::classifier, 2, 0, 4, 0.05},
  };
}

struct ModelConfig {
  ImageEncoderConfig image;
  TextEncoderConfig text;
  DecoderConfig decoder;
  bool task_tokens = true;
  bool cls_only = true;
  bool all_layer_classification_loss = false;
  double classifier_dropout = 0.1;
  DetectionLossWeights loss;
};

/// One batch drawn from a single dataset.
struct Batch {
  std::string task;
  std::vector<Image> images;                // empty for text-only tasks
  TokenBatch tokens;                        // empty for vision-only tasks
  std::vector<DetectionTarget> targets;     // detection tasks
  std::vector<int> labels;                  // classification tasks

  std::size_t size() const { return images.empty() ? tokens.batch() : images.size(); }
};

/// Stacks equally sized images into [B, H, W, 3].
template <class T>
Tensor<T> image_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("image_tensor: empty batch");
  const std::size_t h = images.front().height, w = images.front().width;
  std::vector<T> values;
  values.reserve(images.size() * h * w * 3);
  for (const auto& im : images) {
    if (im.height != h || im.width != w) throw std::invalid_argument("image_tensor: images differ in size");
    values.insert(values.end(), im.pixels.begin(), im.pixels.end());
  }
  return Tensor<T>(Shape{images.size(), h, w, 3}, std::move(values));
}

/// Image encoder, text encoder, unified decoder and per-task heads. Each
/// component draws its initial values from its own stream, so a component is
/// initialized identically whatever else the model contains.
template <class T>
class UnitModel {
 public:
  UnitModel(const ModelConfig& cfg, std::vector<TaskSpec> tasks, std::uint64_t seed)
      : cfg_(cfg), tasks_(std::move(tasks)) {
    if (tasks_.empty()) throw std::invalid_argument("model: no tasks registered");
    std::vector<std::string> image_tasks, text_tasks, names;
    std::map<std::string, std::size_t> queries;
    for (const auto& t : tasks_) {
      if (index_.count(t.name)) throw std::invalid_argument("model: task '" + t.name + "' registered twice");
      if (!t.uses_image && !t.uses_text) throw std::invalid_argument("model: task '" + t.name + "' has no input");
      if (t.head == HeadType::detection && (!t.uses_image || t.uses_text))
        throw std::invalid_argument("model: detection task '" + t.name + "' must be image-only");
      index_[t.name] = names.size();
      names.push_back(t.name);
      queries[t.name] = t.queries;
      if (t.uses_image) image_tasks.push_back(t.name);
      if (t.uses_text) text_tasks.push_back(t.name);
    }
    auto stream = [&](std::string_view component) { return Rng(derive_seed(seed, name_hash(component))); };
    if (!image_tasks.empty()) {
      Rng rng = stream("image_encoder");
      image_encoder_.emplace(store_, cfg.image, image_tasks, rng);
    }
    if (!text_tasks.empty()) {
      Rng rng = stream("text_encoder");
      text_encoder_.emplace(store_, cfg.text, text_tasks, rng);
    }
    {
      Rng rng = stream("decoder");
      decoder_ = UnifiedDecoder<T>(store_, cfg.decoder, queries, names, cfg.image.layer.width, cfg.text.layer.width,
                                   rng);
    }
    for (const auto& t : tasks_) {
      if (t.head == HeadType::detection) {
        Rng rng = stream("det_head." + t.name);
        detection_heads_.emplace(t.name, DetectionHeads<T>(store_, "det_head." + t.name, cfg.decoder.layer.width,
                                                           t.num_classes, t.num_attributes, rng));
      } else {
        Rng rng = stream("cls_head." + t.name);
        classifier_heads_.emplace(t.name, ClassifierHead<T>(store_, "cls_head." + t.name, cfg.decoder.layer.width,
                                                            t.num_classes, cfg.classifier_dropout, rng));
      }
    }
  }

  UnitModel(const UnitModel&) = delete;
  UnitModel& operator=(const UnitModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  const UnifiedDecoder<T>& decoder() const { return decoder_; }
  const ImageEncoder<T>& image_encoder() const { return image_encoder_.value(); }
  const TextEncoder<T>& text_encoder() const { return text_encoder_.value(); }
  bool has_image_encoder() const { return image_encoder_.has_value(); }
  bool has_text_encoder() const { return text_encoder_.has_value(); }

  const TaskSpec& task(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("model: unknown task '" + name + "'");
    return tasks_[it->second];
  }
  const DetectionHeads<T>& detection_head(const std::string& name) const { return detection_heads_.at(name); }
  const ClassifierHead<T>& classifier_head(const std::string& name) const { return classifier_heads_.at(name); }

  /// Parameter count of one decoder stack (layers plus input projections).
  std::size_t decoder_stack_size() const {
    const std::string& first = tasks_.front().name;
    return store_.scalar_count_with_prefix(decoder_.select_decoder(first).name() + ".");
  }

  /// Encoded (projected and, for two modalities, concatenated) decoder input.
  EncodedSequence<T> encode(const Batch& batch, const ForwardContext& ctx) const {
    const TaskSpec& spec = task(batch.task);
    const auto& stack = decoder_.select_decoder(spec.name);
    std::optional<EncodedSequence<T>> image, text;
    if (spec.uses_image) {
      if (batch.images.empty()) throw std::invalid_argument("model: task '" + spec.name + "' needs images");
      image = stack.project(image_encoder_->encode(image_tensor<T>(batch.images), spec.name, cfg_.task_tokens, ctx),
                            Modality::image);
    }
    if (spec.uses_text) {
      if (batch.tokens.batch() == 0) throw std::invalid_argument("model: task '" + spec.name + "' needs tokens");
      text = stack.project(text_encoder_->encode(batch.tokens, spec.name, cfg_.task_tokens, cfg_.cls_only, ctx),
                           Modality::text);
    }
    if (image && text) return concat_modalities(*image, *text);
    return image ? *image : *text;
  }

  /// Per-layer decoder hidden states.
  std::vector<Tensor<T>> decode(const Batch& batch, const ForwardContext& ctx) const {
    return decoder_.decode(encode(batch, ctx), batch.task, ctx);
  }

  /// Training loss for a batch; detection tasks also report the assignments.
  Tensor<T> loss(const Batch& batch, const ForwardContext& ctx) const {
    const TaskSpec& spec = task(batch.task);
    std::vector<Tensor<T>> hidden = decode(batch, ctx);
    if (spec.head == HeadType::detection) {
      const auto& heads = detection_heads_.at(spec.name);
      if (batch.targets.size() != batch.size()) throw std::invalid_argument("model: missing detection targets");
      std::vector<DetectionOutputs<T>> outs;
      for (const auto& h : hidden) outs.push_back({heads.class_logits(h), heads.boxes(h), {}});
      AttributeFn<T> attr;
      // Attributes are conditioned on the matched ground-truth class while training.
      if (heads.has_attributes())
        attr = [&](std::size_t layer, std::span<const int> classes) {
          return heads.attribute_logits(hidden[layer], classes);
        };
      return detection_loss(outs, batch.targets, cfg_.loss, attr).total;
    }
    if (batch.labels.size() != batch.size()) throw std::invalid_argument("model: missing labels");
    const auto& head = classifier_heads_.at(spec.name);
    if (!cfg_.all_layer_classification_loss) return ad::cross_entropy<T>(head.classify(hidden.back(), ctx), batch.labels);
    Tensor<T> total;
    for (const auto& h : hidden) {
      Tensor<T> l = ad::cross_entropy<T>(head.classify(h, ctx), batch.labels);
      total = total.defined() ? ad::add(total, l) : l;
    }
    return total;
  }

  /// Top-layer detection outputs (eval mode).
  DetectionOutputs<T> detect(const Batch& batch) const {
    const TaskSpec& spec = task(batch.task);
    if (spec.head != HeadType::detection) throw std::invalid_argument("model: '" + spec.name + "' is not a detection task");
    ad::NoGradScope<T> no_grad;
    const ForwardContext ctx{false, nullptr};
    return detection_heads(decode(batch, ctx), detection_heads_.at(spec.name), false).front();
  }

  /// Class logits [B, c] from the top layer (eval mode).
  Tensor<T> classify(const Batch& batch) const {
    const TaskSpec& spec = task(batch.task);
    if (spec.head != HeadType::classifier) throw std::invalid_argument("model: '" + spec.name + "' is not a classification task");
    ad::NoGradScope<T> no_grad;
    const ForwardContext ctx{false, nullptr};
    return classifier_heads_.at(spec.name).classify(decode(batch, ctx).back(), ctx);
  }

 private:
  ModelConfig cfg_;
  std::vector<TaskSpec> tasks_;
  std::map<std::string, std::size_t> index_;
  ParameterStore<T> store_;
  std::optional<ImageEncoder<T>> image_encoder_;
  std::optional<TextEncoder<T>> text_encoder_;
  UnifiedDecoder<T> decoder_;
  std::map<std::string, DetectionHeads<T>> detection_heads_;
  std::map<std::string, ClassifierHead<T>> classifier_heads_;
};

}  // namespace unit
