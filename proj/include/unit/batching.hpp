#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/augment.hpp"
#include "unit/datasets.hpp"
#include "unit/model.hpp"

namespace unit {

enum class Split { train, validation };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "val"; }

/// Validation samples live far above any training index, so the splits never meet.
inline constexpr std::uint64_t validation_offset = std::uint64_t{1} << 40;

inline std::uint64_t sample_index(Split split, std::uint64_t i) {
  return split == Split::train ? i : validation_offset + i;
}

/// Generates samples `indices` of `spec` into one batch. Detection batches are
/// augmented when `augment_rng` is given (training only).
inline Batch make_batch(const TaskSpec& spec, std::uint64_t data_seed, const std::vector<std::uint64_t>& indices,
                        const AugmentConfig* augment = nullptr, Rng* augment_rng = nullptr) {
  Batch batch;
  batch.task = spec.name;
  std::vector<std::vector<int>> tokens;
  for (std::uint64_t index : indices) {
    if (spec.name == "shapes_det" || spec.name == "shapes_attr_det") {
      data::ShapeScene scene = data::gen_shapes_scene(data_seed, index, spec.num_attributes > 0);
      DetectionTarget target = scene.target();
      if (augment && augment_rng) {
        auto [im, t] = scale_crop_augment(scene.image, target, *augment_rng, *augment);
        batch.images.push_back(std::move(im));
        batch.targets.push_back(std::move(t));
      } else {
        batch.images.push_back(test_time_resize(scene.image));
        batch.targets.push_back(std::move(target));
      }
    } else if (spec.name == "shapes_vqa") {
      data::VqaSample s = data::gen_vqa_sample(data_seed, index);
      batch.images.push_back(std::move(s.scene.image));
      tokens.push_back(std::move(s.tokens));
      batch.labels.push_back(s.answer);
    } else if (spec.name == "shapes_ve") {
      data::VeSample s = data::gen_ve_sample(data_seed, index);
      batch.images.push_back(std::move(s.scene.image));
      tokens.push_back(std::move(s.tokens));
      batch.labels.push_back(s.label);
    } else {
      data::TextSample s = data::gen_text_sample(data_seed, index, spec.name);
      tokens.push_back(std::move(s.tokens));
      batch.labels.push_back(s.label);
    }
  }
  if (!tokens.empty()) batch.tokens = TokenBatch::pad(tokens);
  return batch;
}

/// True for the dataset names the generators know about.
inline bool known_dataset(const std::string& name) {
  for (const auto& t : default_tasks())
    if (t.name == name) return true;
  return false;
}

}  // namespace unit
