#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unit/model.hpp"
#include "unit/optimizer.hpp"
#include "unit/trainer.hpp"

namespace unit {

/// Raised for unknown keys and invalid values; the message names the key.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  ModelConfig model;
  std::vector<TaskSpec> tasks = default_tasks();
  TrainConfig train;
};

namespace detail {

using Json = nlohmann::ordered_json;

/// One configurable key: how to read it out of and write it into a config.
struct ConfigKey {
  std::string path;
  std::function<Json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const Json&)> set;
};

template <class V, class Ref>
ConfigKey make_key(std::string path, Ref ref) {
  return {path, [ref](const ExperimentConfig& c) { return Json(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, path](ExperimentConfig& c, const Json& j) {
            try {
              ref(c) = j.get<V>();
            } catch (const nlohmann::json::exception&) {
              throw ConfigError("config key '" + path + "': invalid value " + j.dump());
            }
          }};
}

inline ConfigKey activation_key(std::string path, std::function<Activation&(ExperimentConfig&)> ref) {
  return {path, [ref](const ExperimentConfig& c) {
            return Json(ref(const_cast<ExperimentConfig&>(c)) == Activation::gelu ? "gelu" : "relu");
          },
          [ref, path](ExperimentConfig& c, const Json& j) {
            const std::string v = j.is_string() ? j.get<std::string>() : "";
            if (v != "gelu" && v != "relu") throw ConfigError("config key '" + path + "': expected \"relu\" or \"gelu\"");
            ref(c) = v == "gelu" ? Activation::gelu : Activation::relu;
          }};
}

inline void layer_keys(std::vector<ConfigKey>& keys, const std::string& prefix,
                       std::function<LayerConfig&(ExperimentConfig&)> layer) {
  keys.push_back(make_key<std::size_t>(prefix + ".hidden", [layer](ExperimentConfig& c) -> auto& { return layer(c).width; }));
  keys.push_back(make_key<std::size_t>(prefix + ".heads", [layer](ExperimentConfig& c) -> auto& { return layer(c).heads; }));
  keys.push_back(make_key<std::size_t>(prefix + ".intermediate",
                                       [layer](ExperimentConfig& c) -> auto& { return layer(c).intermediate; }));
  keys.push_back(make_key<double>(prefix + ".dropout", [layer](ExperimentConfig& c) -> auto& { return layer(c).dropout; }));
  keys.push_back(activation_key(prefix + ".activation", [layer](ExperimentConfig& c) -> auto& { return layer(c).activation; }));
}

inline std::vector<ConfigKey> config_keys(const ExperimentConfig& shape) {
  std::vector<ConfigKey> k;
  using C = ExperimentConfig;
#define UNIT_KEY(type, path, member) k.push_back(make_key<type>(path, [](C & c) -> auto& { return c.member; }))
  UNIT_KEY(bool, "model.task_tokens", model.task_tokens);
  UNIT_KEY(bool, "model.cls_only", model.cls_only);
  UNIT_KEY(bool, "model.all_layer_classification_loss", model.all_layer_classification_loss);
  UNIT_KEY(double, "model.classifier_dropout", model.classifier_dropout);
  UNIT_KEY(std::size_t, "image_encoder.layers", model.image.layers);
  k.push_back({"image_encoder.backbone_channels",
               [](const C& c) { return Json(std::vector<std::size_t>(c.model.image.backbone_channels.begin(),
                                                                    c.model.image.backbone_channels.end())); },
               [](C& c, const Json& j) {
                 if (!j.is_array() || j.size() != 3)
                   throw ConfigError("config key 'image_encoder.backbone_channels': expected three channel counts");
                 for (std::size_t i = 0; i < 3; ++i) c.model.image.backbone_channels[i] = j[i].get<std::size_t>();
               }});
  layer_keys(k, "image_encoder", [](C& c) -> auto& { return c.model.image.layer; });
  UNIT_KEY(std::size_t, "text_encoder.layers", model.text.layers);
  UNIT_KEY(std::size_t, "text_encoder.vocab_size", model.text.vocab_size);
  UNIT_KEY(std::size_t, "text_encoder.max_length", model.text.max_length);
  layer_keys(k, "text_encoder", [](C& c) -> auto& { return c.model.text.layer; });
  UNIT_KEY(std::size_t, "decoder.layers", model.decoder.layers);
  k.push_back({"decoder.mode",
               [](const C& c) { return Json(c.model.decoder.mode == DecoderMode::shared ? "shared" : "separate"); },
               [](C& c, const Json& j) {
                 const std::string v = j.is_string() ? j.get<std::string>() : "";
                 if (v != "shared" && v != "separate")
                   throw ConfigError("config key 'decoder.mode': expected \"shared\" or \"separate\"");
                 c.model.decoder.mode = v == "shared" ? DecoderMode::shared : DecoderMode::separate;
               }});
  layer_keys(k, "decoder", [](C& c) -> auto& { return c.model.decoder.layer; });
  UNIT_KEY(double, "loss.class", model.loss.cls);
  UNIT_KEY(double, "loss.l1", model.loss.l1);
  UNIT_KEY(double, "loss.giou", model.loss.giou);
  UNIT_KEY(double, "loss.background", model.loss.background);
  UNIT_KEY(double, "loss.attribute", model.loss.attribute);
  UNIT_KEY(double, "optimizer.lr", train.lr);
  UNIT_KEY(std::size_t, "optimizer.warmup", train.warmup);
  UNIT_KEY(double, "optimizer.beta1", train.adam.beta1);
  UNIT_KEY(double, "optimizer.beta2", train.adam.beta2);
  UNIT_KEY(double, "optimizer.eps", train.adam.eps);
  UNIT_KEY(double, "optimizer.weight_decay", train.adam.weight_decay);
  UNIT_KEY(std::size_t, "training.iterations", train.iterations);
  UNIT_KEY(std::size_t, "training.batch_size", train.batch_size);
  UNIT_KEY(std::uint64_t, "training.seed", train.seed);
  UNIT_KEY(bool, "training.augment", train.augment);
  UNIT_KEY(bool, "training.freeze_image_encoder", train.freeze_image_encoder);
  UNIT_KEY(bool, "training.freeze_text_encoder", train.freeze_text_encoder);
  UNIT_KEY(std::size_t, "training.eval_every", train.eval_every);
  UNIT_KEY(std::size_t, "training.checkpoint_every", train.checkpoint_every);
  UNIT_KEY(std::size_t, "evaluation.samples", train.eval.samples);
  UNIT_KEY(std::size_t, "evaluation.batch_size", train.eval.batch_size);
  UNIT_KEY(double, "evaluation.score_threshold", train.eval.score_threshold);
  UNIT_KEY(std::size_t, "augment.min_side", train.augmentation.min_side);
  UNIT_KEY(std::size_t, "augment.max_side", train.augmentation.max_side);
  UNIT_KEY(std::size_t, "augment.min_crop", train.augmentation.min_crop);
  UNIT_KEY(std::size_t, "augment.max_crop", train.augmentation.max_crop);
#undef UNIT_KEY
  k.push_back({"tasks.enabled",
               [](const C& c) {
                 Json a = Json::array();
                 for (const auto& t : c.tasks) a.push_back(t.name);
                 return a;
               },
               [](C& c, const Json& j) {
                 if (!j.is_array() || j.empty()) throw ConfigError("config key 'tasks.enabled': expected a list of task names");
                 std::vector<TaskSpec> chosen;
                 for (const auto& name : j) {
                   const std::string n = name.is_string() ? name.get<std::string>() : name.dump();
                   bool found = false;
                   for (const auto& t : c.tasks)
                     if (t.name == n) chosen.push_back(t), found = true;
                   if (!found) throw ConfigError("config key 'tasks.enabled': unknown task '" + n + "'");
                 }
                 c.tasks = std::move(chosen);
               }});
  // Per-task keys exist for every task in the (already filtered) task list.
  for (std::size_t i = 0; i < shape.tasks.size(); ++i) {
    const std::string name = shape.tasks[i].name;
    auto task = [name](C& c) -> TaskSpec& {
      for (auto& t : c.tasks)
        if (t.name == name) return t;
      throw ConfigError("config: task '" + name + "' is not enabled");
    };
    k.push_back(make_key<double>("tasks." + name + ".probability", [task](C& c) -> auto& { return task(c).probability; }));
    k.push_back(make_key<std::size_t>("tasks." + name + ".queries", [task](C& c) -> auto& { return task(c).queries; }));
  }
  return k;
}

inline void flatten(const nlohmann::json& j, const std::string& prefix, std::vector<std::pair<std::string, Json>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out.emplace_back(prefix, Json::parse(j.dump()));
  }
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

/// A JSON literal, else a bare word, else a bracketed list of either.
inline Json parse_value(const std::string& value) {
  try {
    return Json::parse(value);
  } catch (const nlohmann::json::exception&) {
  }
  if (value.size() < 2 || value.front() != '[' || value.back() != ']') return value;
  Json list = Json::array();
  std::stringstream items(value.substr(1, value.size() - 2));
  for (std::string item; std::getline(items, item, ',');) {
    item = trim(item);
    if (!item.empty()) list.push_back(parse_value(item));
  }
  return list;
}

/// "key = value" entries separated by newlines or commas outside brackets and
/// quotes; '#' starts a comment. Values are JSON literals or bare words.
inline std::vector<std::pair<std::string, Json>> parse_key_values(const std::string& text) {
  std::vector<std::pair<std::string, Json>> out;
  std::vector<std::string> entries;
  std::string cur;
  int depth = 0;
  bool quoted = false, comment = false;
  for (char ch : text) {
    if (comment) {
      if (ch == '\n') comment = false;
      else continue;
    }
    if (ch == '"') quoted = !quoted;
    if (!quoted) {
      if (ch == '#') {
        comment = true;
        continue;
      }
      if (ch == '[') ++depth;
      if (ch == ']') --depth;
      if ((ch == '\n' || ch == ',') && depth == 0) {
        entries.push_back(cur);
        cur.clear();
        continue;
      }
    }
    cur += ch;
  }
  entries.push_back(cur);
  for (const auto& e : entries) {
    const std::string line = trim(e);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    out.emplace_back(key, parse_value(value));
  }
  return out;
}

}  // namespace detail

/// Validates cross-key constraints; messages name the offending key.
inline void validate(const ExperimentConfig& c) {
  std::vector<double> p;
  for (const auto& t : c.tasks) {
    p.push_back(t.probability);
    if (t.queries == 0) throw ConfigError("config key 'tasks." + t.name + ".queries' must be positive");
  }
  try {
    normalized_probabilities(p, 0.02);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config key 'tasks.*.probability': ") + e.what());
  }
  if (c.train.warmup >= c.train.iterations)
    throw ConfigError("config key 'optimizer.warmup' must be smaller than 'training.iterations'");
  try {
    c.train.validate();
    c.model.image.layer.validate("image_encoder");
    c.model.text.layer.validate("text_encoder");
    c.model.decoder.layer.validate("decoder");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.model.image.layer.width % 4 != 0) throw ConfigError("config key 'image_encoder.hidden' must be divisible by 4");
}

/// Parses JSON (a leading '{') or key/value text. Absent keys keep their
/// defaults; unknown keys are errors naming the full dotted path.
inline ExperimentConfig parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, detail::Json>> entries;
  const std::string body = detail::trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    detail::flatten(j, "", entries);
  } else {
    entries = detail::parse_key_values(body);
  }
  ExperimentConfig cfg;
  // The task list decides which per-task keys exist, so it is applied first.
  for (const auto& [key, value] : entries)
    if (key == "tasks.enabled")
      for (auto& k : detail::config_keys(cfg))
        if (k.path == key) k.set(cfg, value);
  // A task subset without explicit weights keeps the default weights' proportions.
  const bool subset = std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.first == "tasks.enabled"; });
  const bool weighted = std::any_of(entries.begin(), entries.end(), [](const auto& e) {
    return e.first.rfind("tasks.", 0) == 0 && e.first.size() > 12 && e.first.ends_with(".probability");
  });
  if (subset && !weighted) {
    double s = 0;
    for (const auto& t : cfg.tasks) s += t.probability;
    for (auto& t : cfg.tasks) t.probability /= s;
  }
  const auto keys = detail::config_keys(cfg);
  for (const auto& [key, value] : entries) {
    if (key == "tasks.enabled") continue;
    bool found = false;
    for (const auto& k : keys)
      if (k.path == key) k.set(cfg, value), found = true;
    if (!found) throw ConfigError("config: unknown key '" + key + "'");
  }
  validate(cfg);
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Fully resolved configuration as nested JSON; parsing it back yields the same config.
inline std::string resolved_config_json(const ExperimentConfig& cfg) {
  detail::Json root = detail::Json::object();
  for (const auto& k : detail::config_keys(cfg)) {
    detail::Json* node = &root;
    std::string path = k.path;
    std::size_t dot;
    while ((dot = path.find('.')) != std::string::npos) {
      node = &(*node)[path.substr(0, dot)];
      path = path.substr(dot + 1);
    }
    (*node)[path] = k.get(cfg);
  }
  return root.dump(2) + "\n";
}

}  // namespace unit
