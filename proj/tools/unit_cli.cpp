// Command-line driver: train, eval, generate-data, gradcheck, plot-curves.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "unit/checkpoint.hpp"
#include "unit/config.hpp"
#include "unit/curves.hpp"
#include "unit/evaluation.hpp"
#include "unit/gradcheck_suite.hpp"
#include "unit/trainer.hpp"

namespace fs = std::filesystem;
using namespace unit;

namespace {

enum Exit { ok = 0, usage = 1, diverged = 2, io = 3 };

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config, output_dir, checkpoint, tasks;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  bool has_seed = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw IoError("cannot read config '" + c.config + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = parse_config_text(ss.str());
  }
  if (c.has_seed) cfg.train.seed = c.seed;
  if (c.iterations) {
    cfg.train.iterations = c.iterations;
    if (cfg.train.warmup >= cfg.train.iterations) cfg.train.warmup = cfg.train.iterations / 10;
  }
  if (!c.tasks.empty()) {
    std::vector<TaskSpec> chosen;
    for (const auto& name : split_list(c.tasks)) {
      bool found = false;
      for (const auto& t : cfg.tasks)
        if (t.name == name) chosen.push_back(t), found = true;
      if (!found) throw ConfigError("--tasks: unknown task '" + name + "'");
    }
    double s = 0;
    for (const auto& t : chosen) s += t.probability;
    for (auto& t : chosen) t.probability = s > 0 ? t.probability / s : 1.0 / static_cast<double>(chosen.size());
    cfg.tasks = std::move(chosen);
  }
  validate(cfg);
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const std::string probe = dir + "/.write_test";
  std::ofstream out(probe);
  if (ec || !out) throw IoError("output directory '" + dir + "' is not writable");
  out.close();
  fs::remove(probe, ec);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw IoError("cannot write '" + path + "'");
}

int run_train(const Common& c, const std::string& init_filter) {
  ExperimentConfig cfg = load_config(c);
  const std::string dir = c.output_dir.empty() ? "." : c.output_dir;
  ensure_dir(dir);
  write_text(dir + "/resolved_config.json", resolved_config_json(cfg));
  UnitModel<float> model(cfg.model, cfg.tasks, cfg.train.seed);
  if (!c.checkpoint.empty()) {
    LoadReport r = load_checkpoint(c.checkpoint, model.parameters(), init_filter);
    std::cout << "initialized " << r.loaded.size() << " parameters from " << c.checkpoint << " (" << r.skipped.size()
              << " skipped)\n";
  }
  std::cout << "parameters: " << model.parameters().scalar_count()
            << " (decoder stack: " << model.decoder_stack_size() << ")\n";
  Trainer<float> trainer(model, cfg.train);
  MetricsLog log(dir + "/metrics.jsonl");
  try {
    trainer.run(&log, dir, 0, [&](std::size_t t, const StepResult& r) {
      if ((t + 1) % 500 == 0) std::cout << "iteration " << t + 1 << " " << r.task << " loss " << r.loss << std::endl;
    });
  } catch (const DivergenceError& e) {
    log.add({e.iteration, e.task, "train", "diverged", 1.0, 0.0});
    std::cerr << "error: " << e.what() << "\n";
    return diverged;
  }
  write_text(dir + "/learning_curves.svg", learning_curves_svg(log.records()));
  for (const auto& r : log.records())
    if (r.split == "val" && r.iteration == cfg.train.iterations)
      std::cout << r.task << " " << r.metric_name << " " << r.value << "\n";
  return ok;
}

int run_eval(const Common& c) {
  if (c.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  ExperimentConfig cfg = load_config(c);
  UnitModel<float> model(cfg.model, cfg.tasks, cfg.train.seed);
  LoadReport r = load_checkpoint(c.checkpoint, model.parameters());
  if (r.loaded.size() != model.parameters().size())
    throw ConfigError("eval: checkpoint does not cover the model (" + std::to_string(r.loaded.size()) + " of " +
                      std::to_string(model.parameters().size()) + " parameters)");
  std::unique_ptr<MetricsLog> log;
  if (!c.output_dir.empty()) {
    ensure_dir(c.output_dir);
    log = std::make_unique<MetricsLog>(c.output_dir + "/eval_metrics.jsonl");
  }
  for (const auto& t : cfg.tasks)
    for (const auto& m : evaluate(model, t.name, cfg.train.seed, cfg.train.eval)) {
      std::cout << m.task << " " << m.name << " " << m.value << "\n";
      if (log) log->add({cfg.train.iterations, m.task, "val", m.name, m.value, 0.0});
    }
  return ok;
}

int run_generate(const Common& c, std::size_t count, const std::string& split_arg) {
  ExperimentConfig cfg = load_config(c);
  if (split_arg != "train" && split_arg != "val") throw ConfigError("generate-data: --split must be train or val");
  const Split split = split_arg == "train" ? Split::train : Split::validation;
  const std::string dir = c.output_dir.empty() ? "." : c.output_dir;
  ensure_dir(dir);
  for (const auto& spec : cfg.tasks) {
    std::ofstream ann(dir + "/" + spec.name + "_" + split_arg + ".jsonl");
    std::ofstream raw;
    if (spec.uses_image) raw.open(dir + "/" + spec.name + "_" + split_arg + ".f32", std::ios::binary);
    if (!ann || (spec.uses_image && !raw)) throw IoError("cannot write dataset files in '" + dir + "'");
    for (std::size_t i = 0; i < count; ++i) {
      Batch b = make_batch(spec, cfg.train.seed, {sample_index(split, i)});
      nlohmann::ordered_json j;
      j["index"] = i;
      if (!b.images.empty()) {
        for (float v : b.images[0].pixels) detail::write_le(raw, v);
        j["image_shape"] = {b.images[0].height, b.images[0].width, 3};
      }
      if (!b.targets.empty()) {
        nlohmann::ordered_json objs = nlohmann::ordered_json::array();
        const auto& t = b.targets[0];
        for (std::size_t k = 0; k < t.size(); ++k) {
          nlohmann::ordered_json o;
          o["class"] = data::shape_names[t.classes[k]];
          o["box"] = {t.boxes[k].cx, t.boxes[k].cy, t.boxes[k].w, t.boxes[k].h};
          if (!t.attributes.empty()) o["attribute"] = data::color_names[t.attributes[k]];
          objs.push_back(o);
        }
        j["objects"] = objs;
      }
      if (b.tokens.batch()) {
        std::vector<int> ids(b.tokens.ids.begin(), b.tokens.ids.begin() + static_cast<std::ptrdiff_t>(b.tokens.lengths[0]));
        j["text"] = data::default_vocabulary().detokenize(ids);
        j["tokens"] = ids;
      }
      if (!b.labels.empty()) j["label"] = b.labels[0];
      ann << j.dump() << '\n';
    }
    std::cout << "wrote " << count << " " << spec.name << " samples\n";
  }
  return ok;
}

int run_gradcheck(std::size_t instances) {
  bool all = true;
  for (const auto& r : run_gradcheck_suite(instances)) {
    const bool pass = r.worst_error < 1e-4;
    all = all && pass;
    std::printf("%-18s %s  worst relative error %.3e over %zu instances\n", r.name.c_str(), pass ? "PASS" : "FAIL",
                r.worst_error, r.instances);
  }
  return all ? ok : usage;
}

int run_plot(const std::string& metrics, const std::string& output) {
  std::vector<MetricRecord> records;
  try {
    records = read_metrics(metrics);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed metrics log '" + metrics + "': " + e.what());
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
  write_text(output, learning_curves_svg(records));
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified multimodal multitask transformer at desk scale"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "configuration file (JSON or key = value lines)");
    sub->add_option("--output-dir", common.output_dir, "directory for logs, checkpoints and exports");
    sub->add_option("--checkpoint", common.checkpoint, "checkpoint to load");
    sub->add_option("--seed", common.seed, "overrides training.seed")->each([&](const std::string&) { common.has_seed = true; });
    sub->add_option("--tasks", common.tasks, "comma-separated task subset");
    sub->add_option("--iterations", common.iterations, "overrides training.iterations");
  };
  auto* train = app.add_subcommand("train", "joint multitask training");
  add_common(train);
  std::string init_filter = "*";
  train->add_option("--init-filter", init_filter, "parameter-name glob for --checkpoint initialization");
  auto* eval = app.add_subcommand("eval", "validation metrics of a checkpoint");
  add_common(eval);
  auto* gen = app.add_subcommand("generate-data", "export synthetic samples");
  add_common(gen);
  std::size_t count = 16;
  std::string split = "train";
  gen->add_option("--count", count, "samples per task");
  gen->add_option("--split", split, "train or val");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::size_t instances = 20;
  grad->add_option("--instances", instances, "random instances per case");
  auto* plot = app.add_subcommand("plot-curves", "learning curves from a metrics log");
  std::string metrics, output = "learning_curves.svg";
  plot->add_option("--metrics", metrics, "metrics log")->required();
  plot->add_option("--output", output, "SVG output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }
  try {
    if (*train) return run_train(common, init_filter);
    if (*eval) return run_eval(common);
    if (*gen) return run_generate(common, count, split);
    if (*grad) return run_gradcheck(instances);
    if (*plot) return run_plot(metrics, output);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return io;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return io;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return usage;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return io;
  }
  return usage;
}
