// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero if
// any fails. Training runs are cached under --output-dir, keyed by their resolved
// configuration, so a rerun only repeats what changed.
#include <chrono>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "unit/checkpoint.hpp"
#include "unit/config.hpp"
#include "unit/gradcheck_suite.hpp"
#include "unit/trainer.hpp"

namespace fs = std::filesystem;
using namespace unit;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kComparisonIterations = 8000;  // multitask-benefit runs
constexpr std::size_t kDetectionPretrain = 4000;
constexpr std::size_t kInitProbe = 2000;
const std::vector<std::uint64_t> kSeeds{0, 1, 2};
const std::string kInitFilter = "image_encoder.*,det_head.*";

std::string root_dir = "acceptance_runs";
int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %2d %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig only(ExperimentConfig cfg, const std::string& task) {
  std::vector<TaskSpec> kept;
  for (const auto& t : cfg.tasks)
    if (t.name == task) kept.push_back(t);
  kept.at(0).probability = 1.0;
  cfg.tasks = kept;
  return cfg;
}

struct RunResult {
  std::map<std::string, double> metrics;  // "task/metric" at the final iteration
  double seconds = 0;
  std::string checkpoint;
};

/// Trains `cfg` into root/name unless an identical finished run is already there.
RunResult train(const std::string& name, const ExperimentConfig& cfg, const std::string& init = "",
                const std::string& filter = "*") {
  const std::string dir = root_dir + "/" + name;
  const std::string key = resolved_config_json(cfg) + "\ninit " + init + " " + filter + "\n";
  RunResult out;
  out.checkpoint = dir + "/checkpoint_final.bin";
  if (read_file(dir + "/run_key.txt") == key && fs::exists(dir + "/result.json")) {
    auto j = nlohmann::json::parse(read_file(dir + "/result.json"));
    out.seconds = j["seconds"];
    out.metrics = j["metrics"].get<std::map<std::string, double>>();
    std::cerr << "[cached] " << name << "\n";
    return out;
  }
  fs::create_directories(dir);
  fs::remove(dir + "/result.json");
  std::cerr << "[train] " << name << " (" << cfg.train.iterations << " iterations)\n";
  const auto t0 = Clock::now();
  UnitModel<float> model(cfg.model, cfg.tasks, cfg.train.seed);
  if (!init.empty()) load_checkpoint(init, model.parameters(), filter);
  Trainer<float> trainer(model, cfg.train);
  MetricsLog log(dir + "/metrics.jsonl");
  trainer.run(&log, dir, 0, [&](std::size_t t, const StepResult&) {
    if ((t + 1) % 1000 == 0) std::cerr << "  " << name << " " << t + 1 << "  " << seconds_since(t0) << " s\n";
  });
  out.seconds = seconds_since(t0);
  for (const auto& r : log.records())
    if (r.split == "val" && r.iteration == cfg.train.iterations) out.metrics[r.task + "/" + r.metric_name] = r.value;
  std::ofstream(dir + "/result.json") << nlohmann::json{{"seconds", out.seconds}, {"metrics", out.metrics}}.dump(1);
  std::ofstream(dir + "/run_key.txt") << key;
  return out;
}

void gradient_suite() {
  const auto t0 = Clock::now();
  std::size_t cases = 0, passed = 0, fewest = SIZE_MAX;
  double worst = 0;
  for (const auto& r : run_gradcheck_suite(20)) {
    ++cases;
    passed += r.worst_error < 1e-4;
    worst = std::max(worst, r.worst_error);
    fewest = std::min(fewest, r.instances);
  }
  const double secs = seconds_since(t0);
  report(1, passed == cases && fewest >= 20 && secs < 120,
         fmt("%zu/%zu cases below 1e-4 (worst %.2e), >= %zu instances each, %.1f s", passed, cases, worst, fewest,
             secs));
}

void matching_oracle() {
  Rng rng(7);
  double worst = 0;
  std::size_t n = 0;
  for (std::size_t m = 1; m <= 7; ++m)
    for (int inst = 0; inst < 1000; ++inst, ++n) {
      CostMatrix c(m + rng.uniform_int(std::uint64_t{2}), m);
      for (auto& v : c.values) v = rng.uniform(-3, 3);
      worst = std::max(worst, std::abs(hungarian_match(c).total_cost - oracle::brute_force(c).total_cost));
    }
  report(2, worst < 1e-9, fmt("%zu instances, M = 1..7, largest cost difference %.1e", n, worst));
}

void giou_properties() {
  Rng rng(8);
  auto box = [&] {
    const double w = rng.uniform(0.01, 0.8), h = rng.uniform(0.01, 0.8);
    return Box{rng.uniform(0, 1), rng.uniform(0, 1), w, h};
  };
  std::size_t bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const Box a = box(), b = box();
    const double g = giou(a, b);
    if (!(g > -1 && g <= 1 && g <= iou(a, b))) ++bad;
  }
  const Box u = Box::from_xyxy(0, 0, 1, 1);
  const double e1 = std::abs(giou(u, u) - 1), e2 = std::abs(giou(u, Box::from_xyxy(2, 0, 3, 1)) + 1.0 / 3.0),
               e3 = std::abs(giou(u, Box::from_xyxy(1, 0, 2, 1)));
  const double e = std::max({e1, e2, e3});
  report(3, bad == 0 && e <= 1e-12, fmt("%zu of 10000 pairs violate the bounds; worked examples off by %.1e", bad, e));
}

void map_oracle() {
  Rng rng(9);
  auto box = [&] {
    const double w = rng.uniform(0.05, 0.4), h = rng.uniform(0.05, 0.4);
    return Box{rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
  };
  std::vector<std::vector<Detection>> preds(50), perfect(50);
  std::vector<DetectionTarget> gts(50);
  for (std::size_t i = 0; i < 50; ++i) {
    for (auto g = rng.uniform_int(std::uint64_t{6}); g > 0; --g) {
      gts[i].classes.push_back(static_cast<int>(rng.uniform_int(std::uint64_t{3})));
      gts[i].boxes.push_back(box());
      perfect[i].push_back({gts[i].classes.back(), rng.uniform(), gts[i].boxes.back(), -1});
      if (rng.bernoulli(0.8)) {
        Box b = gts[i].boxes.back();
        b.cx += rng.normal() * 0.02, b.cy += rng.normal() * 0.02;
        preds[i].push_back({gts[i].classes.back(), std::round(rng.uniform() * 20) / 20, b, -1});
      }
    }
    for (auto f = rng.uniform_int(std::uint64_t{3}); f > 0; --f)
      preds[i].push_back({static_cast<int>(rng.uniform_int(std::uint64_t{3})), rng.uniform(), box(), -1});
  }
  double expected = 0;
  std::size_t terms = 0;
  for (int c = 0; c < 3; ++c) {
    bool present = false;
    for (const auto& g : gts) present = present || std::count(g.classes.begin(), g.classes.end(), c);
    if (!present) continue;
    for (double t : coco_iou_thresholds()) expected += oracle::reference_ap(preds, gts, c, t), ++terms;
  }
  expected /= static_cast<double>(terms);
  const double got = mean_average_precision(preds, gts, coco_iou_thresholds(), 3);
  const double one = mean_average_precision(perfect, gts, coco_iou_thresholds(), 3);
  report(4, std::abs(got - expected) <= 1e-9 && one == 1.0,
         fmt("evaluator %.12f vs brute force %.12f over 50 scenes; perfect predictions %.17g", got, expected, one));
}

void skip_unused() {
  ExperimentConfig cfg = parse_config_text("");
  cfg.train.iterations = 200;
  cfg.train.warmup = 20;
  cfg.train.batch_size = 4;
  UnitModel<float> model(cfg.model, cfg.tasks, 0);
  Trainer<float> trainer(model, cfg.train);
  const auto& entries = model.parameters().entries();
  auto state = [&](const std::string& prefix) {
    std::vector<float> out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].first.rfind(prefix, 0) != 0) continue;
      const auto d = entries[i].second.data();
      const auto& s = trainer.optimizer().slots()[i];
      out.insert(out.end(), d.begin(), d.end());
      out.insert(out.end(), s.m.begin(), s.m.end());
      out.insert(out.end(), s.v.begin(), s.v.end());
      out.push_back(static_cast<float>(s.step));
    }
    return out;
  };
  std::size_t text_steps = 0, vision_steps = 0, violations = 0;
  for (std::size_t t = 0; t < cfg.train.iterations; ++t) {
    const TaskSpec& spec = trainer.task_at(t);
    const bool text_only = !spec.uses_image, vision_only = !spec.uses_text;
    const std::string other = text_only ? "image_encoder." : "text_encoder.";
    const auto before = (text_only || vision_only) ? state(other) : std::vector<float>{};
    trainer.step(t);
    if (!text_only && !vision_only) continue;
    // bitwise comparison, so NaN-free float equality is exact here
    const auto after = state(other);
    if (std::memcmp(before.data(), after.data(), before.size() * sizeof(float)) != 0 || before.size() != after.size())
      ++violations;
    (text_only ? text_steps : vision_steps)++;
  }
  report(5, violations == 0 && text_steps > 0 && vision_steps > 0,
         fmt("%zu text-only and %zu vision-only steps of 200, %zu changed the other encoder or its optimizer state",
             text_steps, vision_steps, violations));
}

void sampler_statistics() {
  std::vector<double> p;
  for (const auto& t : default_tasks()) p.push_back(t.probability);
  Rng rng(10);
  std::vector<std::size_t> counts(p.size());
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws; ++i) ++counts[sample_task(rng, p)];
  double worst = 0;
  for (std::size_t k = 0; k < p.size(); ++k)
    worst = std::max(worst, std::abs(static_cast<double>(counts[k]) / draws - p[k]));
  report(6, worst <= 0.01, fmt("largest frequency deviation %.4f over 10^5 draws of 8 tasks", worst));
}

void joint_convergence() {
  const ExperimentConfig cfg = parse_config_text("");
  const RunResult r = train("joint_default_seed0", cfg);
  const std::vector<std::pair<std::string, double>> goals{
      {"shapes_det/mAP50", 0.80},        {"shapes_attr_det/mAP50", 0.80}, {"text_containment/accuracy", 0.90},
      {"text_nli3/accuracy", 0.90},      {"text_paraphrase/accuracy", 0.90}, {"text_polarity/accuracy", 0.90},
      {"shapes_vqa/accuracy", 0.85},     {"shapes_ve/accuracy", 0.85}};
  bool pass = cfg.train.iterations <= 20000 && r.seconds < 4 * 3600 && cfg.model.decoder.mode == DecoderMode::shared;
  std::string detail;
  for (const auto& [k, goal] : goals) {
    const double v = r.metrics.count(k) ? r.metrics.at(k) : -1;
    pass = pass && v >= goal;
    detail += fmt("%s %.3f%s ", k.c_str(), v, v >= goal ? "" : "(low)");
  }
  report(7, pass, fmt("%zu iterations in %.0f s; ", cfg.train.iterations, r.seconds) + detail);
}

void multitask_benefit() {
  std::map<std::string, double> joint, single;
  for (std::uint64_t seed : kSeeds) {
    ExperimentConfig cfg = parse_config_text("");
    cfg.train.seed = seed;
    cfg.train.iterations = kComparisonIterations;
    cfg.train.eval_every = 0;
    cfg.train.eval.samples = 1024;
    const std::string s = std::to_string(seed);
    const RunResult j = train("compare_joint_seed" + s, cfg);
    for (const char* task : {"shapes_vqa", "shapes_ve"}) {
      const RunResult one = train("compare_" + std::string(task) + "_seed" + s, only(cfg, task));
      joint[task] += j.metrics.at(std::string(task) + "/accuracy") / kSeeds.size();
      single[task] += one.metrics.at(std::string(task) + "/accuracy") / kSeeds.size();
    }
  }
  const double dq = 100 * (joint["shapes_vqa"] - single["shapes_vqa"]);
  const double de = 100 * (joint["shapes_ve"] - single["shapes_ve"]);
  report(8, dq >= -0.5 && de >= -0.5 && std::max(dq, de) >= 1.0,
         fmt("%zu iterations, 3 seeds: VQA joint %.2f%% vs single %.2f%% (%+.2f), VE joint %.2f%% vs single %.2f%% "
             "(%+.2f)",
             kComparisonIterations, 100 * joint["shapes_vqa"], 100 * single["shapes_vqa"], dq, 100 * joint["shapes_ve"],
             100 * single["shapes_ve"], de));
}

void parameter_sharing() {
  ModelConfig shared_cfg, separate_cfg;
  separate_cfg.decoder.mode = DecoderMode::separate;
  UnitModel<float> shared(shared_cfg, default_tasks(), 0), separate(separate_cfg, default_tasks(), 0);
  const std::size_t T = default_tasks().size(), stack = shared.decoder_stack_size();
  const std::size_t a = shared.parameters().scalar_count(), b = separate.parameters().scalar_count();
  report(9, T == 8 && a + (T - 1) * stack == b,
         fmt("shared %zu, separate %zu, decoder stack %zu, T = %zu", a, b, stack, T));
}

void determinism_and_persistence() {
  ExperimentConfig cfg = parse_config_text("");
  cfg.train.iterations = 200;
  cfg.train.warmup = 20;
  cfg.train.batch_size = 4;
  cfg.train.eval_every = 100;
  cfg.train.eval.samples = 32;
  const std::string dir = root_dir + "/determinism";
  fs::create_directories(dir);
  std::vector<std::string> logs;
  std::vector<MetricValue> reference;
  for (int k = 0; k < 2; ++k) {
    UnitModel<float> model(cfg.model, cfg.tasks, cfg.train.seed);
    Trainer<float> trainer(model, cfg.train);
    const std::string path = dir + "/metrics_" + std::to_string(k) + ".jsonl";
    {
      MetricsLog log(path);
      trainer.run(&log, dir);
    }
    logs.push_back(read_file(path));
    if (k == 0) reference = trainer.evaluate_all(cfg.train.iterations, nullptr);
  }
  UnitModel<float> restored(cfg.model, cfg.tasks, cfg.train.seed + 1);
  load_checkpoint(dir + "/checkpoint_final.bin", restored.parameters());
  Trainer<float> probe(restored, cfg.train);
  const auto again = probe.evaluate_all(cfg.train.iterations, nullptr);
  bool same_eval = again.size() == reference.size();
  for (std::size_t i = 0; same_eval && i < again.size(); ++i) same_eval = again[i].value == reference[i].value;
  const bool same_log = !logs[0].empty() && logs[0] == logs[1];

  // partial initialization from a detection-only checkpoint
  double with_init = 0, without = 0;
  bool names_ok = true;
  std::size_t loaded = 0;
  for (std::uint64_t seed : kSeeds) {
    ExperimentConfig det = only(parse_config_text(""), "shapes_det");
    det.train.seed = seed;
    det.train.iterations = kDetectionPretrain;
    det.train.eval_every = 0;
    const std::string s = std::to_string(seed);
    const RunResult pre = train("init_detection_seed" + s, det);

    UnitModel<float> det_model(det.model, det.tasks, seed);
    ExperimentConfig joint = parse_config_text("");
    joint.train.seed = seed;
    joint.train.iterations = kInitProbe;
    joint.train.warmup = kInitProbe / 10;
    joint.train.eval_every = 0;
    UnitModel<float> fresh(joint.model, joint.tasks, seed);
    const LoadReport r = load_checkpoint(pre.checkpoint, fresh.parameters(), kInitFilter);
    std::vector<std::string> expected;
    for (const auto& [name, t] : det_model.parameters().entries())
      if (glob_match(kInitFilter, name) && fresh.parameters().contains(name)) expected.push_back(name);
    names_ok = names_ok && !expected.empty() && r.loaded == expected;
    for (const auto& n : r.loaded) names_ok = names_ok && (n.rfind("image_encoder.", 0) == 0 || n.rfind("det_head.", 0) == 0);
    loaded = r.loaded.size();

    with_init += train("init_joint_from_detection_seed" + s, joint, pre.checkpoint, kInitFilter).metrics.at(
                     "shapes_det/mAP") / kSeeds.size();
    without += train("init_joint_random_seed" + s, joint).metrics.at("shapes_det/mAP") / kSeeds.size();
  }
  report(10, same_log && same_eval && names_ok && with_init > without,
         fmt("logs identical: %s; restored evaluation identical: %s; partial load of %zu expected names: %s; "
             "detection mAP at %zu iterations %.3f with detection init vs %.3f random (3 seeds)",
             same_log ? "yes" : "no", same_eval ? "yes" : "no", loaded, names_ok ? "yes" : "no", kInitProbe, with_init,
             without));
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--output-dir" && i + 1 < argc) root_dir = argv[++i];
    else if (a == "--only" && i + 1 < argc) selected.push_back(std::atoi(argv[++i]));
    else {
      std::cerr << "usage: acceptance [--output-dir DIR] [--only N]...\n";
      return 1;
    }
  }
  fs::create_directories(root_dir);
  const std::vector<void (*)()> criteria{gradient_suite,    matching_oracle,  giou_properties,
                                         map_oracle,        skip_unused,      sampler_statistics,
                                         joint_convergence, multitask_benefit, parameter_sharing,
                                         determinism_and_persistence};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), static_cast<int>(i + 1)) == selected.end())
      continue;
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i + 1), false, std::string("error: ") + e.what());
    }
  }
  return failures == 0 ? 0 : 1;
}
