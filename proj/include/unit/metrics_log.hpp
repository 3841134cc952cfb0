#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace unit {

struct MetricRecord {
  std::size_t iteration = 0;
  std::string task;
  std::string split;  // "train" or "val"
  std::string metric_name;
  double value = 0.0;
  double learning_rate = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

inline std::string to_json_line(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["iteration"] = r.iteration;
  j["task"] = r.task;
  j["split"] = r.split;
  j["metric_name"] = r.metric_name;
  j["value"] = r.value;
  j["learning_rate"] = r.learning_rate;
  return j.dump();
}

inline MetricRecord from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MetricRecord r;
  r.iteration = j.at("iteration").get<std::size_t>();
  r.task = j.at("task").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.metric_name = j.at("metric_name").get<std::string>();
  r.value = j.at("value").get<double>();
  r.learning_rate = j.at("learning_rate").get<double>();
  return r;
}

/// Append-only line-delimited metric records; also kept in memory.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write metrics log '" + path + "'");
  }

  void add(const MetricRecord& r) {
    records_.push_back(r);
    if (out_.is_open()) {
      out_ << to_json_line(r) << '\n';
      out_.flush();
    }
  }

  const std::vector<MetricRecord>& records() const { return records_; }

 private:
  std::ofstream out_;
  std::vector<MetricRecord> records_;
};

inline std::vector<MetricRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read metrics log '" + path + "'");
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(from_json_line(line));
  return out;
}

}  // namespace unit
