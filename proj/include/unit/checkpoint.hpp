#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/optimizer.hpp"
#include "unit/parameters.hpp"

namespace unit {

/// Thrown for unreadable, unwritable or malformed checkpoint files.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// '*' and '?' wildcards; a comma separates alternatives.
inline bool glob_match(const std::string& pattern, const std::string& name) {
  std::size_t start = 0;
  while (start <= pattern.size()) {
    const std::size_t end = std::min(pattern.find(',', start), pattern.size());
    const std::string p = pattern.substr(start, end - start);
    // Iterative wildcard match with single-star backtracking.
    std::size_t i = 0, j = 0, star = std::string::npos, mark = 0;
    while (j < name.size()) {
      if (i < p.size() && (p[i] == '?' || p[i] == name[j])) {
        ++i, ++j;
      } else if (i < p.size() && p[i] == '*') {
        star = i++, mark = j;
      } else if (star != std::string::npos) {
        i = star + 1, j = ++mark;
      } else {
        break;
      }
    }
    while (i < p.size() && p[i] == '*') ++i;
    if (j == name.size() && i == p.size()) return true;
    start = end + 1;
  }
  return false;
}

namespace detail {

template <class S>
void write_le(std::ostream& os, S v) {
  unsigned char bytes[sizeof(S)];
  std::memcpy(bytes, &v, sizeof(S));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(S));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(S));
}

template <class S>
S read_le(const char* p) {
  unsigned char bytes[sizeof(S)];
  std::memcpy(bytes, p, sizeof(S));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(S));
  S v;
  std::memcpy(&v, bytes, sizeof(S));
  return v;
}

struct ManifestEntry {
  std::string name;
  std::size_t width = 0;   // bytes per scalar
  std::size_t offset = 0;  // bytes from the payload start
  Shape shape;
};

}  // namespace detail

/// Writes parameters (and optimizer moments and step counters when given) as a
/// text manifest followed by little-endian arrays in manifest order.
template <class T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& store, const AdamW<T>* optimizer = nullptr) {
  struct Item {
    std::string name;
    Shape shape;
    std::vector<double> f64;  // step counters only
    std::span<const T> values;
  };
  std::vector<Item> items;
  for (const auto& [name, t] : store.entries()) items.push_back({name, t.shape(), {}, t.data()});
  if (optimizer) {
    const auto& slots = optimizer->slots();
    const auto& entries = store.entries();
    std::vector<double> steps;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      items.push_back({"optimizer.m/" + entries[i].first, entries[i].second.shape(), {}, slots[i].m});
      items.push_back({"optimizer.v/" + entries[i].first, entries[i].second.shape(), {}, slots[i].v});
      steps.push_back(static_cast<double>(slots[i].step));
    }
    items.push_back({"optimizer.steps", {entries.size()}, std::move(steps), {}});
  }
  std::ostringstream manifest;
  manifest << "UNITCKPT1\n" << items.size() << '\n';
  std::size_t offset = 0;
  for (const auto& it : items) {
    const std::size_t width = it.f64.empty() ? sizeof(T) : sizeof(double);
    manifest << it.name << ' ' << width << ' ' << offset << ' ' << it.shape.size();
    for (auto d : it.shape) manifest << ' ' << d;
    manifest << '\n';
    offset += width * ad::numel(it.shape);
  }
  manifest << "END\n";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint '" + path + "'");
  os << manifest.str();
  for (const auto& it : items) {
    if (!it.f64.empty()) {
      for (double v : it.f64) detail::write_le(os, v);
    } else {
      for (T v : it.values) detail::write_le(os, v);
    }
  }
  if (!os) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

struct LoadReport {
  std::vector<std::string> loaded;   // parameter names copied into the model
  std::vector<std::string> skipped;  // checkpoint parameters not copied
};

/// Copies checkpoint parameters whose names match `filter` into `store`.
/// Optimizer state is restored only when `optimizer` is given and the filter is
/// "*". A shape mismatch on a selected name is an error naming it.
template <class T>
LoadReport load_checkpoint(const std::string& path, ParameterStore<T>& store, const std::string& filter = "*",
                           AdamW<T>* optimizer = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot read checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line != "UNITCKPT1") throw CheckpointError("'" + path + "' is not a checkpoint");
  std::size_t count = 0;
  if (!std::getline(is, line) || !(std::istringstream(line) >> count))
    throw CheckpointError("corrupt manifest: missing entry count");
  std::vector<detail::ManifestEntry> manifest;
  std::size_t payload = 0;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw CheckpointError("corrupt manifest: truncated");
    std::istringstream ls(line);
    detail::ManifestEntry e;
    std::size_t rank = 0;
    if (!(ls >> e.name >> e.width >> e.offset >> rank) || (e.width != 4 && e.width != 8))
      throw CheckpointError("corrupt manifest line: " + line);
    e.shape.resize(rank);
    for (auto& d : e.shape)
      if (!(ls >> d)) throw CheckpointError("corrupt manifest line: " + line);
    if (e.offset != payload) throw CheckpointError("corrupt manifest: bad offset for " + e.name);
    payload += e.width * ad::numel(e.shape);
    manifest.push_back(std::move(e));
  }
  if (!std::getline(is, line) || line != "END") throw CheckpointError("corrupt manifest: missing END");
  std::vector<char> data(payload);
  is.read(data.data(), static_cast<std::streamsize>(payload));
  if (static_cast<std::size_t>(is.gcount()) != payload) throw CheckpointError("checkpoint payload truncated");

  auto read_into = [&](const detail::ManifestEntry& e, auto& out) {
    if (ad::numel(e.shape) != out.size()) throw CheckpointError("checkpoint size mismatch for " + e.name);
    const char* p = data.data() + e.offset;
    for (std::size_t k = 0; k < out.size(); ++k)
      out[k] = e.width == 8 ? static_cast<T>(detail::read_le<double>(p + 8 * k))
                            : static_cast<T>(detail::read_le<float>(p + 4 * k));
  };
  std::map<std::string, const detail::ManifestEntry*> by_name;
  for (const auto& e : manifest) by_name[e.name] = &e;

  LoadReport report;
  std::vector<std::string> mismatched;
  for (const auto& e : manifest) {
    if (e.name.rfind("optimizer.", 0) == 0) continue;
    if (!glob_match(filter, e.name) || !store.contains(e.name)) {
      report.skipped.push_back(e.name);
      continue;
    }
    if (store.at(e.name).shape() != e.shape) mismatched.push_back(e.name);
  }
  if (!mismatched.empty()) {
    std::string msg = "checkpoint shape mismatch:";
    for (const auto& n : mismatched) msg += " " + n;
    throw CheckpointError(msg);
  }
  for (const auto& e : manifest) {
    if (e.name.rfind("optimizer.", 0) == 0 || !glob_match(filter, e.name) || !store.contains(e.name)) continue;
    auto dst = store.at(e.name).mutable_data();
    read_into(e, dst);
    report.loaded.push_back(e.name);
  }
  if (optimizer && filter == "*") {
    auto steps = by_name.find("optimizer.steps");
    if (steps == by_name.end()) throw CheckpointError("checkpoint has no optimizer state");
    const auto& entries = store.entries();
    auto& slots = optimizer->slots();
    if (ad::numel(steps->second->shape) != entries.size()) throw CheckpointError("optimizer state size mismatch");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto m = by_name.find("optimizer.m/" + entries[i].first);
      auto v = by_name.find("optimizer.v/" + entries[i].first);
      if (m == by_name.end() || v == by_name.end()) throw CheckpointError("optimizer state missing for " + entries[i].first);
      read_into(*m->second, slots[i].m);
      read_into(*v->second, slots[i].v);
      slots[i].step = static_cast<std::size_t>(detail::read_le<double>(data.data() + steps->second->offset + 8 * i));
    }
  }
  return report;
}

}  // namespace unit
