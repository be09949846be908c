#pragma once

// Binary checkpoints.
//
//   bytes 0..7   "DFKDCKPT"
//   u32 LE       format version
//   u64 LE       header length H
//   H bytes      JSON header: {"meta": ..., "sections": [{"name", "count"}]}
//   f64 LE       section payloads, in header order

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dfkd/nn.hpp"

namespace dfkd::checkpoint {

inline constexpr char kMagic[8] = {'D', 'F', 'K', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

struct Section {
  std::string name;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Section> sections;

  const Section* find(const std::string& name) const;
  void add(std::string name, std::vector<double> values) { sections.push_back({std::move(name), std::move(values)}); }
};

void write(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read(const std::filesystem::path& path);

// Network parameters and buffers under `prefix`; meta records the network spec and
// parameter layout.
void add_network(Checkpoint& ckpt, const std::string& prefix, const nn::Network& net);
// Throws std::invalid_argument when the stored spec or layout differs.
void load_network(const Checkpoint& ckpt, const std::string& prefix, nn::Network& net);

}  // namespace dfkd::checkpoint
