#pragma once

// Experiment configuration. Serialized as JSON; every field has a default so a
// config file only needs the fields it changes.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "dfkd/losses.hpp"
#include "dfkd/meta.hpp"
#include "dfkd/nn.hpp"
#include "dfkd/optim.hpp"
#include "dfkd/replay.hpp"

namespace dfkd {

// Invalid or unreadable configuration; `field` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | csv | idx
  std::size_t classes = 8;
  std::size_t per_class = 250;
  double spread = 0.1;
  double radius = 1.0;
  std::uint64_t seed = 7;
  std::string path;  // csv: directory with train.csv/test.csv; idx: directory of IDX files
};

struct TeacherTrainConfig {
  std::size_t epochs = 100;
  std::size_t batch = 128;
  optim::SgdConfig sgd{.lr = 0.1, .momentum = 0.9, .weight_decay = 5e-4};
};

struct Schedule {
  std::size_t epochs = 50;  // E_max
  std::size_t iterations = 20;
  std::size_t generator_steps = 1;
  std::size_t student_steps = 5;
  std::size_t noise_batch = 128;
  std::size_t memory_batch = 32;
  void validate() const;
  static Schedule paper();
};

struct OptimConfig {
  optim::SgdConfig student{.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0};
  optim::AdamConfig generator{.lr = 0.02};
};

enum class ReplayScheme { bank, generative };

struct ReplayConfig {
  ReplayScheme scheme = ReplayScheme::bank;
  replay::BankConfig bank;
  replay::VaeConfig vae{.latent_dim = 16, .width = 64, .depth = 2};
};

struct DiagnosticsConfig {
  std::size_t alignment_every = 10;  // student steps; 0 disables
  std::size_t taylor_every = 0;      // student steps; 0 disables
};

struct ExperimentConfig {
  DatasetConfig dataset;
  nn::NetSpec teacher;
  nn::NetSpec student;
  nn::NetSpec generator;
  TeacherTrainConfig teacher_train;
  Schedule schedule;
  OptimConfig optim;
  ReplayConfig replay;
  meta::InnerStepConfig inner;
  losses::PriorWeights prior;
  DiagnosticsConfig diagnostics;
  std::uint64_t seed = 0;
  std::string teacher_checkpoint;  // empty: train one at the start of the run
  std::size_t checkpoint_every = 10;
  std::string output_dir;  // empty: $DFKD_OUTPUT_ROOT or ./runs

  // Desk-scale synthetic defaults (8-class 2-D mixture, MLPs).
  static ExperimentConfig desk_default();
  void validate() const;
};

std::string to_string(ReplayScheme s);
ReplayScheme parse_replay_scheme(const std::string& text);

nlohmann::json to_json(const nn::NetSpec& s);
// Keys missing from j keep their value in base.
nn::NetSpec net_spec_from_json(const nlohmann::json& j, const std::string& where, nn::NetSpec base = {});

nlohmann::json to_json(const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& c);

// FNV-1a over the canonical JSON, excluding output_dir.
std::uint64_t config_hash(const ExperimentConfig& c);
std::string hash_hex(std::uint64_t h);

}  // namespace dfkd
