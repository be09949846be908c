#pragma once

// Teacher pre-training and the adversarial distillation loop with replay.

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "dfkd/config.hpp"
#include "dfkd/data.hpp"
#include "dfkd/meta.hpp"
#include "dfkd/nn.hpp"

namespace dfkd::engine {

// lr0 * (1 + cos(pi * epoch / e_max)) / 2
double cosine_lr(std::size_t epoch, std::size_t e_max, double lr0);

// Top-1 accuracy in percent, evaluation mode, lowest index wins ties.
double evaluate(nn::Network& net, const data::Dataset& test);

data::Split load_dataset(const DatasetConfig& cfg);

struct TeacherResult {
  nn::Network teacher;
  double test_acc = 0.0;
  std::vector<double> epoch_loss;
};

// Cross-entropy training with SGD, cosine-annealed per iteration.
TeacherResult pretrain_teacher(const data::Split& split, const nn::NetSpec& spec, const TeacherTrainConfig& cfg,
                               std::uint64_t seed);

struct Counters {
  std::size_t generator_steps = 0;
  std::size_t student_steps = 0;
  std::size_t retention_steps = 0;  // student steps that evaluated a retention loss
  std::size_t bank_pushes = 0;
  std::size_t vae_steps = 0;
  std::size_t vae_skipped = 0;  // student steps whose VAE step the budget refused
  std::size_t alignment_reports = 0;
  std::size_t taylor_checks = 0;
  std::optional<std::size_t> first_retention_step;  // 1-based student step
  std::optional<std::size_t> first_memory_epoch;    // epoch after which memory became non-empty
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double acc = 0.0;
  double loss_g = 0.0;
  double loss_acq = 0.0;
  std::optional<double> loss_ret;        // mean L_Ret(theta), or L_Ret(theta') when only that is computed
  std::optional<double> loss_ret_inner;  // mean L_Ret(theta'), meta mode
  double loss_meta = 0.0;
  double grad_norm_mean = 0.0;  // mean norm of the student update gradient
  std::optional<double> align_cos_mean;
  double lr_s = 0.0;
};

nlohmann::json to_json(const EpochRecord& r, const ExperimentConfig& cfg, std::uint64_t hash);

// Raised when a loss or gradient turns non-finite; carries the state dump.
class NanAbort : public std::runtime_error {
 public:
  explicit NanAbort(nlohmann::json dump)
      : std::runtime_error("non-finite value during distillation: " + dump.dump()), dump_(std::move(dump)) {}
  const nlohmann::json& dump() const { return dump_; }

 private:
  nlohmann::json dump_;
};

struct RunHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const nlohmann::json&)> on_diagnostic;
  // When set, checkpoints go here every cfg.checkpoint_every epochs and at the end.
  std::filesystem::path checkpoint_dir;
};

struct RunResult {
  std::vector<EpochRecord> log;
  Counters counters;
  nn::Network student;
  nn::Network generator;
  std::vector<double> accuracies() const;
};

// Runs cfg.schedule.epochs epochs against a trained teacher.
RunResult run_distillation(const ExperimentConfig& cfg, nn::Network& teacher, const data::Dataset& test,
                           const RunHooks& hooks = {});

// Independent seeds for the run's random streams.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace dfkd::engine
