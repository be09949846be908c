#pragma once

// Replay memories: a FIFO bank of stored pseudo-sample subsets and a VAE
// trained on the pseudo-sample stream. Both sit behind ReplaySource.

#include <deque>
#include <memory>
#include <stdexcept>
#include <vector>

#include "dfkd/nn.hpp"
#include "dfkd/optim.hpp"
#include "dfkd/pseudo_batch.hpp"

namespace dfkd::replay {

using nn::Rng;

class EmptyMemoryError : public std::runtime_error {
 public:
  EmptyMemoryError() : std::runtime_error("replay memory is empty") {}
};

class ReplaySource {
 public:
  virtual ~ReplaySource() = default;
  virtual bool empty() const = 0;
  // Throws EmptyMemoryError when empty, std::invalid_argument for n == 0.
  virtual PseudoBatch sample(std::size_t n, Rng& rng) = 0;
};

struct BankConfig {
  std::size_t capacity = 10;
  std::size_t subset_size = 64;
  std::size_t push_frequency = 5;  // epochs
  void validate() const;
};

class MemoryBank final : public ReplaySource {
 public:
  explicit MemoryBank(BankConfig cfg);

  const BankConfig& config() const { return cfg_; }
  // Epochs are counted from 1.
  bool push_due(std::size_t epoch) const { return epoch % cfg_.push_frequency == 0; }

  // Appends a uniformly random subset (without replacement) of x's rows and
  // evicts the oldest slot when over capacity.
  void push(const PseudoBatch& x, Rng& rng);

  bool empty() const override { return slots_.empty(); }
  // Uniform over all stored rows: without replacement when n fits in the
  // bank, with replacement otherwise.
  PseudoBatch sample(std::size_t n, Rng& rng) override;

  std::size_t slot_count() const { return slots_.size(); }
  std::size_t row_count() const;
  const Tensor& slot(std::size_t i) const { return slots_.at(i); }
  std::size_t pushes() const { return pushes_; }

  // Restores contents, e.g. from a checkpoint.
  void restore(std::vector<Tensor> slots, std::size_t pushes);

 private:
  BankConfig cfg_;
  std::deque<Tensor> slots_;
  std::size_t pushes_ = 0;
};

struct VaeConfig {
  std::size_t latent_dim = 1000;
  std::size_t width = 128;
  std::size_t depth = 2;
  double lr = 0.02;
  std::size_t update_frequency = 1;  // epochs
  std::size_t max_steps = 4;         // per (epoch, student-iteration block)
  std::size_t subset_size = 64;
  void validate() const;
};

struct VaeStep {
  bool trained = false;  // false when the budget or frequency forbade a step
  double loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

// Batch-mean KL(N(mu, exp(logvar)) || N(0, I)); mu, logvar are [N, L].
Tensor vae_kl(const Tensor& mu, const Tensor& logvar);

class GenerativeReplay final : public ReplaySource {
 public:
  // sample_shape is the per-sample shape the generator produces.
  GenerativeReplay(const Shape& sample_shape, VaeConfig cfg, std::uint64_t seed);

  const VaeConfig& config() const { return cfg_; }

  // Resets the per-block step budget.
  void begin_block() { steps_this_block_ = 0; }
  bool can_train(std::size_t epoch) const {
    return epoch % cfg_.update_frequency == 0 && steps_this_block_ < cfg_.max_steps;
  }

  // One ELBO step on x* (a random subset of x) concatenated with the replayed
  // batch when one is given.
  VaeStep train_step(std::size_t epoch, const PseudoBatch& x, const PseudoBatch* replayed, Rng& rng);

  // Negative ELBO on a batch without updating anything.
  VaeStep evaluate(const Tensor& x, Rng& rng);

  // Empty until the first training step.
  bool empty() const override { return total_steps_ == 0; }
  PseudoBatch sample(std::size_t n, Rng& rng) override;
  // Decoder output before its final batch norm (the tanh range).
  Tensor sample_pre_norm(std::size_t n, Rng& rng);

  std::size_t steps_this_block() const { return steps_this_block_; }
  std::size_t total_steps() const { return total_steps_; }
  nn::Network& encoder() { return encoder_; }
  nn::Network& decoder() { return decoder_; }
  optim::Adam& encoder_optimizer() { return enc_opt_; }
  optim::Adam& decoder_optimizer() { return dec_opt_; }
  void set_total_steps(std::size_t n) { total_steps_ = n; }

 private:
  VaeStep elbo(const Tensor& x, Rng& rng, bool update);

  VaeConfig cfg_;
  nn::Network encoder_;
  nn::Network decoder_;
  optim::Adam enc_opt_;
  optim::Adam dec_opt_;
  std::size_t steps_this_block_ = 0;
  std::size_t total_steps_ = 0;
};

// Uniformly random subset of k rows, without replacement, in draw order.
Tensor random_row_subset(const Tensor& x, std::size_t k, Rng& rng);

}  // namespace dfkd::replay
