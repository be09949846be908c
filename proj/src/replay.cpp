#include "dfkd/replay.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

#include "dfkd/ops.hpp"

namespace dfkd::replay {
namespace {

Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t d = x.dim(1);
  std::vector<double> out(rows.size() * d);
  const auto v = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return Tensor::from({rows.size(), d}, std::move(out));
}

// Columns [begin, end) of a [N, D] tensor, differentiably.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  const Tensor t = slice_rows(swap_leading(x, n, d), begin, end);
  return swap_leading(t, end - begin, n);
}

}  // namespace

Tensor random_row_subset(const Tensor& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.dim(0);
  if (k > n) throw std::invalid_argument("subset of " + std::to_string(k) + " rows from a batch of " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return take_rows(x, idx);
}

// ---------------------------------------------------------------- MemoryBank

void BankConfig::validate() const {
  if (capacity == 0 || subset_size == 0 || push_frequency == 0) {
    throw std::invalid_argument("memory bank capacity, subset size and push frequency must be positive");
  }
}

MemoryBank::MemoryBank(BankConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void MemoryBank::push(const PseudoBatch& x, Rng& rng) {
  if (x.size() < cfg_.subset_size) {
    throw std::invalid_argument("MemoryBank::push: batch of " + std::to_string(x.size()) + " rows is smaller than subset size " +
                                std::to_string(cfg_.subset_size));
  }
  if (!slots_.empty() && slots_.front().dim(1) != x.samples.dim(1)) {
    throw ShapeError("MemoryBank::push: sample width differs from stored slots");
  }
  slots_.push_back(random_row_subset(x.samples.detach(), cfg_.subset_size, rng));
  if (slots_.size() > cfg_.capacity) slots_.pop_front();
  ++pushes_;
}

std::size_t MemoryBank::row_count() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.dim(0);
  return n;
}

PseudoBatch MemoryBank::sample(std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("MemoryBank::sample: n must be >= 1");
  if (slots_.empty()) throw EmptyMemoryError();
  const std::size_t total = row_count();
  const std::size_t d = slots_.front().dim(1);
  std::vector<std::size_t> picks(n);
  if (n <= total) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    std::copy_n(idx.begin(), n, picks.begin());
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (auto& p : picks) p = pick(rng);
  }
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = picks[i];
    std::size_t s = 0;
    while (r >= slots_[s].dim(0)) r -= slots_[s++].dim(0);
    std::copy_n(slots_[s].values().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return PseudoBatch(Tensor::from({n, d}, std::move(out)), SampleSource::memory_bank);
}

void MemoryBank::restore(std::vector<Tensor> slots, std::size_t pushes) {
  if (slots.size() > cfg_.capacity) throw std::invalid_argument("MemoryBank::restore: more slots than capacity");
  slots_.assign(slots.begin(), slots.end());
  pushes_ = pushes;
}

// ---------------------------------------------------------------- GenerativeReplay

void VaeConfig::validate() const {
  if (latent_dim == 0 || width == 0 || depth == 0 || update_frequency == 0 || max_steps == 0 || subset_size == 0) {
    throw std::invalid_argument("VAE config: sizes, frequency and step budget must be positive");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("VAE config: lr must be positive");
}

Tensor vae_kl(const Tensor& mu, const Tensor& logvar) {
  if (mu.shape() != logvar.shape() || mu.rank() != 2) throw ShapeError("vae_kl: mu/logvar shape mismatch");
  // -1/2 * sum(1 + logvar - mu^2 - exp(logvar)), batch mean
  const Tensor inner = sub(sub(add_scalar(logvar, 1.0), square(mu)), exp(logvar));
  return scale(sum(inner), -0.5 / static_cast<double>(mu.dim(0)));
}

namespace {

nn::NetSpec encoder_spec(const Shape& sample_shape, const VaeConfig& cfg) {
  nn::NetSpec s;
  s.kind = nn::NetKind::vae_encoder;
  s.input_shape = sample_shape;
  s.output_dim = cfg.latent_dim;
  s.width = cfg.width;
  s.depth = cfg.depth;
  return s;
}

nn::NetSpec decoder_spec(const Shape& sample_shape, const VaeConfig& cfg) {
  nn::NetSpec s;
  s.kind = nn::NetKind::generator;
  s.input_shape = sample_shape;
  s.noise_dim = cfg.latent_dim;
  s.width = cfg.width;
  s.depth = cfg.depth;
  return s;
}

}  // namespace

GenerativeReplay::GenerativeReplay(const Shape& sample_shape, VaeConfig cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      encoder_(nn::build_network(encoder_spec(sample_shape, cfg), seed)),
      decoder_(nn::build_network(decoder_spec(sample_shape, cfg), seed + 1)),
      enc_opt_({.lr = cfg.lr}),
      dec_opt_({.lr = cfg.lr}) {}

VaeStep GenerativeReplay::elbo(const Tensor& x, Rng& rng, bool update) {
  std::optional<EnableGradGuard> enable;
  if (update) enable.emplace();
  const nn::ForwardOptions opts{.training = true, .update_buffers = update};
  const Tensor h = encoder_.forward(x, opts);
  const std::size_t l = cfg_.latent_dim;
  const Tensor mu = slice_cols(h, 0, l);
  const Tensor logvar = slice_cols(h, l, 2 * l);
  const Tensor eps = nn::sample_noise(x.dim(0), l, rng);
  const Tensor z = add(mu, mul(exp(scale(logvar, 0.5)), eps));
  const Tensor recon = decoder_.forward(z, opts);
  const Tensor rec = scale(sum(square(sub(recon, x))), 1.0 / static_cast<double>(x.dim(0)));
  const Tensor kl = vae_kl(mu, logvar);
  const Tensor loss = add(rec, kl);
  VaeStep out{.trained = update, .loss = loss.item(), .reconstruction = rec.item(), .kl = kl.item()};
  if (update) {
    std::vector<Tensor> both = encoder_.params().tensors();
    const std::size_t ne = both.size();
    both.insert(both.end(), decoder_.params().tensors().begin(), decoder_.params().tensors().end());
    std::vector<Tensor> g = grad(loss, both);
    std::vector<Tensor> gd(g.begin() + static_cast<std::ptrdiff_t>(ne), g.end());
    g.resize(ne);
    enc_opt_.step(encoder_.params(), ParamVector(encoder_.params().layout_ptr(), std::move(g)));
    dec_opt_.step(decoder_.params(), ParamVector(decoder_.params().layout_ptr(), std::move(gd)));
  }
  return out;
}

VaeStep GenerativeReplay::train_step(std::size_t epoch, const PseudoBatch& x, const PseudoBatch* replayed, Rng& rng) {
  if (!can_train(epoch)) return {};
  Tensor batch = random_row_subset(x.samples.detach(), std::min(cfg_.subset_size, x.size()), rng);
  if (replayed) batch = concat_rows(batch, replayed->samples.detach());
  VaeStep r = elbo(batch, rng, true);
  ++steps_this_block_;
  ++total_steps_;
  return r;
}

VaeStep GenerativeReplay::evaluate(const Tensor& x, Rng& rng) {
  NoGradGuard no_grad;
  return elbo(x.detach(), rng, false);
}

PseudoBatch GenerativeReplay::sample(std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("GenerativeReplay::sample: n must be >= 1");
  if (empty()) throw EmptyMemoryError();
  NoGradGuard no_grad;
  const Tensor z = nn::sample_noise(n, cfg_.latent_dim, rng);
  return PseudoBatch(decoder_.forward(z, {.training = false, .update_buffers = false}), SampleSource::generative_replay);
}

Tensor GenerativeReplay::sample_pre_norm(std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("GenerativeReplay::sample_pre_norm: n must be >= 1");
  NoGradGuard no_grad;
  const Tensor z = nn::sample_noise(n, cfg_.latent_dim, rng);
  return decoder_.forward_before_final_norm(z, {.training = false, .update_buffers = false});
}

}  // namespace dfkd::replay
