#include "dfkd/engine.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dfkd/checkpoint.hpp"
#include "dfkd/losses.hpp"
#include "dfkd/ops.hpp"
#include "dfkd/optim.hpp"
#include "dfkd/replay.hpp"

namespace dfkd::engine {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 of (master, stream)
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double cosine_lr(std::size_t epoch, std::size_t e_max, double lr0) {
  if (e_max == 0 || epoch > e_max) throw std::invalid_argument("cosine_lr: need 0 <= epoch <= e_max, e_max > 0");
  if (epoch == e_max) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(e_max)));
}

double evaluate(nn::Network& net, const data::Dataset& test) {
  if (test.size() == 0) throw data::DataError("evaluate: empty test set");
  NoGradGuard no_grad;
  const Tensor logits = net.forward(test.x, {.training = false, .update_buffers = false});
  const std::size_t c = logits.dim(1);
  const auto v = logits.values();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (v[i * c + j] > v[i * c + best]) best = j;
    }
    if (static_cast<int>(best) == test.labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
}

data::Split load_dataset(const DatasetConfig& cfg) {
  if (cfg.kind == "synthetic") {
    return data::make_synthetic_dataset({.classes = cfg.classes, .per_class = cfg.per_class, .spread = cfg.spread,
                                         .radius = cfg.radius, .seed = cfg.seed});
  }
  if (cfg.kind == "csv") {
    const std::filesystem::path dir(cfg.path);
    return {data::read_csv(dir / "train.csv", cfg.classes), data::read_csv(dir / "test.csv", cfg.classes)};
  }
  if (cfg.kind == "idx") return data::load_idx_dataset(cfg.path);
  throw std::invalid_argument("unknown dataset kind " + cfg.kind);
}

namespace {

Tensor rows_of(const Tensor& x, const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
  const std::size_t d = x.dim(1);
  std::vector<double> out((end - begin) * d);
  const auto v = x.values();
  for (std::size_t i = begin; i < end; ++i) {
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(order[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>((i - begin) * d));
  }
  return Tensor::from({end - begin, d}, std::move(out));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, const std::vector<std::size_t>& order,
                     std::size_t begin) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<double> mask(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) mask[i * c + static_cast<std::size_t>(labels[order[begin + i]])] = 1.0;
  return scale(sum(mul(Tensor::from({n, c}, std::move(mask)), log_softmax_rows(logits))), -1.0 / static_cast<double>(n));
}

}  // namespace

TeacherResult pretrain_teacher(const data::Split& split, const nn::NetSpec& spec, const TeacherTrainConfig& cfg,
                               std::uint64_t seed) {
  split.train.validate();
  split.test.validate();
  if (spec.sample_size() != split.train.x.dim(1)) {
    throw ShapeError("pretrain_teacher: spec input " + shape_str(spec.input_shape) + " does not match data width " +
                     std::to_string(split.train.x.dim(1)));
  }
  if (cfg.batch == 0) throw std::invalid_argument("pretrain_teacher: batch must be positive");
  TeacherResult out{nn::build_network(spec, derive_seed(seed, 10)), 0.0, {}};
  nn::Network& net = out.teacher;
  nn::Rng rng(derive_seed(seed, 11));
  optim::Sgd opt(cfg.sgd);
  const std::size_t n = split.train.size();
  const std::size_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::size_t total = cfg.epochs * per_epoch;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t t = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = n; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < n; b += cfg.batch, ++t) {
      const std::size_t end = std::min(n, b + cfg.batch);
      EnableGradGuard enable;
      const Tensor x = rows_of(split.train.x, order, b, end);
      const Tensor loss = cross_entropy(net.forward(x, {.training = true}), split.train.labels, order, b);
      opt.set_lr(cosine_lr(t, total, cfg.sgd.lr));
      opt.step(net.params(), param_grad(loss, net.params()));
      epoch_loss += loss.item() * static_cast<double>(end - b);
    }
    out.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  out.test_acc = evaluate(net, split.test);
  return out;
}

json to_json(const EpochRecord& r, const ExperimentConfig& cfg, std::uint64_t hash) {
  const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"epoch", r.epoch},
          {"acc", r.acc},
          {"loss_g", r.loss_g},
          {"loss_acq", r.loss_acq},
          {"loss_ret", opt(r.loss_ret)},
          {"loss_ret_inner", opt(r.loss_ret_inner)},
          {"loss_meta", r.loss_meta},
          {"grad_norm_mean", r.grad_norm_mean},
          {"align_cos_mean", opt(r.align_cos_mean)},
          {"lr_s", r.lr_s},
          {"mode", meta::to_string(cfg.inner.mode)},
          {"replay", to_string(cfg.replay.scheme)},
          {"seed", cfg.seed},
          {"config_hash", hash_hex(hash)}};
}

std::vector<double> RunResult::accuracies() const {
  std::vector<double> a;
  for (const auto& r : log) a.push_back(r.acc);
  return a;
}

namespace {

struct Mean {
  double sum = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  std::optional<double> value() const { return n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt; }
};

std::string rng_state(const nn::Rng& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

bool finite(const ParamVector& g) {
  for (const auto& t : g.tensors()) {
    for (double v : t.values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

RunResult run_distillation(const ExperimentConfig& cfg, nn::Network& teacher, const data::Dataset& test,
                           const RunHooks& hooks) {
  cfg.validate();
  if (teacher.spec() != cfg.teacher) throw std::invalid_argument("run_distillation: teacher does not match cfg.teacher");
  const Schedule& sch = cfg.schedule;
  const std::uint64_t hash = config_hash(cfg);

  teacher.set_requires_grad(false);
  nn::Network student = nn::build_network(cfg.student, derive_seed(cfg.seed, 1));
  nn::Network generator = nn::build_network(cfg.generator, derive_seed(cfg.seed, 2));
  nn::Rng noise_rng(derive_seed(cfg.seed, 3));
  nn::Rng replay_rng(derive_seed(cfg.seed, 4));

  optim::Sgd student_opt(cfg.optim.student);
  optim::Adam generator_opt(cfg.optim.generator);

  const bool replay_on = cfg.inner.mode != meta::Mode::no_replay;
  std::unique_ptr<replay::MemoryBank> bank;
  std::unique_ptr<replay::GenerativeReplay> vae;
  if (replay_on && cfg.replay.scheme == ReplayScheme::bank) bank = std::make_unique<replay::MemoryBank>(cfg.replay.bank);
  if (replay_on && cfg.replay.scheme == ReplayScheme::generative) {
    vae = std::make_unique<replay::GenerativeReplay>(cfg.generator.input_shape, cfg.replay.vae, derive_seed(cfg.seed, 5));
  }
  replay::ReplaySource* memory = bank ? static_cast<replay::ReplaySource*>(bank.get()) : vae.get();

  const bool smooth_student = cfg.student.activation == nn::Activation::tanh;
  const nn::ForwardOptions sample_mode{.training = true, .update_buffers = false};
  const nn::ForwardOptions acq_mode{.training = true, .update_buffers = true};
  const nn::ForwardOptions probe_mode{.training = true, .update_buffers = false};

  RunResult result{{}, {}, nn::build_network(cfg.student, 0), nn::build_network(cfg.generator, 0)};
  Counters& counters = result.counters;

  const auto write_checkpoint = [&](const std::string& name, std::size_t epoch) {
    if (hooks.checkpoint_dir.empty()) return;
    checkpoint::Checkpoint ck;
    ck.meta["epoch"] = epoch;
    ck.meta["config_hash"] = hash_hex(hash);
    ck.meta["rng"] = {{"noise", rng_state(noise_rng)}, {"replay", rng_state(replay_rng)}};
    checkpoint::add_network(ck, "student", student);
    checkpoint::add_network(ck, "generator", generator);
    ck.add("student.optimizer.momentum", student_opt.state());
    const auto adam = generator_opt.state();
    ck.meta["generator_optimizer_steps"] = adam.t;
    ck.add("generator.optimizer.m", adam.m);
    ck.add("generator.optimizer.v", adam.v);
    if (bank) {
      ck.meta["bank"] = {{"slots", bank->slot_count()}, {"pushes", bank->pushes()}};
      for (std::size_t i = 0; i < bank->slot_count(); ++i) {
        const auto v = bank->slot(i).values();
        ck.add("bank.slot." + std::to_string(i), std::vector<double>(v.begin(), v.end()));
      }
    }
    if (vae) {
      ck.meta["vae_steps"] = vae->total_steps();
      checkpoint::add_network(ck, "vae_encoder", vae->encoder());
      checkpoint::add_network(ck, "vae_decoder", vae->decoder());
    }
    checkpoint::write(hooks.checkpoint_dir / name, ck);
  };

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= sch.epochs; ++epoch) {
    const double lr_s = cosine_lr(epoch - 1, sch.epochs, cfg.optim.student.lr);
    student_opt.set_lr(lr_s);
    Mean m_g, m_acq, m_ret, m_ret_inner, m_meta, m_cos, m_gnorm;
    PseudoBatch last_batch;

    for (std::size_t it = 0; it < sch.iterations; ++it) {
      for (std::size_t k = 0; k < sch.generator_steps; ++k) {
        EnableGradGuard enable;
        const Tensor z = nn::sample_noise(sch.noise_batch, cfg.generator.noise_dim, noise_rng);
        const auto gl = losses::generator_loss(teacher, student, generator, generator.params(), z, cfg.prior,
                                               {.training = true, .update_buffers = true});
        const ParamVector g = param_grad(gl.total, generator.params());
        if (!std::isfinite(gl.total.item()) || !finite(g)) {
          throw NanAbort({{"phase", "generator"}, {"epoch", epoch}, {"iteration", it}, {"lr_s", lr_s},
                          {"loss_g", gl.total.item()}, {"js", gl.js}, {"prior", gl.prior}, {"grad_norm", g.norm()}});
        }
        generator_opt.step(generator.params(), g);
        m_g.add(gl.total.item());
        ++counters.generator_steps;
      }

      if (vae) vae->begin_block();
      for (std::size_t k = 0; k < sch.student_steps; ++k) {
        ++step;
        Tensor x_hat;
        {
          NoGradGuard no_grad;
          x_hat = generator.forward(nn::sample_noise(sch.noise_batch, cfg.generator.noise_dim, noise_rng), sample_mode);
        }
        const PseudoBatch batch(x_hat, SampleSource::generator);
        last_batch = batch;

        std::optional<PseudoBatch> mem;
        if (memory && !memory->empty()) mem = memory->sample(sch.memory_batch, replay_rng);

        meta::InnerStepConfig icfg = cfg.inner;
        if (!mem) icfg.mode = meta::Mode::no_replay;  // empty-memory guard

        const meta::ParamLoss acq = meta::distillation_loss(teacher, student, batch, acq_mode);
        const meta::ParamLoss ret = mem ? meta::distillation_loss(teacher, student, *mem, probe_mode) : meta::ParamLoss{};

        if (mem && cfg.diagnostics.alignment_every && step % cfg.diagnostics.alignment_every == 0) {
          const meta::ParamLoss acq_probe = meta::distillation_loss(teacher, student, batch, probe_mode);
          const auto rep = meta::alignment_report(acq_probe, ret, student.params(), static_cast<long>(step));
          m_cos.add(rep.cos);
          ++counters.alignment_reports;
          if (hooks.on_diagnostic) {
            hooks.on_diagnostic({{"kind", "alignment"}, {"step", rep.step_index}, {"epoch", epoch}, {"dot", rep.dot},
                                 {"cos", rep.cos}, {"norm_acq", rep.norm_acq}, {"norm_ret", rep.norm_ret},
                                 {"zero_norm", rep.zero_norm}});
          }
        }
        if (mem && cfg.diagnostics.taylor_every && step % cfg.diagnostics.taylor_every == 0) {
          const meta::ParamLoss acq_probe = meta::distillation_loss(teacher, student, batch, probe_mode);
          const auto recs =
              meta::taylor_residual_check(acq_probe, ret, student.params(), {1e-2, 5e-3, 2.5e-3}, smooth_student);
          ++counters.taylor_checks;
          if (hooks.on_diagnostic) {
            for (const auto& r : recs) {
              hooks.on_diagnostic({{"kind", "taylor"}, {"step", step}, {"epoch", epoch}, {"alpha", r.alpha},
                                   {"residual_norm", r.residual_norm}, {"smooth_flag", r.smooth_flag}});
            }
          }
        }

        meta::MetaLoss value;
        const ParamVector grad = meta::meta_gradient(acq, ret, student.params(), icfg, &value);
        const double total = value.total.item();
        if (!std::isfinite(total) || !finite(grad)) {
          json dump = {{"phase", "student"}, {"epoch", epoch}, {"step", step}, {"lr_s", lr_s},
                       {"loss_acq", value.acq},  {"loss_meta", total}, {"grad_norm", grad.norm()}};
          if (value.ret_plain) dump["loss_ret"] = *value.ret_plain;
          if (value.ret_inner) dump["loss_ret_inner"] = *value.ret_inner;
          throw NanAbort(dump);
        }
        student_opt.step(student.params(), grad);
        ++counters.student_steps;

        m_acq.add(value.acq);
        m_meta.add(total);
        m_gnorm.add(grad.norm());
        if (value.ret_plain || value.ret_inner) {
          ++counters.retention_steps;
          if (!counters.first_retention_step) counters.first_retention_step = step;
          m_ret.add(value.ret_plain ? *value.ret_plain : *value.ret_inner);
        }
        if (value.ret_inner) m_ret_inner.add(*value.ret_inner);

        if (vae) {
          const auto r = vae->train_step(epoch, batch, mem ? &*mem : nullptr, replay_rng);
          if (r.trained) {
            ++counters.vae_steps;
            if (!std::isfinite(r.loss) && hooks.on_diagnostic) {
              hooks.on_diagnostic({{"kind", "warning"}, {"step", step}, {"message", "VAE loss diverged"}});
            }
          } else {
            ++counters.vae_skipped;
          }
        }
      }
    }

    if (bank && bank->push_due(epoch)) {
      bank->push(last_batch, replay_rng);
      ++counters.bank_pushes;
    }
    if (memory && !memory->empty() && !counters.first_memory_epoch) counters.first_memory_epoch = epoch;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.acc = evaluate(student, test);
    rec.loss_g = m_g.value().value_or(0.0);
    rec.loss_acq = m_acq.value().value_or(0.0);
    rec.loss_ret = m_ret.value();
    rec.loss_ret_inner = m_ret_inner.value();
    rec.loss_meta = m_meta.value().value_or(0.0);
    rec.grad_norm_mean = m_gnorm.value().value_or(0.0);
    rec.align_cos_mean = m_cos.value();
    rec.lr_s = lr_s;
    result.log.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0 && epoch != sch.epochs) {
      char name[48];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
      write_checkpoint(name, epoch);
    }
  }
  write_checkpoint("final.ckpt", sch.epochs);
  result.student = std::move(student);
  result.generator = std::move(generator);
  return result;
}

}  // namespace dfkd::engine
