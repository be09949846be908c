// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "dfkd/engine.hpp"
#include "dfkd/losses.hpp"
#include "dfkd/meta.hpp"
#include "dfkd/metrics.hpp"
#include "dfkd/ops.hpp"
#include "dfkd/replay.hpp"
#include "dfkd/verify.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace dfkd;
namespace fs = std::filesystem;

namespace {

struct Item {
  std::string name;
  double measured;
  std::string bound;
  bool pass;
};

class Criterion {
 public:
  void below(const std::string& name, double measured, double tol) {
    add(name, measured, "< " + fmt(tol), measured < tol);
  }
  void at_least(const std::string& name, double measured, double bound) {
    add(name, measured, ">= " + fmt(bound), measured >= bound);
  }
  void at_most(const std::string& name, double measured, double bound) {
    add(name, measured, "<= " + fmt(bound), measured <= bound);
  }
  void expect(const std::string& name, bool ok) { add(name, ok ? 1.0 : 0.0, "true", ok); }
  void add_checks(const std::vector<verify::Check>& checks) {
    for (const auto& c : checks) add(c.suite + "/" + c.name, c.measured, c.bound, c.pass);
  }
  void note(std::string text) { notes_.push_back(std::move(text)); }

  bool pass() const {
    return !items_.empty() && std::all_of(items_.begin(), items_.end(), [](const Item& i) { return i.pass; });
  }
  std::size_t failed() const {
    return static_cast<std::size_t>(std::count_if(items_.begin(), items_.end(), [](const Item& i) { return !i.pass; }));
  }
  const std::vector<Item>& items() const { return items_; }
  const std::vector<std::string>& notes() const { return notes_; }

  static std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(4) << v;
    return s.str();
  }

 private:
  void add(const std::string& name, double measured, std::string bound, bool ok) {
    items_.push_back({name, measured, std::move(bound), ok});
  }
  std::vector<Item> items_;
  std::vector<std::string> notes_;
};

oracle::Mat random_mat(std::size_t n, std::size_t c, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> d(0.0, sd);
  oracle::Mat m(n, oracle::Vec(c));
  for (auto& row : m) {
    for (auto& v : row) v = d(rng);
  }
  return m;
}

Tensor to_tensor(const oracle::Mat& m) {
  std::vector<double> flat;
  for (const auto& row : m) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor::from({m.size(), m.front().size()}, flat);
}

std::shared_ptr<const ParamLayout> vec_layout(std::size_t n) {
  auto l = std::make_shared<ParamLayout>();
  l->add("x", {n});
  return l;
}

meta::ParamLoss quadratic_loss(const oracle::Quadratic& q) {
  const std::size_t n = q.b.size();
  std::vector<double> a;
  for (const auto& row : q.a) a.insert(a.end(), row.begin(), row.end());
  const Tensor at = Tensor::from({n, n}, a), bt = Tensor::from({n, 1}, q.b);
  return [at, bt, n](const ParamVector& p) {
    const Tensor x = reshape(p[0], {n, 1});
    return add(scale(sum(mul(x, matmul(at, x))), 0.5), sum(mul(bt, x)));
  };
}

oracle::Vec uniform_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  oracle::Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// ---------------------------------------------------------------- 1-4

Criterion losses_criterion() {
  Criterion c;
  std::mt19937_64 rng(101);
  const auto a = random_mat(6, 5, rng, 2.0), b = random_mat(6, 5, rng, 2.0);
  const auto pa = oracle::softmax(a), pb = oracle::softmax(b);
  c.below("kd_mae_vs_oracle", std::abs(losses::kd_mae(to_tensor(a), to_tensor(b)).item() - oracle::kd_mae(a, b)), 1e-12);
  c.below("js_vs_oracle", std::abs(losses::js_divergence(to_tensor(a), to_tensor(b)).item() - oracle::js(a, b)), 1e-12);
  c.below("kl_vs_oracle", std::abs(losses::kl_rows(to_tensor(pa), to_tensor(pb)).item() - oracle::kl_rows(pa, pb)), 1e-12);
  c.below("one_hot_vs_oracle", std::abs(losses::one_hot_loss(to_tensor(pa)).item() - oracle::one_hot(pa)), 1e-12);
  c.below("entropy_vs_oracle", std::abs(losses::entropy_max_loss(to_tensor(pa)).item() - oracle::entropy_max(pa)), 1e-12);
  c.below("activation_vs_oracle",
          std::abs(losses::activation_loss({to_tensor(a), to_tensor(b)}).item() - oracle::activation({a, b})), 1e-12);
  c.below("kd_mae_identity", std::abs(losses::kd_mae(to_tensor(a), to_tensor(a)).item()), 1e-300);
  c.below("js_self", std::abs(losses::js_divergence(to_tensor(a), to_tensor(a)).item()), 1e-12);
  const Tensor d1 = Tensor::from({1, 2}, {800, 0}), d2 = Tensor::from({1, 2}, {0, 800});
  c.below("js_disjoint_ln2", std::abs(losses::js_divergence(d1, d2).item() - std::numbers::ln2), 1e-9);
  for (std::size_t k : {2u, 5u, 10u}) {
    const Tensor u = Tensor::full({3, k}, 1.0 / static_cast<double>(k));
    const double lnk = std::log(static_cast<double>(k));
    c.below("entropy_min_C" + std::to_string(k), std::abs(losses::entropy_max_loss(u).item() + lnk), 1e-9);
    c.below("one_hot_uniform_C" + std::to_string(k), std::abs(losses::one_hot_loss(u).item() - lnk), 1e-9);
  }
  c.add_checks(verify::run_suite("losses"));
  return c;
}

Criterion hvp_criterion() {
  Criterion c;
  std::mt19937_64 rng(202);
  const auto q = oracle::Quadratic::random(9, rng);
  const auto x = uniform_vec(9, rng), v = uniform_vec(9, rng);
  const auto l = vec_layout(9);
  const auto h = meta::hvp(quadratic_loss(q), ParamVector::from_flat(l, x), ParamVector::from_flat(l, v)).flatten();
  c.below("quadratic_vs_oracle", oracle::max_abs_diff(h, q.apply(v)), 1e-10);
  c.add_checks(verify::run_suite("hvp"));
  return c;
}

Criterion metagrad_criterion() {
  Criterion c;
  std::mt19937_64 rng(303);
  const auto qa = oracle::Quadratic::random(8, rng), qr = oracle::Quadratic::random(8, rng);
  const auto x = uniform_vec(8, rng);
  const ParamVector theta = ParamVector::from_flat(vec_layout(8), x);
  for (double alpha : {0.1, 0.9}) {
    for (bool plain : {true, false}) {
      const auto g = meta::meta_gradient(quadratic_loss(qa), quadratic_loss(qr), theta, {alpha, plain, meta::Mode::meta});
      c.below("closed_form_alpha" + Criterion::fmt(alpha) + (plain ? "_plain" : ""),
              oracle::max_abs_diff(g.flatten(), oracle::meta_grad_closed_form(qa, qr, x, alpha, plain)), 1e-10);
    }
  }
  c.add_checks(verify::run_suite("metagrad"));
  return c;
}

Criterion taylor_criterion() {
  Criterion c;
  c.add_checks(verify::run_suite("taylor"));
  return c;
}

// ---------------------------------------------------------------- 5

Criterion metrics_criterion() {
  Criterion c;
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> acc(1 + rng() % 300);
    for (auto& a : acc) a = u(rng);
    for (int pct : metrics::kDefaultPercentiles) {
      if (metrics::percentile_start(acc.size(), pct) >= acc.size()) continue;
      const auto got = metrics::percentile_stats(acc, pct);
      const auto ref = oracle::percentile(acc, pct);
      if (got.n_epochs != ref.n) worst = INFINITY;
      worst = std::max({worst, std::abs(got.mu - ref.mu), std::abs(got.sigma2 - ref.sigma2)});
    }
    const auto cm = metrics::cumulative_mean(acc);
    worst = std::max(worst, oracle::max_abs_diff(cm, oracle::cumulative_mean(acc)));
    worst = std::max(worst, std::abs(metrics::acc_max(acc) - *std::max_element(acc.begin(), acc.end())));
  }
  c.below("random_series_max_abs_diff", worst, 1e-12);
  const std::vector<double> hand{1, 2, 3, 4, 5};
  const auto s = metrics::percentile_stats(hand, 40);
  c.below("hand_mu", std::abs(s.mu - 4.0), 1e-12);
  c.below("hand_sigma2", std::abs(s.sigma2 - 2.0 / 3.0), 1e-12);
  c.below("gap_0.83", std::abs(metrics::teacher_student_gap(77.94, 77.11) - 0.83), 1e-9);
  c.below("gap_0.73", std::abs(metrics::teacher_student_gap(77.94, 77.21) - 0.73), 1e-9);
  return c;
}

// ---------------------------------------------------------------- 6

PseudoBatch tagged_batch(std::size_t id, std::size_t rows) {
  std::vector<double> v;
  for (std::size_t r = 0; r < rows; ++r) v.push_back(static_cast<double>(id * 1000 + r));
  return PseudoBatch(Tensor::from({rows, 1}, v), SampleSource::generator);
}

ExperimentConfig short_config(meta::Mode mode, ReplayScheme scheme) {
  ExperimentConfig c = ExperimentConfig::desk_default();
  c.dataset.per_class = 60;
  c.teacher_train.epochs = 10;
  c.teacher_train.batch = 32;
  c.schedule = {.epochs = 6, .iterations = 2, .generator_steps = 1, .student_steps = 3, .noise_batch = 32,
                .memory_batch = 8};
  c.replay.scheme = scheme;
  c.replay.bank = {.capacity = 2, .subset_size = 16, .push_frequency = 3};
  c.replay.vae = {.latent_dim = 2, .width = 8, .depth = 1, .lr = 0.01, .update_frequency = 2, .max_steps = 2,
                  .subset_size = 16};
  c.inner.mode = mode;
  c.seed = 9;
  return c;
}

Criterion replay_criterion() {
  Criterion c;
  std::mt19937_64 meta_rng(606);

  // Bank against the reference FIFO model.
  bool fifo_ok = true, membership_ok = true, distinct_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t capacity = 1 + meta_rng() % 8, subset = 1 + meta_rng() % 10, batch = subset + meta_rng() % 12;
    const std::size_t pushes = meta_rng() % 30;
    replay::MemoryBank bank({.capacity = capacity, .subset_size = subset, .push_frequency = 1});
    oracle::BankModel model(capacity);
    nn::Rng rng(meta_rng());
    for (std::size_t id = 0; id < pushes; ++id) {
      bank.push(tagged_batch(id, batch), rng);
      model.push(static_cast<int>(id));
      const auto& slots = model.slots();
      fifo_ok = fifo_ok && bank.slot_count() == slots.size() && bank.slot_count() <= capacity;
      for (std::size_t s = 0; s < bank.slot_count() && fifo_ok; ++s) {
        std::set<std::size_t> rows;
        for (std::size_t r = 0; r < subset; ++r) {
          const auto tag = static_cast<std::size_t>(bank.slot(s).at(r));
          fifo_ok = fifo_ok && tag / 1000 == static_cast<std::size_t>(slots[s]);
          membership_ok = membership_ok && tag % 1000 < batch;
          rows.insert(tag % 1000);
        }
        distinct_ok = distinct_ok && rows.size() == subset;
      }
    }
  }
  c.expect("bank_fifo_and_capacity", fifo_ok);
  c.expect("bank_subset_membership", membership_ok);
  c.expect("bank_subset_without_replacement", distinct_ok);

  // GR step budget under random block schedules.
  bool budget_ok = true, frequency_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t freq = 1 + meta_rng() % 3, max_steps = 1 + meta_rng() % 4;
    replay::GenerativeReplay gr({2}, {.latent_dim = 2, .width = 4, .depth = 1, .lr = 0.01, .update_frequency = freq,
                                      .max_steps = max_steps, .subset_size = 4},
                                meta_rng());
    nn::Rng rng(meta_rng());
    std::normal_distribution<double> nd;
    std::vector<double> xv(16);
    for (auto& v : xv) v = nd(rng);
    const PseudoBatch x(Tensor::from({8, 2}, xv), SampleSource::generator);
    for (std::size_t epoch = 1; epoch <= 4; ++epoch) {
      for (int block = 0; block < 2; ++block) {
        gr.begin_block();
        const std::size_t attempts = meta_rng() % 7;
        std::size_t trained = 0;
        for (std::size_t a = 0; a < attempts; ++a) {
          if (gr.train_step(epoch, x, nullptr, rng).trained) ++trained;
          budget_ok = budget_ok && gr.steps_this_block() <= max_steps;
        }
        const std::size_t expect = epoch % freq == 0 ? std::min(attempts, max_steps) : 0;
        frequency_ok = frequency_ok && trained == expect;
      }
    }
  }
  c.expect("gr_budget_never_exceeded", budget_ok);
  c.expect("gr_update_frequency", frequency_ok);

  // Instrumented early-epoch runs: retention starts only once memory exists.
  for (ReplayScheme scheme : {ReplayScheme::bank, ReplayScheme::generative}) {
    const ExperimentConfig cfg = short_config(meta::Mode::meta, scheme);
    const data::Split split = engine::load_dataset(cfg.dataset);
    auto teacher = engine::pretrain_teacher(split, cfg.teacher, cfg.teacher_train, cfg.seed);
    const auto r = engine::run_distillation(cfg, teacher.teacher, split.test);
    const std::size_t per_epoch = cfg.schedule.iterations * cfg.schedule.student_steps;
    const std::string tag = to_string(scheme);
    if (scheme == ReplayScheme::bank) {
      const std::size_t f = cfg.replay.bank.push_frequency;
      c.expect(tag + "_first_retention_after_first_push",
               r.counters.first_retention_step == f * per_epoch + 1 && r.counters.first_memory_epoch == f);
      bool early_clean = true;
      for (std::size_t e = 0; e < f; ++e) early_clean = early_clean && !r.log[e].loss_ret && !r.log[e].loss_ret_inner;
      c.expect(tag + "_no_retention_before_memory", early_clean);
      c.expect(tag + "_retention_every_later_step",
               r.counters.retention_steps == (cfg.schedule.epochs - f) * per_epoch);
    } else {
      // Epoch 1 is not an update epoch (frequency 2): no memory, no retention.
      c.expect(tag + "_no_retention_before_first_vae_step",
               !r.log[0].loss_ret && r.counters.first_retention_step == per_epoch + 2);
      const std::size_t blocks = (cfg.schedule.epochs / 2) * cfg.schedule.iterations;
      c.expect(tag + "_budget_in_run", r.counters.vae_steps == blocks * cfg.replay.vae.max_steps);
    }
  }
  return c;
}

// ---------------------------------------------------------------- 7, 8

struct SeedRuns {
  double teacher_acc = 0.0;
  std::map<meta::Mode, std::vector<double>> acc;
  std::map<meta::Mode, std::vector<engine::EpochRecord>> log;
};

double tail_cos(const std::vector<engine::EpochRecord>& log) {
  const std::size_t start = metrics::percentile_start(log.size(), 75);
  std::vector<double> v;
  for (std::size_t i = start; i < log.size(); ++i) {
    if (log[i].align_cos_mean) v.push_back(*log[i].align_cos_mean);
  }
  return v.empty() ? NAN : metrics::mean(v);
}

std::vector<SeedRuns> desk_runs(const std::vector<std::uint64_t>& seeds, bool verbose) {
  std::vector<SeedRuns> out;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig cfg = ExperimentConfig::desk_default();
    cfg.seed = seed;
    const data::Split split = engine::load_dataset(cfg.dataset);
    auto teacher = engine::pretrain_teacher(split, cfg.teacher, cfg.teacher_train, seed);
    SeedRuns s;
    s.teacher_acc = teacher.test_acc;
    for (meta::Mode mode : {meta::Mode::meta, meta::Mode::naive_replay, meta::Mode::no_replay}) {
      cfg.inner.mode = mode;
      nn::Network t = teacher.teacher.clone();
      const auto r = engine::run_distillation(cfg, t, split.test);
      s.acc[mode] = r.accuracies();
      s.log[mode] = r.log;
      if (verbose) {
        std::cerr << "  seed " << seed << ' ' << meta::to_string(mode) << " acc_max " << metrics::acc_max(r.accuracies())
                  << " sigma2_p60 " << metrics::percentile_stats(r.accuracies(), 60).sigma2 << " cos_last25 "
                  << tail_cos(r.log) << '\n';
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

Criterion smoke_criterion(const std::vector<SeedRuns>& runs) {
  Criterion c;
  std::vector<double> teachers, best;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const double t = runs[i].teacher_acc, m = metrics::acc_max(runs[i].acc.at(meta::Mode::meta));
    teachers.push_back(t);
    best.push_back(m);
    c.at_least("seed" + std::to_string(i) + "_teacher_acc", t, 97.0);
    c.at_least("seed" + std::to_string(i) + "_acc_max_vs_4x_chance", m, 4.0 * 100.0 / 8.0);
  }
  c.at_least("median_acc_max_over_teacher", metrics::median(best) / metrics::median(teachers), 0.85);
  return c;
}

Criterion directional_criterion(const std::vector<SeedRuns>& runs) {
  Criterion c;
  std::vector<double> s_meta, s_none, c_meta, c_naive;
  for (const auto& r : runs) {
    // Final 40% of epochs: the 60th-percentile slice.
    s_meta.push_back(metrics::percentile_stats(r.acc.at(meta::Mode::meta), 60).sigma2);
    s_none.push_back(metrics::percentile_stats(r.acc.at(meta::Mode::no_replay), 60).sigma2);
    c_meta.push_back(tail_cos(r.log.at(meta::Mode::meta)));
    c_naive.push_back(tail_cos(r.log.at(meta::Mode::naive_replay)));
  }
  const auto list = [](const std::vector<double>& v) {
    std::ostringstream s;
    for (std::size_t i = 0; i < v.size(); ++i) s << (i ? " " : "") << Criterion::fmt(v[i]);
    return s.str();
  };
  c.note("sigma2_last40 meta      : " + list(s_meta));
  c.note("sigma2_last40 no_replay : " + list(s_none));
  c.note("cos_last25 meta         : " + list(c_meta));
  c.note("cos_last25 naive_replay : " + list(c_naive));
  const double m_meta = metrics::median(s_meta), m_none = metrics::median(s_none);
  c.at_most("a_median_sigma2_meta_minus_no_replay", m_meta - m_none, 0.0);
  c.at_least("b_median_cos_meta_minus_naive", metrics::median(c_meta) - metrics::median(c_naive), 0.0);
  return c;
}

// ---------------------------------------------------------------- 9

std::vector<std::string> raw_acc_series(const fs::path& runlog) {
  std::ifstream in(runlog);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto k = line.find("\"acc\":");
    if (k == std::string::npos) continue;
    const auto start = k + 6;
    out.push_back(line.substr(start, line.find_first_of(",}", start) - start));
  }
  return out;
}

Criterion determinism_criterion() {
  Criterion c;
  testing_support::TempDir dir;
  ExperimentConfig cfg = short_config(meta::Mode::meta, ReplayScheme::bank);
  cfg.schedule.epochs = 8;
  cfg.replay.bank.push_frequency = 2;
  cfg.diagnostics.taylor_every = 7;
  save_config(dir / "config.json", cfg);
  const std::string root = (dir / "runs").string();
  setenv("DFKD_OUTPUT_ROOT", root.c_str(), 1);
  std::ostringstream out, err;
  const std::vector<std::string> args{"distill", "--config", (dir / "config.json").string(), "--seed", "17", "--quiet"};
  const int first = cli::run(args, out, err);
  const int second = cli::run(args, out, err);
  unsetenv("DFKD_OUTPUT_ROOT");
  c.expect("both_runs_exit_0", first == 0 && second == 0);
  std::vector<fs::path> runs;
  for (const auto& e : fs::directory_iterator(root)) runs.push_back(e.path());
  c.expect("two_run_directories", runs.size() == 2);
  if (runs.size() == 2) {
    const auto a = raw_acc_series(runs[0] / "runlog.jsonl"), b = raw_acc_series(runs[1] / "runlog.jsonl");
    c.expect("series_length", a.size() == cfg.schedule.epochs && b.size() == a.size());
    c.expect("byte_identical_acc_series", a == b);
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  std::vector<int> only;
  bool verbose = false;
  std::size_t n_seeds = 5;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_flag("-v,--verbose", verbose, "Print every sub-check");
  app.add_option("--seeds", n_seeds, "Seeds for criteria 7 and 8")->check(CLI::Range(1, 100));
  CLI11_PARSE(app, argc, argv);
  const auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

  static const char* titles[] = {"",
                                 "loss oracles and gradients",
                                 "Hessian-vector products",
                                 "meta-gradient exactness",
                                 "Taylor scaling of the inner step",
                                 "metrics oracle",
                                 "replay semantics",
                                 "desk-scale distillation smoke",
                                 "directional stability and alignment",
                                 "determinism"};
  std::vector<SeedRuns> desk;
  if (wanted(7) || wanted(8)) {
    std::vector<std::uint64_t> seeds(n_seeds);
    std::iota(seeds.begin(), seeds.end(), 0);
    desk = desk_runs(seeds, verbose);
  }

  bool all = true;
  for (int k = 1; k <= 9; ++k) {
    if (!wanted(k)) continue;
    Criterion c;
    try {
      switch (k) {
        case 1: c = losses_criterion(); break;
        case 2: c = hvp_criterion(); break;
        case 3: c = metagrad_criterion(); break;
        case 4: c = taylor_criterion(); break;
        case 5: c = metrics_criterion(); break;
        case 6: c = replay_criterion(); break;
        case 7: c = smoke_criterion(desk); break;
        case 8: c = directional_criterion(desk); break;
        case 9: c = determinism_criterion(); break;
      }
    } catch (const std::exception& e) {
      c.expect(std::string("exception: ") + e.what(), false);
    }
    all = all && c.pass();
    std::cout << "criterion " << k << ' ' << (c.pass() ? "PASS" : "FAIL") << "  " << titles[k] << " ("
              << c.items().size() - c.failed() << '/' << c.items().size() << " checks)\n";
    for (const auto& i : c.items()) {
      if (verbose || !i.pass) {
        std::cout << "    " << (i.pass ? "ok   " : "FAIL ") << i.name << " = " << Criterion::fmt(i.measured) << " ("
                  << i.bound << ")\n";
      }
    }
    for (const auto& n : c.notes()) std::cout << "    " << n << '\n';
  }
  return all ? 0 : 1;
}
