#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dfkd/checkpoint.hpp"
#include "dfkd/data.hpp"
#include "dfkd/engine.hpp"
#include "dfkd/metrics.hpp"
#include "dfkd/verify.hpp"

namespace dfkd::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

ExperimentConfig load_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig::desk_default() : load_config(path);
}

void write_json_line(std::ofstream& out, const json& j) {
  out << j.dump() << '\n';
  out.flush();
}

struct TeacherSource {
  nn::Network net;
  double test_acc;
  std::string origin;
};

TeacherSource obtain_teacher(const ExperimentConfig& cfg, const data::Split& split, const fs::path& run_dir,
                             std::ostream& out, bool quiet) {
  if (!cfg.teacher_checkpoint.empty()) {
    nn::Network net = nn::build_network(cfg.teacher, 0);
    const checkpoint::Checkpoint ck = checkpoint::read(cfg.teacher_checkpoint);
    try {
      checkpoint::load_network(ck, "teacher", net);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("teacher_checkpoint", e.what());
    }
    const double acc = engine::evaluate(net, split.test);
    return {std::move(net), acc, cfg.teacher_checkpoint};
  }
  if (!quiet) out << "no teacher_checkpoint given; training a teacher first\n";
  engine::TeacherResult tr = engine::pretrain_teacher(split, cfg.teacher, cfg.teacher_train, cfg.seed);
  checkpoint::Checkpoint ck;
  ck.meta["test_acc"] = tr.test_acc;
  ck.meta["seed"] = cfg.seed;
  checkpoint::add_network(ck, "teacher", tr.teacher);
  const fs::path path = run_dir / "teacher.ckpt";
  checkpoint::write(path, ck);
  return {std::move(tr.teacher), tr.test_acc, path.string()};
}

// ---------------------------------------------------------------- commands

struct PretrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
};

int cmd_pretrain_teacher(const PretrainArgs& a, std::ostream& out) {
  ExperimentConfig cfg = load_or_default(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const data::Split split = engine::load_dataset(cfg.dataset);
  const fs::path dir = create_run_dir(output_root(cfg), cfg);
  save_config(dir / "config.json", cfg);
  engine::TeacherResult tr = engine::pretrain_teacher(split, cfg.teacher, cfg.teacher_train, cfg.seed);
  checkpoint::Checkpoint ck;
  ck.meta["test_acc"] = tr.test_acc;
  ck.meta["seed"] = cfg.seed;
  checkpoint::add_network(ck, "teacher", tr.teacher);
  checkpoint::write(dir / "teacher.ckpt", ck);
  json report = {{"test_acc", tr.test_acc}, {"epoch_loss", tr.epoch_loss}, {"seed", cfg.seed},
                 {"config_hash", hash_hex(config_hash(cfg))}};
  std::ofstream(dir / "teacher_report.json") << report.dump(2) << '\n';
  out << "teacher test accuracy " << num(tr.test_acc) << "%\n";
  out << "checkpoint " << (dir / "teacher.ckpt").string() << '\n';
  return kOk;
}

struct DistillArgs {
  std::string config;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::string teacher;
  bool quiet = false;
};

int cmd_distill(const DistillArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_or_default(a.config);
  if (!a.mode.empty()) {
    try {
      cfg.inner.mode = meta::parse_mode(a.mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("mode", e.what());
    }
  }
  if (a.seed) cfg.seed = *a.seed;
  if (!a.teacher.empty()) cfg.teacher_checkpoint = a.teacher;
  cfg.validate();

  const data::Split split = engine::load_dataset(cfg.dataset);
  const fs::path dir = create_run_dir(output_root(cfg), cfg);
  save_config(dir / "config.json", cfg);
  fs::create_directories(dir / "checkpoints");
  std::ofstream runlog(dir / "runlog.jsonl");
  std::ofstream diag(dir / "diagnostics.jsonl");
  if (!runlog || !diag) throw std::runtime_error("cannot write logs in " + dir.string());

  TeacherSource teacher = obtain_teacher(cfg, split, dir, out, a.quiet);
  write_json_line(diag, {{"kind", "teacher"}, {"test_acc", teacher.test_acc}, {"source", teacher.origin}});
  if (!a.quiet) out << "run directory " << dir.string() << "\nteacher test accuracy " << num(teacher.test_acc) << "%\n";

  const std::uint64_t hash = config_hash(cfg);
  engine::RunHooks hooks;
  hooks.checkpoint_dir = dir / "checkpoints";
  hooks.on_diagnostic = [&](const json& j) { write_json_line(diag, j); };
  hooks.on_epoch = [&](const engine::EpochRecord& r) {
    write_json_line(runlog, engine::to_json(r, cfg, hash));
    if (!a.quiet) {
      out << "epoch " << r.epoch << '/' << cfg.schedule.epochs << " acc " << num(r.acc) << " loss_acq "
          << num(r.loss_acq) << " loss_g " << num(r.loss_g) << '\n';
    }
  };
  try {
    const engine::RunResult res = engine::run_distillation(cfg, teacher.net, split.test, hooks);
    const auto acc = res.accuracies();
    out << "final accuracy " << num(acc.back()) << "% acc_max " << num(metrics::acc_max(acc)) << "% teacher "
        << num(teacher.test_acc) << "%\n";
  } catch (const engine::NanAbort& e) {
    write_json_line(diag, {{"kind", "nan_abort"}, {"dump", e.dump()}});
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}

// -------------------------------------------------------------- analyze

struct RunSeries {
  std::string path;
  std::string mode = "unknown";
  std::vector<double> acc;
  std::vector<std::optional<double>> cos;
};

RunSeries read_runlog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data::DataError(path + ": cannot open run log");
  RunSeries run;
  run.path = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto bad = [&](const std::string& why) {
      return data::DataError(path + ":" + std::to_string(line_no) + ": " + why);
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw bad("not valid JSON");
    }
    if (!j.is_object() || !j.contains("epoch") || !j.contains("acc") || !j["epoch"].is_number_unsigned() ||
        !j["acc"].is_number()) {
      throw bad("expected an object with numeric 'epoch' and 'acc'");
    }
    if (j["epoch"].get<std::size_t>() != run.acc.size() + 1) throw bad("epochs must run 1, 2, 3, ...");
    run.acc.push_back(j["acc"].get<double>());
    const auto c = j.find("align_cos_mean");
    run.cos.push_back(c != j.end() && c->is_number() ? std::optional<double>(c->get<double>()) : std::nullopt);
    const auto m = j.find("mode");
    if (m != j.end() && m->is_string()) run.mode = m->get<std::string>();
  }
  if (run.acc.empty()) throw data::DataError(path + ": run log is empty");
  return run;
}

// Mean alignment cosine over the final quarter of epochs.
std::optional<double> late_alignment(const RunSeries& r) {
  std::vector<double> v;
  for (std::size_t i = metrics::percentile_start(r.acc.size(), 75); i < r.acc.size(); ++i) {
    if (r.cos[i]) v.push_back(*r.cos[i]);
  }
  if (v.empty()) return std::nullopt;
  return metrics::mean(v);
}

std::string table_csv(const RunSeries& r, const std::vector<int>& pcts) {
  std::ostringstream s;
  s << "percentile,mu,sigma2,n_epochs\n";
  for (int p : pcts) {
    const auto st = metrics::percentile_stats(r.acc, p);
    s << p << ',' << num(st.mu) << ',' << num(st.sigma2) << ',' << st.n_epochs << '\n';
  }
  s << "acc_max," << num(metrics::acc_max(r.acc)) << ",,\n";
  return s.str();
}

std::string cumulative_csv(const RunSeries& r) {
  std::ostringstream s;
  s << "epoch,acc,cumulative_mean\n";
  const auto cm = metrics::cumulative_mean(r.acc);
  for (std::size_t i = 0; i < r.acc.size(); ++i) s << i + 1 << ',' << num(r.acc[i]) << ',' << num(cm[i]) << '\n';
  return s.str();
}

std::string comparison_csv(const std::vector<RunSeries>& runs, const std::vector<int>& pcts) {
  std::map<std::string, std::vector<const RunSeries*>> by_mode;
  for (const auto& r : runs) by_mode[r.mode].push_back(&r);
  std::ostringstream s;
  s << "mode,runs,statistic,median\n";
  for (const auto& [mode, group] : by_mode) {
    const auto row = [&](const std::string& stat, double v) {
      s << mode << ',' << group.size() << ',' << stat << ',' << num(v) << '\n';
    };
    for (int p : pcts) {
      std::vector<double> mu, s2;
      for (const auto* r : group) {
        const auto st = metrics::percentile_stats(r->acc, p);
        mu.push_back(st.mu);
        s2.push_back(st.sigma2);
      }
      row("mu_p" + std::to_string(p), metrics::median(mu));
      row("sigma2_p" + std::to_string(p), metrics::median(s2));
    }
    std::vector<double> amax, cos;
    for (const auto* r : group) {
      amax.push_back(metrics::acc_max(r->acc));
      if (const auto c = late_alignment(*r)) cos.push_back(*c);
    }
    row("acc_max", metrics::median(amax));
    if (cos.size() == group.size()) row("align_cos_last25", metrics::median(cos));
  }
  return s.str();
}

struct AnalyzeArgs {
  std::vector<std::string> logs;
  std::vector<int> percentiles{std::begin(metrics::kDefaultPercentiles), std::end(metrics::kDefaultPercentiles)};
  std::string out_dir;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  for (int p : a.percentiles) {
    if (p < 0 || p >= 100) throw ConfigError("percentiles", "each percentile must lie in [0, 100)");
  }
  std::vector<RunSeries> runs;
  for (const auto& path : a.logs) runs.push_back(read_runlog(path));

  const auto emit = [&](const std::string& name, const std::string& heading, const std::string& body) {
    if (a.out_dir.empty()) {
      out << "# " << heading << '\n' << body << '\n';
    } else {
      const fs::path p = fs::path(a.out_dir) / name;
      std::ofstream f(p);
      if (!f) throw std::runtime_error("cannot write " + p.string());
      f << body;
      out << "wrote " << p.string() << '\n';
    }
  };
  if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    // Run logs usually share the file name, so outputs are numbered.
    const std::string stem = runs.size() == 1 ? "run" : "run" + std::to_string(i + 1);
    emit(stem + "_table.csv", "table " + runs[i].path, table_csv(runs[i], a.percentiles));
    emit(stem + "_cumulative.csv", "cumulative " + runs[i].path, cumulative_csv(runs[i]));
  }
  if (runs.size() > 1) emit("comparison.csv", "median comparison by mode", comparison_csv(runs, a.percentiles));
  return kOk;
}

struct VerifyArgs {
  std::string suite = "all";
  double tolerance_scale = 1.0;
  std::uint64_t seed = 1234;
};

int cmd_verify(const VerifyArgs& a, std::ostream& out) {
  const auto checks = verify::run_suite(a.suite, {.tolerance_scale = a.tolerance_scale, .seed = a.seed});
  std::size_t failed = 0;
  for (const auto& c : checks) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s  %-9s %-36s %.3e  (%s)\n", c.pass ? "PASS" : "FAIL", c.suite.c_str(),
                  c.name.c_str(), c.measured, c.bound.c_str());
    out << buf;
    if (!c.pass) ++failed;
  }
  out << checks.size() - failed << '/' << checks.size() << " checks passed\n";
  return failed == 0 ? kOk : kFailure;
}

struct MakeDataArgs {
  std::string out_dir;
  DatasetConfig ds;
};

int cmd_make_data(const MakeDataArgs& a, std::ostream& out) {
  if (a.ds.classes < 2) throw ConfigError("classes", "need at least 2 classes");
  if (a.ds.per_class < 2) throw ConfigError("per-class", "need at least 2 samples per class");
  if (!(a.ds.spread > 0.0)) throw ConfigError("spread", "must be positive");
  const data::Split split = data::make_synthetic_dataset({.classes = a.ds.classes, .per_class = a.ds.per_class,
                                                          .spread = a.ds.spread, .radius = a.ds.radius,
                                                          .seed = a.ds.seed});
  fs::create_directories(a.out_dir);
  data::write_csv(fs::path(a.out_dir) / "train.csv", split.train);
  data::write_csv(fs::path(a.out_dir) / "test.csv", split.test);
  out << "wrote " << split.train.size() << " train and " << split.test.size() << " test rows to " << a.out_dir
      << '\n';
  return kOk;
}

}  // namespace

fs::path output_root(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("DFKD_OUTPUT_ROOT"); env && *env) return env;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return "runs";
}

fs::path create_run_dir(const fs::path& root, const ExperimentConfig& cfg) {
  fs::create_directories(root);
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &utc);
  const std::string base = std::string(stamp) + "-" + hash_hex(config_hash(cfg)).substr(0, 8);
  for (int i = 0;; ++i) {
    const fs::path p = root / (i == 0 ? base : base + "-" + std::to_string(i));
    if (fs::create_directory(p)) return p;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Data-free knowledge distillation with meta-learned replay"};
  app.require_subcommand(1);

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain-teacher", "Train a teacher on the configured dataset");
  c_pre->add_option("--config", pre.config, "Experiment config (JSON); desk defaults when omitted");
  c_pre->add_option("--seed", pre.seed, "Override the config seed");

  DistillArgs dis;
  auto* c_dis = app.add_subcommand("distill", "Run data-free distillation");
  c_dis->add_option("--config", dis.config, "Experiment config (JSON); desk defaults when omitted");
  c_dis->add_option("--mode", dis.mode, "meta, naive_replay or no_replay");
  c_dis->add_option("--seed", dis.seed, "Override the config seed");
  c_dis->add_option("--teacher", dis.teacher, "Teacher checkpoint; trained in-run when absent");
  c_dis->add_flag("--quiet", dis.quiet, "Only print the summary line");

  AnalyzeArgs ana;
  auto* c_ana = app.add_subcommand("analyze", "Percentile statistics of run logs");
  c_ana->add_option("logs", ana.logs, "runlog.jsonl files")->required();
  c_ana->add_option("--percentiles", ana.percentiles, "Comma-separated percentiles")->delimiter(',');
  c_ana->add_option("--out", ana.out_dir, "Write CSV files here instead of stdout");

  VerifyArgs ver;
  auto* c_ver = app.add_subcommand("verify", "Run the numerical property suites");
  c_ver->add_option("--suite", ver.suite, "losses, hvp, taylor, metagrad or all")
      ->check(CLI::IsMember({"losses", "hvp", "taylor", "metagrad", "all"}));
  c_ver->add_option("--tolerance-scale", ver.tolerance_scale, "Multiply every tolerance")
      ->check(CLI::NonNegativeNumber);
  c_ver->add_option("--seed", ver.seed, "Seed for the random test problems");

  MakeDataArgs mk;
  auto* c_mk = app.add_subcommand("make-data", "Write the synthetic 2-D mixture as CSV");
  c_mk->add_option("--out", mk.out_dir, "Output directory")->required();
  c_mk->add_option("--classes", mk.ds.classes, "Number of classes");
  c_mk->add_option("--per-class", mk.ds.per_class, "Samples per class");
  c_mk->add_option("--spread", mk.ds.spread, "Per-coordinate standard deviation");
  c_mk->add_option("--radius", mk.ds.radius, "Radius of the circle of class means");
  c_mk->add_option("--seed", mk.ds.seed, "Sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (c_pre->parsed()) return cmd_pretrain_teacher(pre, out);
    if (c_dis->parsed()) return cmd_distill(dis, out, err);
    if (c_ana->parsed()) return cmd_analyze(ana, out);
    if (c_ver->parsed()) return cmd_verify(ver, out);
    if (c_mk->parsed()) return cmd_make_data(mk, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const data::DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"dfkd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace dfkd::cli
