#include "dfkd/config.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace dfkd {

using nlohmann::json;

namespace {

// Reads fields out of one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_, "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key), "wrong type");
    }
  }

  bool has(const char* key) {
    used_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string field(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.contains(k)) throw ConfigError(where_.empty() ? k : where_ + "." + k, "unknown key");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

json sgd_json(const optim::SgdConfig& s) {
  return {{"lr", s.lr}, {"momentum", s.momentum}, {"weight_decay", s.weight_decay}};
}

optim::SgdConfig sgd_from(const json& j, const std::string& where, optim::SgdConfig s) {
  Reader r(j, where);
  r.get("lr", s.lr);
  r.get("momentum", s.momentum);
  r.get("weight_decay", s.weight_decay);
  r.finish();
  return s;
}

template <class Fn>
auto parse_enum(const std::string& field, const std::string& text, Fn fn) {
  try {
    return fn(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  }
}

}  // namespace

std::string to_string(ReplayScheme s) { return s == ReplayScheme::bank ? "bank" : "generative"; }

ReplayScheme parse_replay_scheme(const std::string& text) {
  if (text == "bank") return ReplayScheme::bank;
  if (text == "generative") return ReplayScheme::generative;
  throw std::invalid_argument("unknown replay scheme '" + text + "' (expected bank, generative)");
}

void Schedule::validate() const {
  if (epochs == 0 || iterations == 0 || generator_steps == 0 || student_steps == 0 || noise_batch == 0 ||
      memory_batch == 0) {
    throw ConfigError("schedule", "all schedule entries must be positive");
  }
}

Schedule Schedule::paper() {
  return {.epochs = 200, .iterations = 72, .generator_steps = 1, .student_steps = 10, .noise_batch = 512,
          .memory_batch = 64};
}

ExperimentConfig ExperimentConfig::desk_default() {
  ExperimentConfig c;
  c.teacher = {.kind = nn::NetKind::classifier_mlp, .input_shape = {2}, .output_dim = 8, .width = 64, .depth = 2,
               .activation = nn::Activation::tanh};
  c.student = {.kind = nn::NetKind::classifier_mlp, .input_shape = {2}, .output_dim = 8, .width = 32, .depth = 2,
               .activation = nn::Activation::tanh};
  c.generator = {.kind = nn::NetKind::generator, .input_shape = {2}, .output_dim = 0, .width = 64, .depth = 2,
                 .noise_dim = 16, .activation = nn::Activation::leaky_relu};
  return c;
}

void ExperimentConfig::validate() const {
  const auto check_spec = [](const nn::NetSpec& s, const char* field) {
    try {
      s.validate();
    } catch (const std::exception& e) {
      throw ConfigError(field, e.what());
    }
  };
  check_spec(teacher, "teacher");
  check_spec(student, "student");
  check_spec(generator, "generator");
  if (teacher.kind == nn::NetKind::generator || teacher.kind == nn::NetKind::vae_encoder) {
    throw ConfigError("teacher.kind", "must be a classifier");
  }
  if (student.kind == nn::NetKind::generator || student.kind == nn::NetKind::vae_encoder) {
    throw ConfigError("student.kind", "must be a classifier");
  }
  if (generator.kind != nn::NetKind::generator) throw ConfigError("generator.kind", "must be generator");
  if (teacher.input_shape != student.input_shape || generator.input_shape != teacher.input_shape) {
    throw ConfigError("generator.input_shape", "generator, teacher and student sample shapes must agree");
  }
  if (teacher.output_dim != student.output_dim) throw ConfigError("student.output_dim", "must equal teacher.output_dim");
  if (dataset.kind != "synthetic" && dataset.kind != "csv" && dataset.kind != "idx") {
    throw ConfigError("dataset.kind", "expected synthetic, csv or idx");
  }
  if ((dataset.kind == "csv" || dataset.kind == "idx") && dataset.path.empty()) {
    throw ConfigError("dataset.path", "required for dataset kind " + dataset.kind);
  }
  if (dataset.kind == "synthetic" && (dataset.classes != teacher.output_dim || teacher.input_shape != Shape{2})) {
    throw ConfigError("dataset.classes", "synthetic data is 2-D with classes == teacher.output_dim");
  }
  schedule.validate();
  if (teacher_train.batch == 0) throw ConfigError("teacher_train.batch", "must be positive");
  try {
    inner.validate();
    prior.validate();
    replay.bank.validate();
    replay.vae.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("", e.what());
  }
  if (replay.scheme == ReplayScheme::bank && schedule.noise_batch < replay.bank.subset_size) {
    throw ConfigError("replay.bank.subset_size", "exceeds schedule.noise_batch");
  }
}

json to_json(const nn::NetSpec& s) {
  return {{"kind", nn::to_string(s.kind)}, {"input_shape", s.input_shape}, {"output_dim", s.output_dim},
          {"width", s.width},           {"depth", s.depth},             {"noise_dim", s.noise_dim},
          {"activation", nn::to_string(s.activation)}};
}

nn::NetSpec net_spec_from_json(const json& j, const std::string& where, nn::NetSpec s) {
  Reader r(j, where);
  std::string kind = nn::to_string(s.kind), act = nn::to_string(s.activation);
  r.get("kind", kind);
  r.get("input_shape", s.input_shape);
  r.get("output_dim", s.output_dim);
  r.get("width", s.width);
  r.get("depth", s.depth);
  r.get("noise_dim", s.noise_dim);
  r.get("activation", act);
  r.finish();
  s.kind = parse_enum(r.field("kind"), kind, nn::parse_net_kind);
  s.activation = parse_enum(r.field("activation"), act, nn::parse_activation);
  return s;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"kind", c.dataset.kind},     {"classes", c.dataset.classes}, {"per_class", c.dataset.per_class},
                  {"spread", c.dataset.spread}, {"radius", c.dataset.radius},   {"seed", c.dataset.seed},
                  {"path", c.dataset.path}};
  j["teacher"] = to_json(c.teacher);
  j["student"] = to_json(c.student);
  j["generator"] = to_json(c.generator);
  j["teacher_train"] = {{"epochs", c.teacher_train.epochs}, {"batch", c.teacher_train.batch},
                        {"sgd", sgd_json(c.teacher_train.sgd)}};
  j["schedule"] = {{"epochs", c.schedule.epochs},
                   {"iterations", c.schedule.iterations},
                   {"generator_steps", c.schedule.generator_steps},
                   {"student_steps", c.schedule.student_steps},
                   {"noise_batch", c.schedule.noise_batch},
                   {"memory_batch", c.schedule.memory_batch}};
  j["optim"] = {{"student", sgd_json(c.optim.student)},
                {"generator",
                 {{"lr", c.optim.generator.lr},
                  {"beta1", c.optim.generator.beta1},
                  {"beta2", c.optim.generator.beta2},
                  {"eps", c.optim.generator.eps}}}};
  const auto& b = c.replay.bank;
  const auto& v = c.replay.vae;
  j["replay"] = {{"scheme", to_string(c.replay.scheme)},
                 {"bank", {{"capacity", b.capacity}, {"subset_size", b.subset_size}, {"push_frequency", b.push_frequency}}},
                 {"vae",
                  {{"latent_dim", v.latent_dim},
                   {"width", v.width},
                   {"depth", v.depth},
                   {"lr", v.lr},
                   {"update_frequency", v.update_frequency},
                   {"max_steps", v.max_steps},
                   {"subset_size", v.subset_size}}}};
  j["inner"] = {{"mode", meta::to_string(c.inner.mode)},
                {"alpha", c.inner.alpha},
                {"include_plain_retention", c.inner.include_plain_retention}};
  j["prior"] = {{"gamma", c.prior.gamma}, {"delta", c.prior.delta}};
  j["diagnostics"] = {{"alignment_every", c.diagnostics.alignment_every},
                      {"taylor_every", c.diagnostics.taylor_every}};
  j["seed"] = c.seed;
  j["teacher_checkpoint"] = c.teacher_checkpoint;
  j["checkpoint_every"] = c.checkpoint_every;
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = ExperimentConfig::desk_default();
  Reader top(j, "");
  if (top.has("dataset")) {
    Reader r(top.at("dataset"), "dataset");
    r.get("kind", c.dataset.kind);
    r.get("classes", c.dataset.classes);
    r.get("per_class", c.dataset.per_class);
    r.get("spread", c.dataset.spread);
    r.get("radius", c.dataset.radius);
    r.get("seed", c.dataset.seed);
    r.get("path", c.dataset.path);
    r.finish();
  }
  if (top.has("teacher")) c.teacher = net_spec_from_json(top.at("teacher"), "teacher", c.teacher);
  if (top.has("student")) c.student = net_spec_from_json(top.at("student"), "student", c.student);
  if (top.has("generator")) c.generator = net_spec_from_json(top.at("generator"), "generator", c.generator);
  if (top.has("teacher_train")) {
    Reader r(top.at("teacher_train"), "teacher_train");
    r.get("epochs", c.teacher_train.epochs);
    r.get("batch", c.teacher_train.batch);
    if (r.has("sgd")) c.teacher_train.sgd = sgd_from(r.at("sgd"), "teacher_train.sgd", c.teacher_train.sgd);
    r.finish();
  }
  if (top.has("schedule")) {
    Reader r(top.at("schedule"), "schedule");
    r.get("epochs", c.schedule.epochs);
    r.get("iterations", c.schedule.iterations);
    r.get("generator_steps", c.schedule.generator_steps);
    r.get("student_steps", c.schedule.student_steps);
    r.get("noise_batch", c.schedule.noise_batch);
    r.get("memory_batch", c.schedule.memory_batch);
    r.finish();
  }
  if (top.has("optim")) {
    Reader r(top.at("optim"), "optim");
    if (r.has("student")) c.optim.student = sgd_from(r.at("student"), "optim.student", c.optim.student);
    if (r.has("generator")) {
      Reader g(r.at("generator"), "optim.generator");
      g.get("lr", c.optim.generator.lr);
      g.get("beta1", c.optim.generator.beta1);
      g.get("beta2", c.optim.generator.beta2);
      g.get("eps", c.optim.generator.eps);
      g.finish();
    }
    r.finish();
  }
  if (top.has("replay")) {
    Reader r(top.at("replay"), "replay");
    std::string scheme = to_string(c.replay.scheme);
    r.get("scheme", scheme);
    c.replay.scheme = parse_enum(r.field("scheme"), scheme, parse_replay_scheme);
    if (r.has("bank")) {
      Reader b(r.at("bank"), "replay.bank");
      b.get("capacity", c.replay.bank.capacity);
      b.get("subset_size", c.replay.bank.subset_size);
      b.get("push_frequency", c.replay.bank.push_frequency);
      b.finish();
    }
    if (r.has("vae")) {
      Reader v(r.at("vae"), "replay.vae");
      v.get("latent_dim", c.replay.vae.latent_dim);
      v.get("width", c.replay.vae.width);
      v.get("depth", c.replay.vae.depth);
      v.get("lr", c.replay.vae.lr);
      v.get("update_frequency", c.replay.vae.update_frequency);
      v.get("max_steps", c.replay.vae.max_steps);
      v.get("subset_size", c.replay.vae.subset_size);
      v.finish();
    }
    r.finish();
  }
  if (top.has("inner")) {
    Reader r(top.at("inner"), "inner");
    std::string mode = meta::to_string(c.inner.mode);
    r.get("mode", mode);
    c.inner.mode = parse_enum(r.field("mode"), mode, meta::parse_mode);
    r.get("alpha", c.inner.alpha);
    r.get("include_plain_retention", c.inner.include_plain_retention);
    r.finish();
  }
  if (top.has("prior")) {
    Reader r(top.at("prior"), "prior");
    r.get("gamma", c.prior.gamma);
    r.get("delta", c.prior.delta);
    r.finish();
  }
  if (top.has("diagnostics")) {
    Reader r(top.at("diagnostics"), "diagnostics");
    r.get("alignment_every", c.diagnostics.alignment_every);
    r.get("taylor_every", c.diagnostics.taylor_every);
    r.finish();
  }
  top.get("seed", c.seed);
  top.get("teacher_checkpoint", c.teacher_checkpoint);
  top.get("checkpoint_every", c.checkpoint_every);
  top.get("output_dir", c.output_dir);
  top.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setw(2) << to_json(c) << '\n';
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

}  // namespace dfkd
