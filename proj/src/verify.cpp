#include "dfkd/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>

#include "dfkd/losses.hpp"
#include "dfkd/meta.hpp"
#include "dfkd/nn.hpp"
#include "dfkd/ops.hpp"

namespace dfkd::verify {

namespace {

using meta::ParamLoss;

constexpr double kFdStep = 1e-5;

struct Recorder {
  std::string suite;
  double scale;
  std::vector<Check> checks;

  // Passes when measured < tol * scale.
  void below(const std::string& name, double measured, double tol) {
    const double bound = tol * scale;
    checks.push_back({suite, name, measured, "< " + fmt(bound), std::isfinite(measured) && measured < bound});
  }
  void within(const std::string& name, double measured, double lo, double hi) {
    const bool ok = std::isfinite(measured) && measured >= lo && measured <= hi;
    checks.push_back({suite, name, measured, "in [" + fmt(lo) + ", " + fmt(hi) + "]", ok});
  }
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
  }
};

std::vector<double> uniform(std::size_t n, nn::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Tensor random_tensor(Shape shape, nn::Rng& rng, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), uniform(n, rng, lo, hi));
}

nn::NetSpec tiny_mlp(std::size_t in, std::size_t classes, std::size_t width) {
  nn::NetSpec s;
  s.kind = nn::NetKind::classifier_mlp;
  s.input_shape = {in};
  s.output_dim = classes;
  s.width = width;
  s.depth = 2;
  s.activation = nn::Activation::tanh;
  return s;
}

nn::NetSpec tiny_generator(std::size_t out, std::size_t noise) {
  nn::NetSpec s;
  s.kind = nn::NetKind::generator;
  s.input_shape = {out};
  s.noise_dim = noise;
  s.width = 8;
  s.depth = 1;
  return s;
}

double value_at(const ParamLoss& f, const std::shared_ptr<const ParamLayout>& layout, std::span<const double> x) {
  NoGradGuard no_grad;
  return f(ParamVector::from_flat(layout, x)).item();
}

// Relative error between the analytic gradient of f and central differences.
double gradient_error(const ParamLoss& f, const ParamVector& theta) {
  const auto layout = theta.layout_ptr();
  const std::vector<double> analytic = meta::loss_gradient(f, theta).flatten();
  const std::vector<double> numeric =
      central_difference([&](std::span<const double> x) { return value_at(f, layout, x); }, theta.flatten(), kFdStep);
  return relative_error(analytic, numeric);
}

std::vector<double> sub_vec(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Teacher/student pair with a pseudo batch and a memory batch.
// Teacher minus student logits on x, flattened.
std::vector<double> logit_gaps(nn::Network& teacher, nn::Network& student, const ParamVector& params, const Tensor& x) {
  NoGradGuard no_grad;
  const Tensor t = teacher.forward(x, {.training = false, .update_buffers = false});
  const Tensor s = student.forward(params, x, {.training = true, .update_buffers = false});
  std::vector<double> d(t.numel());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = t.at(i) - s.at(i);
  return d;
}

// Tiny teacher/student pair with a generator batch and a memory batch. The
// distillation loss is an L1 norm, so every row is drawn to keep each logit
// gap at least kMargin away from zero: at theta for both batches, and for the
// memory batch also along theta - a * grad L_Acq for a in [0, 0.01] and at the
// inner-step point a = 0.9. Finite differences and the Taylor ladder then
// stay on one smooth piece of the loss.
struct Bench {
  static constexpr double kMargin = 0.05;
  nn::Network teacher;
  nn::Network student;
  PseudoBatch batch;
  PseudoBatch memory;

  explicit Bench(std::uint64_t seed)
      : teacher(nn::build_network(tiny_mlp(3, 4, 16), seed)),
        student(nn::build_network(tiny_mlp(3, 4, 12), seed + 1)) {
    teacher.set_requires_grad(false);
    nn::Rng rng(seed + 2);
    const ParamVector theta = student.params().detached(false);
    batch = PseudoBatch(draw_rows(16, rng, {theta}, {}), SampleSource::generator);
    const ParamVector g = meta::loss_gradient(acq(), theta);
    std::vector<ParamVector> path;
    for (int k = 0; k <= 40; ++k) path.push_back(theta.minus_scaled(g, 0.01 * k / 40.0));
    memory = PseudoBatch(draw_rows(12, rng, path, theta.minus_scaled(g, 0.9)), SampleSource::memory_bank);
  }
  ParamLoss acq() { return meta::distillation_loss(teacher, student, batch); }
  ParamLoss ret() { return meta::distillation_loss(teacher, student, memory); }

 private:
  // Rows whose gaps keep their sign along `path` and clear kMargin there and
  // at `also` when given.
  Tensor draw_rows(std::size_t n, nn::Rng& rng, const std::vector<ParamVector>& path,
                   const std::optional<ParamVector>& also) {
    const auto clear = [](const std::vector<double>& d) {
      return std::all_of(d.begin(), d.end(), [](double v) { return std::abs(v) >= kMargin; });
    };
    std::vector<double> rows;
    for (int attempt = 0; rows.size() < n * 3; ++attempt) {
      if (attempt == 100000) throw std::runtime_error("verify bench: no rows clear of the L1 kinks");
      const Tensor x = random_tensor({1, 3}, rng, -2.0, 2.0);
      const auto ref = logit_gaps(teacher, student, path.front(), x);
      bool ok = clear(ref) && (!also || clear(logit_gaps(teacher, student, *also, x)));
      for (std::size_t k = 1; k < path.size() && ok; ++k) {
        const auto d = logit_gaps(teacher, student, path[k], x);
        for (std::size_t i = 0; i < d.size() && ok; ++i) ok = std::abs(d[i]) >= kMargin && (d[i] > 0) == (ref[i] > 0);
      }
      if (ok) rows.insert(rows.end(), x.values().begin(), x.values().end());
    }
    return Tensor::from({n, 3}, std::move(rows));
  }
};

// 0.5 x'Ax + b'x on a single-slot parameter vector.
struct Quadratic {
  std::size_t n;
  std::vector<double> a;  // row-major, symmetric
  std::vector<double> b;

  Quadratic(std::size_t dim, nn::Rng& rng) : n(dim), a(dim * dim), b(uniform(dim, rng)) {
    const auto m = uniform(dim * dim, rng);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) a[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
    }
  }
  ParamLoss loss() const {
    const Tensor at = Tensor::from({n, n}, a);
    const Tensor bt = Tensor::from({n, 1}, b);
    const std::size_t dim = n;
    return [at, bt, dim](const ParamVector& p) {
      const Tensor x = reshape(p[0], {dim, 1});
      return add(scale(sum(mul(x, matmul(at, x))), 0.5), sum(mul(bt, x)));
    };
  }
  std::vector<double> apply(std::span<const double> x) const {
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[i] += a[i * n + j] * x[j];
    }
    return out;
  }
  std::vector<double> gradient(std::span<const double> x) const {
    auto g = apply(x);
    for (std::size_t i = 0; i < n; ++i) g[i] += b[i];
    return g;
  }
  double value(std::span<const double> x) const { return 0.5 * dot(x, apply(x)) + dot(b, x); }
};

std::shared_ptr<const ParamLayout> vector_layout(std::size_t n) {
  auto layout = std::make_shared<ParamLayout>();
  layout->add("x", {n});
  return layout;
}

// ---------------------------------------------------------------------------

std::vector<Check> losses_suite(const Options& o) {
  Recorder r{"losses", o.tolerance_scale, {}};
  nn::Rng rng(o.seed);
  const double ln2 = std::numbers::ln2;

  {
    const Tensor t = random_tensor({5, 4}, rng);
    r.below("kd_mae_identity", std::abs(losses::kd_mae(t, t).item()), 1e-15);
  }
  {
    const Tensor a = random_tensor({6, 5}, rng, -3.0, 3.0);
    r.below("js_self_zero", std::abs(losses::js_divergence(a, a).item()), 1e-12);
    // Logits far apart give numerically one-hot rows on different classes.
    const Tensor d1 = Tensor::from({2, 3}, {800, 0, 0, 0, 800, 0});
    const Tensor d2 = Tensor::from({2, 3}, {0, 800, 0, 0, 0, 800});
    r.below("js_disjoint_ln2", std::abs(losses::js_divergence(d1, d2).item() - ln2), 1e-9);
  }
  for (std::size_t c : {2, 5, 10}) {
    const Tensor uniform_probs = Tensor::full({7, c}, 1.0 / static_cast<double>(c));
    const double lnc = std::log(static_cast<double>(c));
    r.below("entropy_min_C" + std::to_string(c), std::abs(losses::entropy_max_loss(uniform_probs).item() + lnc), 1e-9);
    r.below("one_hot_uniform_C" + std::to_string(c), std::abs(losses::one_hot_loss(uniform_probs).item() - lnc), 1e-9);
  }

  // Gradients through networks.
  Bench bench(o.seed + 10);
  const ParamVector theta_s = bench.student.params().detached(false);
  const Tensor xs = bench.batch.samples;
  const Tensor t_logits = losses::teacher_logits(bench.teacher, xs);
  const Tensor t_probs = softmax_rows(t_logits);
  nn::Network& student = bench.student;

  r.below("grad_kd_mae", gradient_error([&](const ParamVector& p) { return losses::kd_mae(t_logits, student.forward(p, xs)); }, theta_s), 1e-4);
  r.below("grad_kl_rows", gradient_error([&](const ParamVector& p) {
    return losses::kl_rows(t_probs, softmax_rows(student.forward(p, xs)));
  }, theta_s), 1e-4);
  r.below("grad_js", gradient_error([&](const ParamVector& p) {
    return losses::js_divergence(t_logits, student.forward(p, xs));
  }, theta_s), 1e-4);
  r.below("grad_acquisition", gradient_error([&](const ParamVector& p) {
    return losses::acquisition_loss(bench.teacher, student, p, bench.batch);
  }, theta_s), 1e-4);
  r.below("grad_retention", gradient_error([&](const ParamVector& p) {
    return losses::retention_loss(bench.teacher, student, p, bench.memory);
  }, theta_s), 1e-4);

  // Prior terms and the generator objective w.r.t. generator parameters.
  nn::Network gen = nn::build_network(tiny_generator(3, 4), o.seed + 20);
  const ParamVector theta_g = gen.params().detached(false);
  const Tensor z = nn::sample_noise(10, 4, rng);
  const nn::ForwardOptions gen_mode{.training = true, .update_buffers = false};
  const nn::ForwardOptions eval{.training = false, .update_buffers = false};
  nn::Network& teacher = bench.teacher;
  const auto traced = [&](const ParamVector& p) {
    return teacher.forward_with_activations(gen.forward(p, z, gen_mode), eval);
  };
  r.below("grad_one_hot", gradient_error([&](const ParamVector& p) {
    return losses::one_hot_loss(softmax_rows(traced(p).output));
  }, theta_g), 1e-4);
  r.below("grad_activation", gradient_error([&](const ParamVector& p) {
    return losses::activation_loss(traced(p).trace);
  }, theta_g), 1e-4);
  r.below("grad_entropy", gradient_error([&](const ParamVector& p) {
    return losses::entropy_max_loss(softmax_rows(traced(p).output));
  }, theta_g), 1e-4);
  const losses::PriorWeights w{0.7, 1.3};
  r.below("grad_prior", gradient_error([&](const ParamVector& p) {
    const auto t = traced(p);
    return losses::prior_loss(softmax_rows(t.output), t.trace, w);
  }, theta_g), 1e-4);
  r.below("grad_generator", gradient_error([&](const ParamVector& p) {
    return losses::generator_loss(teacher, student, gen, p, z, w, gen_mode).total;
  }, theta_g), 1e-4);
  return r.checks;
}

std::vector<Check> hvp_suite(const Options& o) {
  Recorder r{"hvp", o.tolerance_scale, {}};
  nn::Rng rng(o.seed + 1);

  {
    const Quadratic q(9, rng);
    const auto layout = vector_layout(q.n);
    const ParamVector theta = ParamVector::from_flat(layout, uniform(q.n, rng));
    const auto v = uniform(q.n, rng);
    const auto h = meta::hvp(q.loss(), theta, ParamVector::from_flat(layout, v)).flatten();
    const auto expect = q.apply(v);
    r.below("quadratic_exact", norm(sub_vec(h, expect)), 1e-10);
    const auto zero = meta::hvp(q.loss(), theta, ParamVector::zeros(layout)).flatten();
    r.below("zero_direction", norm(zero), 1e-15);
  }

  Bench bench(o.seed + 30);
  const ParamLoss f = bench.acq();
  const ParamVector theta = bench.student.params().detached(false);
  const auto layout = theta.layout_ptr();
  const std::size_t n = theta.numel();
  const auto x0 = theta.flatten();
  const auto u = uniform(n, rng), v = uniform(n, rng);
  const ParamVector pu = ParamVector::from_flat(layout, u), pv = ParamVector::from_flat(layout, v);
  const auto hv = meta::hvp(f, theta, pv).flatten();
  const auto hu = meta::hvp(f, theta, pu).flatten();

  // Finite differences of gradients along v.
  std::vector<double> xp(x0), xm(x0);
  for (std::size_t i = 0; i < n; ++i) {
    xp[i] += kFdStep * v[i];
    xm[i] -= kFdStep * v[i];
  }
  const auto gp = meta::loss_gradient(f, ParamVector::from_flat(layout, xp)).flatten();
  const auto gm = meta::loss_gradient(f, ParamVector::from_flat(layout, xm)).flatten();
  std::vector<double> fd(n);
  for (std::size_t i = 0; i < n; ++i) fd[i] = (gp[i] - gm[i]) / (2.0 * kFdStep);
  r.below("fd_of_gradient", relative_error(hv, fd), 1e-4);

  const double a = 1.7, b = -0.6;
  std::vector<double> comb(n), expect(n);
  for (std::size_t i = 0; i < n; ++i) {
    comb[i] = a * u[i] + b * v[i];
    expect[i] = a * hu[i] + b * hv[i];
  }
  const auto hcomb = meta::hvp(f, theta, ParamVector::from_flat(layout, comb)).flatten();
  r.below("linearity", relative_error(hcomb, expect), 1e-8);

  const double uhv = dot(u, hv), vhu = dot(v, hu);
  r.below("symmetry", std::abs(uhv - vhu) / std::max({std::abs(uhv), std::abs(vhu), 1e-300}), 1e-8);
  return r.checks;
}

std::vector<Check> taylor_suite(const Options& o) {
  Recorder r{"taylor", o.tolerance_scale, {}};
  nn::Rng rng(o.seed + 2);
  const std::vector<double> ladder{1e-2, 5e-3, 2.5e-3};

  {
    Bench bench(o.seed + 40);
    const ParamVector theta = bench.student.params().detached(false);
    const auto recs = meta::taylor_residual_check(bench.acq(), bench.ret(), theta, ladder, true);
    const auto ratios = meta::taylor_ratios(recs);
    const double half = 0.7 * o.tolerance_scale;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      r.within("ratio_" + Recorder::fmt(ladder[i]) + "_over_" + Recorder::fmt(ladder[i + 1]), ratios[i], 4.0 - half,
               4.0 + half);
    }
    const double scale = meta::loss_gradient(bench.ret(), theta).norm();
    r.below("decomposition_identity_mlp", meta::decomposition_residual(bench.acq(), bench.ret(), theta, 0.9) / scale,
            1e-10);
  }
  {
    const Quadratic qa(7, rng), qr(7, rng);
    const auto layout = vector_layout(7);
    const ParamVector theta = ParamVector::from_flat(layout, uniform(7, rng));
    const double scale = norm(qr.gradient(theta.flatten()));
    double worst = 0.0;
    for (const auto& rec : meta::taylor_residual_check(qa.loss(), qr.loss(), theta, ladder, true)) {
      worst = std::max(worst, rec.residual_norm / scale);
    }
    // Zero up to rounding: the gradient of a quadratic is affine.
    r.below("quadratic_residual_zero", worst, 1e-13);
    const auto at_zero = meta::taylor_residual_check(qa.loss(), qr.loss(), theta, {0.0}, true);
    r.below("alpha_zero_residual", at_zero.front().residual_norm, 1e-300);
    r.below("decomposition_identity_quadratic", meta::decomposition_residual(qa.loss(), qr.loss(), theta, 0.9) / scale,
            1e-12);
  }
  return r.checks;
}

std::vector<Check> metagrad_suite(const Options& o) {
  Recorder r{"metagrad", o.tolerance_scale, {}};
  nn::Rng rng(o.seed + 3);

  // Closed form on quadratics: grad = g_a + g_r(x) + (I - alpha A) g_r(x').
  {
    const std::size_t n = 8;
    const Quadratic qa(n, rng), qr(n, rng);
    const auto layout = vector_layout(n);
    const auto x = uniform(n, rng);
    const ParamVector theta = ParamVector::from_flat(layout, x);
    for (bool plain : {true, false}) {
      const meta::InnerStepConfig cfg{0.9, plain, meta::Mode::meta};
      meta::MetaLoss value;
      const auto g = meta::meta_gradient(qa.loss(), qr.loss(), theta, cfg, &value).flatten();
      const auto ga = qa.gradient(x);
      std::vector<double> xi(n);
      for (std::size_t i = 0; i < n; ++i) xi[i] = x[i] - cfg.alpha * ga[i];
      const auto gri = qr.gradient(xi);
      const auto agri = qa.apply(gri);
      const auto gr = qr.gradient(x);
      std::vector<double> expect(n);
      for (std::size_t i = 0; i < n; ++i) expect[i] = ga[i] + (plain ? gr[i] : 0.0) + gri[i] - cfg.alpha * agri[i];
      const double expect_value = qa.value(x) + (plain ? qr.value(x) : 0.0) + qr.value(xi);
      const std::string tag = plain ? "_with_plain" : "_inner_only";
      r.below("quadratic_closed_form" + tag, relative_error(g, expect), 1e-10);
      r.below("quadratic_value" + tag,
              std::abs(value.total.item() - expect_value) / std::max(std::abs(expect_value), 1.0), 1e-10);
    }
  }

  Bench bench(o.seed + 50);
  const ParamLoss acq = bench.acq(), ret = bench.ret();
  const ParamVector theta = bench.student.params().detached(false);
  const auto layout = theta.layout_ptr();
  {
    const meta::InnerStepConfig cfg{0.9, true, meta::Mode::meta};
    const auto g = meta::meta_gradient(acq, ret, theta, cfg).flatten();
    const auto fd = central_difference(
        [&](std::span<const double> x) {
          return meta::meta_student_loss(acq, ret, ParamVector::from_flat(layout, x, true), cfg).total.item();
        },
        theta.flatten(), kFdStep);
    r.below("fd_tiny_mlp", relative_error(g, fd), 1e-3);
  }
  {
    const auto naive = meta::meta_gradient(acq, ret, theta, {0.9, true, meta::Mode::naive_replay}).flatten();
    const auto degenerate = meta::meta_gradient(acq, ret, theta, {0.0, false, meta::Mode::meta}).flatten();
    r.below("alpha_zero_equals_naive", relative_error(degenerate, naive), 1e-12);
    const auto doubled = meta::meta_gradient(acq, ret, theta, {0.0, true, meta::Mode::meta}).flatten();
    const auto g_ret = meta::loss_gradient(ret, theta).flatten();
    std::vector<double> expect(naive.size());
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = naive[i] + g_ret[i];
    r.below("alpha_zero_with_plain", relative_error(doubled, expect), 1e-12);
  }
  return r.checks;
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"losses", "hvp", "taylor", "metagrad"};
  return names;
}

std::vector<Check> run_suite(const std::string& suite, const Options& options) {
  if (!(options.tolerance_scale >= 0.0) || !std::isfinite(options.tolerance_scale)) {
    throw std::invalid_argument("tolerance scale must be finite and >= 0");
  }
  if (suite == "all") {
    std::vector<Check> out;
    for (const auto& name : suite_names()) {
      auto part = run_suite(name, options);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  if (suite == "losses") return losses_suite(options);
  if (suite == "hvp") return hvp_suite(options);
  if (suite == "taylor") return taylor_suite(options);
  if (suite == "metagrad") return metagrad_suite(options);
  throw std::invalid_argument("unknown suite '" + suite + "' (valid: losses, hvp, taylor, metagrad, all)");
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("relative_error: size mismatch");
  const double denom = std::max(norm(a), norm(b));
  if (denom == 0.0) return 0.0;
  return norm(sub_vec(a, b)) / denom;
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> x, double h) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

}  // namespace dfkd::verify
