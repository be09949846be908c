#include "dfkd/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "dfkd/ops.hpp"

namespace dfkd::losses {
namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected equal [N,C] shapes, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  if (a.dim(0) == 0) throw ShapeError(std::string(what) + ": empty batch");
}

Tensor safe_log(const Tensor& p) { return log(clamp_min(p, kProbFloor)); }

double row_count(const Tensor& t) { return static_cast<double>(t.dim(0)); }

}  // namespace

ProbVector::ProbVector(std::vector<double> p) : p_(std::move(p)) {
  if (p_.empty()) throw std::invalid_argument("ProbVector: empty");
  double s = 0.0;
  for (double v : p_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("ProbVector: negative or non-finite entry");
    s += v;
  }
  if (std::fabs(s - 1.0) > 1e-6) throw std::invalid_argument("ProbVector: entries sum to " + std::to_string(s));
}

void PriorWeights::validate() const {
  if (!(gamma >= 0.0) || !(delta >= 0.0) || !std::isfinite(gamma) || !std::isfinite(delta)) {
    throw std::invalid_argument("PriorWeights: gamma and delta must be finite and >= 0");
  }
}

Tensor kd_mae(const Tensor& t_logits, const Tensor& s_logits) {
  require_same(t_logits, s_logits, "kd_mae");
  return scale(sum(abs(sub(t_logits, s_logits))), 1.0 / row_count(t_logits));
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p.values()[i];
    if (pi == 0.0) continue;
    s += pi * (std::log(std::max(pi, kProbFloor)) - std::log(std::max(q.values()[i], kProbFloor)));
  }
  return s;
}

Tensor kl_rows(const Tensor& p, const Tensor& q) {
  require_same(p, q, "kl_rows");
  return scale(sum(mul(p, sub(safe_log(p), safe_log(q)))), 1.0 / row_count(p));
}

Tensor js_divergence(const Tensor& a_logits, const Tensor& b_logits) {
  require_same(a_logits, b_logits, "js_divergence");
  const Tensor pa = softmax_rows(a_logits);
  const Tensor pb = softmax_rows(b_logits);
  const Tensor m = scale(add(pa, pb), 0.5);
  return scale(add(kl_rows(pa, m), kl_rows(pb, m)), 0.5);
}

Tensor one_hot_loss(const Tensor& probs) {
  if (probs.rank() != 2 || probs.dim(0) == 0) throw ShapeError("one_hot_loss: expected nonempty [N,C]");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  std::vector<double> mask(n * c, 0.0);
  const auto p = probs.values();
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (p[r * c + j] > p[r * c + best]) best = j;
    }
    mask[r * c + best] = 1.0;
  }
  return scale(sum(mul(Tensor::from({n, c}, std::move(mask)), safe_log(probs))), -1.0 / static_cast<double>(n));
}

Tensor activation_loss(const nn::ActivationTrace& trace) {
  if (trace.empty()) throw std::invalid_argument("activation_loss: empty activation trace");
  const std::size_t n = trace.front().dim(0);
  Tensor total = Tensor::scalar(0.0);
  for (const auto& a : trace) {
    if (a.rank() == 0 || a.dim(0) != n) throw ShapeError("activation_loss: trace entries disagree on batch size");
    total = add(total, sum(abs(a)));
  }
  return scale(total, -1.0 / static_cast<double>(n * trace.size()));
}

Tensor entropy_max_loss(const Tensor& probs) {
  if (probs.rank() != 2 || probs.dim(0) == 0) throw ShapeError("entropy_max_loss: expected nonempty [N,C]");
  const Tensor mean_p = scale(sum_to(probs, {1, probs.dim(1)}), 1.0 / row_count(probs));
  return sum(mul(mean_p, safe_log(mean_p)));
}

Tensor prior_loss(const Tensor& probs, const nn::ActivationTrace& trace, const PriorWeights& w) {
  w.validate();
  Tensor total = one_hot_loss(probs);
  if (w.gamma != 0.0) total = add(total, scale(activation_loss(trace), w.gamma));
  if (w.delta != 0.0) total = add(total, scale(entropy_max_loss(probs), w.delta));
  return total;
}

Tensor teacher_logits(nn::Network& teacher, const Tensor& x) {
  NoGradGuard no_grad;
  return teacher.forward(x, {.training = false, .update_buffers = false});
}

Tensor acquisition_loss(nn::Network& teacher, nn::Network& student, const ParamVector& student_params,
                        const PseudoBatch& x, const nn::ForwardOptions& student_options) {
  const Tensor t = teacher_logits(teacher, x.samples);
  return kd_mae(t, student.forward(student_params, x.samples, student_options));
}

Tensor retention_loss(nn::Network& teacher, nn::Network& student, const ParamVector& student_params,
                      const PseudoBatch& x_m, const nn::ForwardOptions& student_options) {
  return acquisition_loss(teacher, student, student_params, x_m, student_options);
}

GeneratorLoss generator_loss(nn::Network& teacher, nn::Network& student, nn::Network& generator,
                             const ParamVector& generator_params, const Tensor& z, const PriorWeights& w,
                             const nn::ForwardOptions& generator_options) {
  w.validate();
  GeneratorLoss out;
  out.samples = generator.forward(generator_params, z, generator_options);
  auto traced = teacher.forward_with_activations(out.samples, {.training = false, .update_buffers = false});
  const Tensor s_logits = student.forward(out.samples, {.training = true, .update_buffers = false});
  const Tensor probs = softmax_rows(traced.output);

  const Tensor js = js_divergence(traced.output, s_logits);
  const Tensor oh = one_hot_loss(probs);
  const Tensor act = activation_loss(traced.trace);
  const Tensor ent = entropy_max_loss(probs);
  const Tensor prior = add(add(oh, scale(act, w.gamma)), scale(ent, w.delta));
  out.total = sub(prior, js);
  out.js = js.item();
  out.one_hot = oh.item();
  out.activation = act.item();
  out.entropy = ent.item();
  out.prior = prior.item();
  return out;
}

}  // namespace dfkd::losses
