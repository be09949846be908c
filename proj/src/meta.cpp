#include "dfkd/meta.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dfkd/ops.hpp"

namespace dfkd::meta {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::meta:
      return "meta";
    case Mode::naive_replay:
      return "naive_replay";
    case Mode::no_replay:
      return "no_replay";
  }
  return "unknown";
}

Mode parse_mode(const std::string& text) {
  for (auto m : {Mode::meta, Mode::naive_replay, Mode::no_replay}) {
    if (to_string(m) == text) return m;
  }
  throw std::invalid_argument("unknown mode '" + text + "' (valid modes: meta, naive_replay, no_replay)");
}

void InnerStepConfig::validate() const {
  if (!std::isfinite(alpha) || alpha < 0.0) throw std::invalid_argument("inner step alpha must be finite and >= 0");
}

ParamVector inner_step(const ParamVector& theta, const ParamVector& grad_acq, double alpha) {
  if (!theta.same_layout(grad_acq)) throw ShapeError("inner_step: gradient layout does not match parameters");
  if (!std::isfinite(alpha) || alpha < 0.0) throw std::invalid_argument("inner_step: alpha must be >= 0");
  return theta.minus_scaled(grad_acq, alpha);
}

MetaLoss meta_student_loss(const ParamLoss& acq, const ParamLoss& ret, const ParamVector& theta,
                           const InnerStepConfig& cfg) {
  cfg.validate();
  if (cfg.mode != Mode::no_replay && !ret) {
    throw std::invalid_argument("meta_student_loss: mode " + to_string(cfg.mode) + " needs a memory batch");
  }
  EnableGradGuard enable;
  MetaLoss out;
  const Tensor l_acq = acq(theta);
  out.acq = l_acq.item();
  out.total = l_acq;
  if (cfg.mode == Mode::no_replay) return out;

  if (cfg.mode == Mode::naive_replay || cfg.include_plain_retention) {
    const Tensor l_ret = ret(theta);
    out.ret_plain = l_ret.item();
    out.total = add(out.total, l_ret);
  }
  if (cfg.mode == Mode::meta) {
    // The inner gradient stays on the tape so the outer gradient sees the
    // second-order path through theta'.
    const ParamVector g = param_grad(l_acq, theta, {.create_graph = true});
    const Tensor l_inner = ret(inner_step(theta, g, cfg.alpha));
    out.ret_inner = l_inner.item();
    out.total = add(out.total, l_inner);
  }
  return out;
}

ParamVector meta_gradient(const ParamLoss& acq, const ParamLoss& ret, const ParamVector& theta,
                          const InnerStepConfig& cfg, MetaLoss* value) {
  const ParamVector leaf = theta.detached(true);
  MetaLoss loss = meta_student_loss(acq, ret, leaf, cfg);
  ParamVector g = param_grad(loss.total, leaf);
  if (value) *value = std::move(loss);
  return g;
}

ParamVector loss_gradient(const ParamLoss& loss, const ParamVector& theta) {
  EnableGradGuard enable;
  const ParamVector leaf = theta.detached(true);
  return param_grad(loss(leaf), leaf);
}

ParamVector hvp(const ParamLoss& loss, const ParamVector& theta, const ParamVector& v) {
  if (!theta.same_layout(v)) throw ShapeError("hvp: direction layout does not match parameters");
  EnableGradGuard enable;
  const ParamVector leaf = theta.detached(true);
  const ParamVector g = param_grad(loss(leaf), leaf, {.create_graph = true});
  const Tensor gv = g.dot(v.detached(false));
  if (!gv.grad_fn()) {
    // <grad, v> does not depend on theta: the Hessian vanishes along v.
    return ParamVector::zeros(theta.layout_ptr());
  }
  return param_grad(gv, leaf);
}

AlignmentReport alignment_report(const ParamLoss& acq, const ParamLoss& ret, const ParamVector& theta,
                                 long step_index) {
  const ParamVector ga = loss_gradient(acq, theta);
  const ParamVector gr = loss_gradient(ret, theta);
  AlignmentReport r;
  r.step_index = step_index;
  r.dot = ga.dot_value(gr);
  r.norm_acq = ga.norm();
  r.norm_ret = gr.norm();
  if (r.norm_acq > 0.0 && r.norm_ret > 0.0) {
    r.cos = std::clamp(r.dot / (r.norm_acq * r.norm_ret), -1.0, 1.0);
  } else {
    r.cos = 0.0;
    r.zero_norm = true;
  }
  return r;
}

std::vector<TaylorResidualRecord> taylor_residual_check(const ParamLoss& acq, const ParamLoss& ret,
                                                        const ParamVector& theta, const std::vector<double>& alphas,
                                                        bool smooth) {
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] >= 0.0) || (i > 0 && alphas[i] >= alphas[i - 1])) {
      throw std::invalid_argument("taylor_residual_check: alphas must be non-negative and strictly descending");
    }
  }
  const ParamVector base = theta.detached(false);
  const ParamVector g_acq = loss_gradient(acq, base);
  const ParamVector g_ret = loss_gradient(ret, base);
  const ParamVector h = hvp(ret, base, g_acq);
  std::vector<TaylorResidualRecord> out;
  for (double alpha : alphas) {
    NoGradGuard no_grad;
    const ParamVector shifted = base.minus_scaled(g_acq, alpha);
    const ParamVector g_shift = loss_gradient(ret, shifted);
    // grad(theta') - [grad(theta) - alpha * H g_acq]
    const std::vector<double> a = g_shift.flatten(), b = g_ret.flatten(), c = h.flatten();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double r = (a[i] - b[i]) + alpha * c[i];
      s += r * r;
    }
    out.push_back({alpha, std::sqrt(s), smooth});
  }
  return out;
}

std::vector<double> taylor_ratios(const std::vector<TaylorResidualRecord>& records) {
  std::vector<double> out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    out.push_back(records[i].residual_norm > 0.0 ? records[i - 1].residual_norm / records[i].residual_norm
                                                 : std::numeric_limits<double>::infinity());
  }
  return out;
}

double decomposition_residual(const ParamLoss& acq, const ParamLoss& ret, const ParamVector& theta, double alpha) {
  const ParamVector base = theta.detached(false);
  // Full derivative of L_Ret(theta - alpha grad L_Acq(theta)) w.r.t. theta.
  ParamVector total;
  {
    EnableGradGuard enable;
    const ParamVector leaf = base.detached(true);
    const ParamVector g = param_grad(acq(leaf), leaf, {.create_graph = true});
    total = param_grad(ret(inner_step(leaf, g, alpha)), leaf);
  }
  const ParamVector shifted = base.minus_scaled(loss_gradient(acq, base), alpha);
  const ParamVector g_ret_shift = loss_gradient(ret, shifted);
  const ParamVector h = hvp(acq, base, g_ret_shift);
  const std::vector<double> t = total.flatten(), a = g_ret_shift.flatten(), c = h.flatten();
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double r = t[i] - (a[i] - alpha * c[i]);
    s += r * r;
  }
  return std::sqrt(s);
}

ParamLoss distillation_loss(nn::Network& teacher, nn::Network& student, const PseudoBatch& batch,
                            const nn::ForwardOptions& student_options) {
  const Tensor t = losses::teacher_logits(teacher, batch.samples);
  const Tensor x = batch.samples.detach();
  return [t, x, &student, student_options](const ParamVector& p) {
    return losses::kd_mae(t, student.forward(p, x, student_options));
  };
}

}  // namespace dfkd::meta
