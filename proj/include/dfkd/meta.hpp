#pragma once

// Meta student update: one differentiable inner step on the acquisition loss
// followed by the retention loss at the adapted parameters, plus the
// second-order diagnostics built on the same machinery.
//
// Losses are passed as functions of a ParamVector so that the same code runs
// on networks and on closed-form surrogates.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dfkd/losses.hpp"
#include "dfkd/param_vector.hpp"

namespace dfkd::meta {

using ParamLoss = std::function<Tensor(const ParamVector&)>;

enum class Mode { meta, naive_replay, no_replay };
std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

struct InnerStepConfig {
  double alpha = 0.9;
  bool include_plain_retention = true;
  Mode mode = Mode::meta;
  void validate() const;
};

struct AlignmentReport {
  double dot = 0.0;
  double cos = 0.0;
  double norm_acq = 0.0;
  double norm_ret = 0.0;
  long step_index = 0;
  bool zero_norm = false;
};

struct TaylorResidualRecord {
  double alpha = 0.0;
  double residual_norm = 0.0;
  bool smooth_flag = true;
};

// theta - alpha * grad_acq, recorded on the autograd tape.
ParamVector inner_step(const ParamVector& theta, const ParamVector& grad_acq, double alpha);

struct MetaLoss {
  Tensor total;
  double acq = 0.0;
  std::optional<double> ret_plain;  // L_Ret(theta)
  std::optional<double> ret_inner;  // L_Ret(theta')
};

// `ret` may be empty only in no_replay mode. `theta` must carry
// requires_grad leaves when the result is to be differentiated.
MetaLoss meta_student_loss(const ParamLoss& acq, const ParamLoss& ret, const ParamVector& theta,
                           const InnerStepConfig& cfg);

// Exact gradient of meta_student_loss w.r.t. theta (detached result).
ParamVector meta_gradient(const ParamLoss& acq, const ParamLoss& ret, const ParamVector& theta,
                          const InnerStepConfig& cfg, MetaLoss* value = nullptr);

// Gradient of a loss at theta (detached).
ParamVector loss_gradient(const ParamLoss& loss, const ParamVector& theta);

// Hessian-vector product by double backward.
ParamVector hvp(const ParamLoss& loss, const ParamVector& theta, const ParamVector& v);

AlignmentReport alignment_report(const ParamLoss& acq, const ParamLoss& ret, const ParamVector& theta,
                                 long step_index);

// Residual of the first-order Taylor model of grad L_Ret around theta along
// -alpha * grad L_Acq(theta). Alphas must be positive and descending.
std::vector<TaylorResidualRecord> taylor_residual_check(const ParamLoss& acq, const ParamLoss& ret,
                                                        const ParamVector& theta, const std::vector<double>& alphas,
                                                        bool smooth);

// Successive residual ratios r(alpha_k) / r(alpha_{k+1}).
std::vector<double> taylor_ratios(const std::vector<TaylorResidualRecord>& records);

// || d/dtheta L_Ret(theta') - [grad L_Ret(theta') - alpha * H_Acq(theta) grad L_Ret(theta')] ||,
// the chain-rule decomposition of the meta term assembled from hvp calls.
double decomposition_residual(const ParamLoss& acq, const ParamLoss& ret, const ParamVector& theta, double alpha);

// Closures over networks. The teacher's logits are computed once and held
// constant; the student is evaluated at whatever parameters are passed.
ParamLoss distillation_loss(nn::Network& teacher, nn::Network& student, const PseudoBatch& batch,
                            const nn::ForwardOptions& student_options = {});

}  // namespace dfkd::meta
