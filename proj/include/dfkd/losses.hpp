#pragma once

// Distillation and generator objectives. Tensor-valued functions are
// differentiable; probabilities are clamped to kProbFloor before any log.

#include <span>
#include <vector>

#include "dfkd/nn.hpp"
#include "dfkd/pseudo_batch.hpp"
#include "dfkd/tensor.hpp"

namespace dfkd::losses {

inline constexpr double kProbFloor = 1e-12;

// A validated probability vector: non-negative, sums to 1 within 1e-6.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> p);
  std::span<const double> values() const { return p_; }
  std::size_t size() const { return p_.size(); }

 private:
  std::vector<double> p_;
};

struct PriorWeights {
  double gamma = 1.0;
  double delta = 1.0;
  void validate() const;
};

// Batch mean of per-row L1 distance between two [N, C] logit arrays.
Tensor kd_mae(const Tensor& t_logits, const Tensor& s_logits);

double kl_divergence(const ProbVector& p, const ProbVector& q);
// Row-wise KL(p || q) of two [N, C] probability arrays, batch mean.
Tensor kl_rows(const Tensor& p, const Tensor& q);

// Softmax both, compare against the midpoint mixture; batch mean.
Tensor js_divergence(const Tensor& a_logits, const Tensor& b_logits);

// probs: [N, C] teacher probabilities.
Tensor one_hot_loss(const Tensor& probs);
Tensor activation_loss(const nn::ActivationTrace& trace);
Tensor entropy_max_loss(const Tensor& probs);
Tensor prior_loss(const Tensor& probs, const nn::ActivationTrace& trace, const PriorWeights& w);

// Teacher runs in evaluation mode and is treated as a constant.
Tensor teacher_logits(nn::Network& teacher, const Tensor& x);

Tensor acquisition_loss(nn::Network& teacher, nn::Network& student, const ParamVector& student_params,
                        const PseudoBatch& x, const nn::ForwardOptions& student_options = {});
// Same function as acquisition_loss, applied to a memory batch.
Tensor retention_loss(nn::Network& teacher, nn::Network& student, const ParamVector& student_params,
                      const PseudoBatch& x_m, const nn::ForwardOptions& student_options = {});

struct GeneratorLoss {
  Tensor total;
  double js = 0.0;
  double one_hot = 0.0;
  double activation = 0.0;
  double entropy = 0.0;
  double prior = 0.0;
  Tensor samples;  // generator output, part of the graph
};

// -JS(T(G(z)), S(G(z))) + prior. Only generator parameters receive gradient.
GeneratorLoss generator_loss(nn::Network& teacher, nn::Network& student, nn::Network& generator,
                             const ParamVector& generator_params, const Tensor& z, const PriorWeights& w,
                             const nn::ForwardOptions& generator_options = {});

}  // namespace dfkd::losses
