#include "dfkd/optim.hpp"

#include <cmath>

namespace dfkd::optim {
namespace {

void check(const ParamVector& params, const ParamVector& grads, const char* who) {
  if (!params.same_layout(grads)) throw ShapeError(std::string(who) + ": gradient layout does not match parameters");
}

}  // namespace

void Sgd::step(ParamVector& params, const ParamVector& grads) {
  check(params, grads, "Sgd::step");
  if (buf_.empty()) buf_.assign(params.numel(), 0.0);
  if (buf_.size() != params.numel()) throw ShapeError("Sgd::step: state size mismatch");
  std::size_t o = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_values();
    const auto g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j, ++o) {
      const double d = g[j] + cfg_.weight_decay * p[j];
      buf_[o] = cfg_.momentum * buf_[o] + d;
      p[j] -= cfg_.lr * buf_[o];
    }
  }
}

void Adam::step(ParamVector& params, const ParamVector& grads) {
  check(params, grads, "Adam::step");
  if (m_.empty()) {
    m_.assign(params.numel(), 0.0);
    v_.assign(params.numel(), 0.0);
  }
  if (m_.size() != params.numel()) throw ShapeError("Adam::step: state size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t o = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_values();
    const auto g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j, ++o) {
      m_[o] = cfg_.beta1 * m_[o] + (1.0 - cfg_.beta1) * g[j];
      v_[o] = cfg_.beta2 * v_[o] + (1.0 - cfg_.beta2) * g[j] * g[j];
      p[j] -= cfg_.lr * (m_[o] / c1) / (std::sqrt(v_[o] / c2) + cfg_.eps);
    }
  }
}

}  // namespace dfkd::optim
