#pragma once

// First-order optimizers acting in place on a ParamVector's leaf tensors.

#include <cstdint>
#include <vector>

#include "dfkd/param_vector.hpp"

namespace dfkd::optim {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// Heavy-ball SGD: buf = momentum * buf + (g + wd * p); p -= lr * buf.
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}
  void step(ParamVector& params, const ParamVector& grads);
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  const SgdConfig& config() const { return cfg_; }

  std::vector<double> state() const { return buf_; }
  void load_state(std::vector<double> buf) { buf_ = std::move(buf); }

 private:
  SgdConfig cfg_;
  std::vector<double> buf_;
};

struct AdamConfig {
  double lr = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  void step(ParamVector& params, const ParamVector& grads);
  double lr() const { return cfg_.lr; }
  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }

  struct State {
    std::uint64_t t = 0;
    std::vector<double> m, v;
  };
  State state() const { return {t_, m_, v_}; }
  void load_state(State s) {
    t_ = s.t;
    m_ = std::move(s.m);
    v_ = std::move(s.v);
  }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace dfkd::optim
