#pragma once

// First-order optimizers over flat parameter buffers.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "volmin/error.hpp"

namespace volmin {

enum class OptimizerKind { sgd, adam };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 1e-2;
  double momentum = 0.0;      // sgd
  double weight_decay = 0.0;  // L2 added to the gradient
  double beta1 = 0.9;         // adam
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerSpec sgd(double lr, double momentum = 0.0, double weight_decay = 0.0) {
    OptimizerSpec s;
    s.kind = OptimizerKind::sgd;
    s.lr = lr;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    return s;
  }

  static OptimizerSpec adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    OptimizerSpec s;
    s.kind = OptimizerKind::adam;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    return s;
  }

  friend bool operator==(const OptimizerSpec&, const OptimizerSpec&) = default;
};

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ValueError("unknown optimizer '" + s + "'");
}

class Optimizer {
 public:
  Optimizer(OptimizerSpec spec, std::size_t n) : spec_(spec), m_(n, 0.0), v_(n, 0.0) {
    if (!(spec_.lr > 0.0)) throw ValueError("optimizer learning rate must be positive");
    if (spec_.weight_decay < 0.0) throw ValueError("weight decay must be non-negative");
  }

  const OptimizerSpec& spec() const noexcept { return spec_; }
  std::size_t steps() const noexcept { return t_; }

  // One update. `lr_scale` multiplies the base rate (schedules);
  // `apply_decay = false` suppresses weight decay for this buffer.
  void step(std::span<double> params, std::span<const double> grad, double lr_scale = 1.0,
            bool apply_decay = true) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw ShapeError("optimizer: buffer length mismatch");
    ++t_;
    const double lr = spec_.lr * lr_scale;
    const double wd = apply_decay ? spec_.weight_decay : 0.0;
    if (spec_.kind == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        const double g = grad[k] + wd * params[k];
        m_[k] = spec_.momentum * m_[k] + g;
        params[k] -= lr * m_[k];
      }
      return;
    }
    const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double g = grad[k] + wd * params[k];
      m_[k] = spec_.beta1 * m_[k] + (1.0 - spec_.beta1) * g;
      v_[k] = spec_.beta2 * v_[k] + (1.0 - spec_.beta2) * g * g;
      const double mhat = m_[k] / bc1;
      const double vhat = v_[k] / bc2;
      params[k] -= lr * mhat / (std::sqrt(vhat) + spec_.eps);
    }
  }

 private:
  OptimizerSpec spec_;
  std::vector<double> m_;  // sgd velocity / adam first moment
  std::vector<double> v_;  // adam second moment
  std::size_t t_ = 0;
};

}  // namespace volmin
