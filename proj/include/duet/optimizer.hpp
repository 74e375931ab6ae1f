#pragma once

#include <cmath>
#include <vector>

#include "duet/params.hpp"

namespace duet {

/// Adam with decoupled weight decay, linear warm-up, and cosine decay of
/// the learning rate to zero at total_steps.
struct OptimizerConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int warmup_steps = 1000;
  int total_steps = 20000;

  void validate() const {
    require<BadArgument>(std::isfinite(lr) && lr > 0.0, "lr must be positive");
    require<BadArgument>(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                         "betas must lie in [0, 1)");
    require<BadArgument>(eps > 0.0, "eps must be positive");
    require<BadArgument>(weight_decay >= 0.0, "weight decay must be nonnegative");
    require<BadArgument>(warmup_steps >= 0 && total_steps >= 1,
                         "step counts must be positive");
  }
};

/// Learning-rate multiplier for 0-based step: linear warm-up to 1, then
/// cosine decay to 0 at total_steps.
inline double lr_multiplier(const OptimizerConfig& cfg, long step) {
  cfg.validate();
  require<BadArgument>(step >= 0, "step must be nonnegative");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return static_cast<double>(step + 1) / cfg.warmup_steps;
  const long span = std::max<long>(1, cfg.total_steps - cfg.warmup_steps);
  double progress = static_cast<double>(step - cfg.warmup_steps) / span;
  progress = std::min(1.0, std::max(0.0, progress));
  return 0.5 * (1.0 + std::cos(M_PI * progress));
}

class AdamW {
 public:
  AdamW(ParamStore& store, const OptimizerConfig& cfg)
      : store_(&store), cfg_(cfg) {
    cfg.validate();
    m_.reserve(store.names.size());
    v_.reserve(store.names.size());
    for (const auto& name : store.names) {
      const ad::Var& p = store.at(name);
      m_.push_back(Mat::Zero(p.rows(), p.cols()));
      v_.push_back(Mat::Zero(p.rows(), p.cols()));
    }
  }

  long step_count() const { return step_; }
  double current_lr() const { return cfg_.lr * lr_multiplier(cfg_, step_); }

  /// Applies one update from the gradients currently held in the store;
  /// parameters with no recorded gradient are decayed only.
  void step() {
    const double lr = current_lr();
    const double t = static_cast<double>(step_ + 1);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (size_t i = 0; i < store_->names.size(); ++i) {
      ad::Var& p = store_->at(store_->names[i]);
      Mat g = p.grad().size() ? p.grad() : Mat::Zero(p.rows(), p.cols());
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] +
              (1.0 - cfg_.beta2) * g.array().square().matrix();
      Mat mhat = m_[i] / bc1;
      Mat vhat = v_[i] / bc2;
      Mat update = (mhat.array() / (vhat.array().sqrt() + cfg_.eps)).matrix();
      p.mutable_value() -= lr * (update + cfg_.weight_decay * p.value());
    }
    ++step_;
  }

 private:
  ParamStore* store_;
  OptimizerConfig cfg_;
  std::vector<Mat> m_, v_;
  long step_ = 0;
};

}  // namespace duet
