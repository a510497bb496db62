#pragma once

#include <cstdint>
#include <vector>

#include "last/parameters.hpp"

namespace last {

struct AdamConfig {
  double lr = 5e-4;
  double warmup_floor = 1e-5;
  double warmup_fraction = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  void validate() const;
};

/// Linear warm-up from `floor` to `peak` over the first `fraction` of the
/// steps (at least one step), then constant at `peak`.
class WarmupSchedule {
 public:
  WarmupSchedule(double floor, double peak, std::int64_t total_steps, double fraction);

  double lr(std::int64_t step) const;
  std::int64_t warmup_steps() const { return warmup_; }

 private:
  double floor_, peak_;
  std::int64_t warmup_;
};

/// Adam with L2 weight decay added to the gradient. Only tensors in `groups`
/// are ever written.
class Adam {
 public:
  Adam(const ParameterStore<float>& params, std::vector<Group> groups, AdamConfig config);

  void step(ParameterStore<float>& params, const ParameterStore<float>& grads, double lr);
  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<Group> groups_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace last
