#include "last/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace last {

void AdamConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("optimizer lr must be positive");
  if (!(warmup_floor > 0) || warmup_floor > lr) throw std::invalid_argument("warm-up floor must lie in (0, lr]");
  if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw std::invalid_argument("warm-up fraction must lie in [0, 1]");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw std::invalid_argument("Adam eps must be positive");
  if (weight_decay < 0) throw std::invalid_argument("weight decay must be non-negative");
}

WarmupSchedule::WarmupSchedule(double floor, double peak, std::int64_t total_steps, double fraction)
    : floor_(floor), peak_(peak) {
  warmup_ = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(fraction * static_cast<double>(total_steps))));
}

double WarmupSchedule::lr(std::int64_t step) const {
  if (step >= warmup_) return peak_;
  return floor_ + (peak_ - floor_) * static_cast<double>(step) / static_cast<double>(warmup_);
}

Adam::Adam(const ParameterStore<float>& params, std::vector<Group> groups, AdamConfig config)
    : groups_(std::move(groups)), config_(config) {
  config_.validate();
  for (const auto& t : params) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void Adam::step(ParameterStore<float>& params, const ParameterStore<float>& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw std::invalid_argument("Adam: parameter layout changed");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (std::find(groups_.begin(), groups_.end(), p.group) == groups_.end()) continue;
    const auto& g = grads[i].data;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      const double gk = static_cast<double>(g[k]) + config_.weight_decay * static_cast<double>(p.data[k]);
      m[k] = b1 * m[k] + (1 - b1) * gk;
      v[k] = b2 * v[k] + (1 - b2) * gk * gk;
      const double update = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
      p.data[k] = static_cast<float>(static_cast<double>(p.data[k]) - update);
    }
  }
}

}  // namespace last
