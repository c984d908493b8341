#include "patchguard/nn/optim.hpp"

#include <cmath>

namespace patchguard::nn {

void Adam::add(const std::string& name, Param<float>& p) {
  if (!p.trainable) return;
  slots_.push_back(Slot{name, &p, std::vector<float>(p.value.numel(), 0.0f), std::vector<float>(p.value.numel(), 0.0f)});
}

void Adam::add_all(ParamMap<float>& params, const std::string& prefix) {
  for (auto& [name, p] : params) add(prefix + name, p);
}

void Adam::step(std::size_t accumulated) {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  const float lr_t = static_cast<float>(cfg_.learning_rate * std::sqrt(bc2) / bc1);
  const float inv_n = 1.0f / static_cast<float>(accumulated == 0 ? 1 : accumulated);
  for (auto& s : slots_) {
    auto& w = s.param->value.data;
    auto& gr = s.param->grad.data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float gi = gr[i] * inv_n;
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0f - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0f - cfg_.beta2) * gi * gi;
      w[i] -= lr_t * s.m[i] / (std::sqrt(s.v[i]) + cfg_.eps);
    }
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param->zero_grad();
}

std::size_t Adam::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.param->value.numel();
  return n;
}

}  // namespace patchguard::nn
