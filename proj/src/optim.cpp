#include "parformer/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace parformer {

Adam::Adam(std::vector<NamedParam> params, AdamConfig cfg) : cfg_(cfg) {
  slots_.reserve(params.size());
  for (NamedParam& p : params) {
    const size_t n = static_cast<size_t>(p.tensor.numel());
    slots_.push_back({std::move(p.name), p.tensor, std::vector<double>(n, 0.0),
                      std::vector<double>(n, 0.0)});
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Slot& s : slots_) {
    auto& p = s.param.data();
    const bool has_grad = s.param.has_grad();
    const bool decay = cfg_.weight_decay != 0.0 && s.param.rank() >= 2;
    for (size_t i = 0; i < p.size(); ++i) {
      const double g = has_grad ? s.param.grad()[i] : 0.0;
      if (!std::isfinite(g))
        throw std::runtime_error("non-finite gradient in parameter " + s.name);
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (decay) p[i] -= lr * cfg_.weight_decay * p[i];
    }
  }
}

void Adam::zero_grad() {
  for (Slot& s : slots_) s.param.zero_grad();
}

double lr_at(int step, int total, int warmup, double base_lr, bool cosine) {
  if (warmup > 0 && step < warmup)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (!cosine) return base_lr;
  const int span = total - warmup;
  if (span <= 0) return base_lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace parformer
