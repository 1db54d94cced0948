#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parformer/network.hpp"

namespace parformer {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled weight decay; applied only to rank >= 2 tensors (matrices and
  /// embeddings), never to biases or norm parameters.
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay and bias-corrected moments. Reads each
/// parameter's accumulated .grad; missing grads count as zero.
class Adam {
 public:
  Adam(std::vector<NamedParam> params, AdamConfig cfg);

  /// One update at the given learning rate. Throws std::runtime_error naming
  /// the parameter if any gradient entry is non-finite.
  void step(double lr);
  void zero_grad();
  int64_t steps_taken() const { return t_; }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

/// Linear warmup from lr/warmup to lr over `warmup` steps, then (optionally)
/// cosine decay to zero at `total`. `step` is 0-based.
double lr_at(int step, int total, int warmup, double base_lr, bool cosine);

}  // namespace parformer
