#pragma once

#include <array>
#include <functional>
#include <string>

#include "parformer/blocks.hpp"
#include "parformer/tensor.hpp"

namespace parformer {

enum class Scheme { euler, rk4 };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

/// Right-hand side of dx/dt = f(t, x). Must not mutate x.
using VectorField = std::function<Tensor(double, const Tensor&)>;

/// x + h * f(t, x). With h=1 this is one residual layer.
Tensor euler_step(const VectorField& f, double t, const Tensor& x, double h);

/// Classical fourth-order Runge-Kutta: four evaluations of the same f per
/// step, combined with weights 1/6, 2/6, 2/6, 1/6.
Tensor rk4_step(const VectorField& f, double t, const Tensor& x, double h);

/// The weighted stage sum k1 + 2*k2 + 2*k3 + k4; rk4_step adds h/6 times
/// this to x. Exposed so a caller can rescale the whole update (stochastic
/// depth) without re-deriving the stages.
Tensor rk4_combination(const VectorField& f, double t, const Tensor& x, double h);

Tensor step(const VectorField& f, double t, const Tensor& x, double h, Scheme scheme);

/// Integrates from t0 to t1 in `steps` equal steps (steps >= 1). Records on
/// the active tape, so the unrolled trajectory is differentiable.
Tensor integrate(const VectorField& f, Tensor x, double t0, double t1, int steps,
                 Scheme scheme);

/// The layer as an autonomous vector field: f(t, x) = F(x) + G(x) with the
/// configured norm folded in (post-norm contributes norm(x+F+G) - x).
VectorField vector_field_of_block(const BlockParams& p, const BlockConfig& cfg);

struct OrderResult {
  /// All step sizes already agree with the reference to near machine
  /// precision; the slope is meaningless and left at zero.
  bool exact = false;
  /// Least-squares slope of log2(error) vs log2(h) over the three finest
  /// step sizes. h=1 sits outside the asymptotic regime and is excluded.
  double slope = 0.0;
  std::array<double, 4> step_sizes{};  // 1, 1/2, 1/4, 1/8
  std::array<double, 4> errors{};      // max-abs gap to the fine reference
};

/// Integrates over [0,1] at h in {1, 1/2, 1/4, 1/8} and compares each result
/// against the same scheme at h=1/128. Throws std::runtime_error if any
/// trajectory goes non-finite.
OrderResult measure_order(const VectorField& f, const Tensor& x0, Scheme scheme);

}  // namespace parformer
