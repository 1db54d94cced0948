#include "parformer/integrators.hpp"

#include <cmath>
#include <stdexcept>

namespace parformer {

std::string to_string(Scheme s) { return s == Scheme::euler ? "euler" : "rk4"; }

Scheme scheme_from_string(const std::string& s) {
  if (s == "euler") return Scheme::euler;
  if (s == "rk4") return Scheme::rk4;
  throw std::invalid_argument("unknown scheme '" + s + "' (euler|rk4)");
}

Tensor euler_step(const VectorField& f, double t, const Tensor& x, double h) {
  return add_scaled(x, f(t, x), h);
}

Tensor rk4_combination(const VectorField& f, double t, const Tensor& x, double h) {
  Tensor k1 = f(t, x);
  Tensor k2 = f(t + 0.5 * h, add_scaled(x, k1, 0.5 * h));
  Tensor k3 = f(t + 0.5 * h, add_scaled(x, k2, 0.5 * h));
  Tensor k4 = f(t + h, add_scaled(x, k3, h));
  return add(add(k1, k4), scale(add(k2, k3), 2.0));
}

Tensor rk4_step(const VectorField& f, double t, const Tensor& x, double h) {
  return add_scaled(x, rk4_combination(f, t, x, h), h / 6.0);
}

Tensor step(const VectorField& f, double t, const Tensor& x, double h, Scheme scheme) {
  return scheme == Scheme::euler ? euler_step(f, t, x, h) : rk4_step(f, t, x, h);
}

Tensor integrate(const VectorField& f, Tensor x, double t0, double t1, int steps,
                 Scheme scheme) {
  if (steps < 1) throw std::invalid_argument("integrate: steps must be >= 1");
  const double h = (t1 - t0) / static_cast<double>(steps);
  for (int i = 0; i < steps; ++i) {
    x = step(f, t0 + h * static_cast<double>(i), x, h, scheme);
  }
  return x;
}

VectorField vector_field_of_block(const BlockParams& p, const BlockConfig& cfg) {
  return [p, cfg](double, const Tensor& x) { return parallel_update(x, p, cfg); };
}

namespace {

double max_abs_gap(const Tensor& a, const Tensor& b) {
  const auto& da = a.data();
  const auto& db = b.data();
  double m = 0.0;
  for (size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

bool all_finite(const Tensor& a) {
  for (double v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

OrderResult measure_order(const VectorField& f, const Tensor& x0, Scheme scheme) {
  NoGradScope eval_only;
  OrderResult r;
  r.step_sizes = {1.0, 0.5, 0.25, 0.125};

  Tensor ref = integrate(f, x0, 0.0, 1.0, 128, scheme);
  if (!all_finite(ref)) throw std::runtime_error("measure_order: reference trajectory diverged");
  double ref_scale = 1.0;
  for (double v : ref.data()) ref_scale = std::max(ref_scale, std::abs(v));

  for (int i = 0; i < 4; ++i) {
    const int steps = 1 << i;
    Tensor xh = integrate(f, x0, 0.0, 1.0, steps, scheme);
    if (!all_finite(xh)) throw std::runtime_error("measure_order: trajectory diverged");
    r.errors[static_cast<size_t>(i)] = max_abs_gap(xh, ref);
  }

  double worst = 0.0;
  for (double e : r.errors) worst = std::max(worst, e);
  if (worst < 1e-13 * ref_scale) {
    r.exact = true;
    return r;
  }

  // Fit log2(err) against log2(h) over the three finest step sizes.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const int n = 3;
  for (int i = 1; i < 4; ++i) {
    const double x = std::log2(r.step_sizes[static_cast<size_t>(i)]);
    const double y = std::log2(std::max(r.errors[static_cast<size_t>(i)], 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  r.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return r;
}

}  // namespace parformer
