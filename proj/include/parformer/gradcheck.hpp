#pragma once

#include <functional>
#include <string>
#include <vector>

#include "parformer/network.hpp"

namespace parformer {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  std::string worst_param;
  bool pass = false;
};

/// Compares tape gradients against central finite differences (step fd_h),
/// entry by entry, over every listed tensor. The error metric is
/// |ad - fd| / (|ad| + |fd| + floor) with floor = 3e-5 * max(1, |loss|); the
/// loss-scaled floor keeps FD cancellation noise on structurally-zero
/// gradients from registering as relative error.
GradCheckReport gradcheck(const std::string& name, const std::function<Tensor()>& loss_fn,
                          const std::vector<NamedParam>& params, double tol = 1e-4,
                          double fd_h = 1e-5);

struct SuiteReport {
  std::vector<GradCheckReport> reports;
  bool pass = true;

  void add(GradCheckReport r);
  void merge(const SuiteReport& other);
  std::string summary() const;
};

/// Every tensor op, random small instances, `seeds` seeds each.
SuiteReport gradcheck_ops(int seeds);
/// Sequential and parallel blocks across norm variants (d=8, H=2, L=4).
SuiteReport gradcheck_blocks(int seeds);
/// End-to-end tiny classify and lm networks through their losses.
SuiteReport gradcheck_network(int seeds);
/// A 2-step RK4 unroll of a transformer vector field.
SuiteReport gradcheck_rk4(int seeds);
/// scope: ops | block | network | rk4 | all.
SuiteReport run_gradcheck(const std::string& scope, int seeds);

}  // namespace parformer
