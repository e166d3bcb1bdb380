#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "imd/linalg.hpp"

namespace imd {

using OdeRhs = std::function<Vec(double, const Vec&)>;

// Accepted-step hook: may rewrite the state in place; returns true if it did.
using StepHook = std::function<bool(double, Vec&)>;

struct IvpSpec {
  OdeRhs rhs;
  double t0 = 0.0;
  double t1 = 1.0;  // may be < t0 (backward integration)
  Vec y0;
  double rtol = 1e-6;
  double atol = 1e-9;
  StepHook hook;  // optional; fires on each accepted state before the
                  // next step's stages are evaluated
};

struct HookEvent {
  double t;
  double pre_norm;
  double post_norm;
};

struct IntegrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class IvpSolution {
 public:
  std::vector<double> t;  // accepted times, strictly monotone
  std::vector<Vec> y;     // states at accepted times (post-hook)
  std::vector<HookEvent> events;
  int accepted = 0;
  int rejected = 0;

  // Quartic dense output, consistent with step endpoints exactly.
  Vec eval(double tq) const;

  double t_begin() const { return t.front(); }
  double t_end() const { return t.back(); }

 private:
  friend IvpSolution integrate(const IvpSpec&);
  // Per step j (from t[j] to t[j+1]): d x 4 polynomial coefficients,
  // y(t[j] + th*h) = y[j] + h * sum_m th^(m+1) * coef[j].col(m).
  std::vector<Mat> coef_;
};

// Adaptive Dormand-Prince 5(4) with FSAL. The FSAL cache is dropped
// whenever the hook reports a rewrite.
IvpSolution integrate(const IvpSpec& spec);

}  // namespace imd
