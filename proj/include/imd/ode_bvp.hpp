#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "imd/linalg.hpp"
#include "imd/ode_ivp.hpp"

namespace imd {

struct BvpConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BvpRefinementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BvpConditioningError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BvpSpec {
  OdeRhs odefun;
  // Boundary residual, d components: bcfun(y(a), y(b)).
  std::function<Vec(const Vec&, const Vec&)> bcfun;
  std::vector<double> mesh;  // initial mesh, monotone increasing
  std::vector<Vec> guess;    // states on the initial mesh
  double tol = 1e-3;
  // Optional post-convergence rewrite, applied node by node after the
  // Newton iteration converges; returns true if it rewrote the state.
  StepHook hook;
  int max_mesh_points = 4000;
  int max_newton_iter = 40;
  int max_rewrite_rounds = 10;
  int threads = 0;  // 0 = library default; 1 = serial reference path
};

struct BvpSolution {
  std::vector<double> mesh;
  std::vector<Vec> y;      // states at mesh nodes
  std::vector<Vec> f;      // odefun at mesh nodes
  std::vector<Vec> ymid;   // collocation midpoint states
  std::vector<Vec> fmid;   // odefun at midpoints
  std::vector<double> residual;  // scaled defect per subinterval
  int newton_iterations = 0;
  int rewrite_rounds = 0;
  // Set when the rewrite loop hit its cap; the converged pre-rewrite
  // states were kept in that case.
  bool hook_cap_reached = false;
  std::vector<HookEvent> events;

  double max_residual() const;
  // C^1 piecewise-quartic interpolant.
  Vec eval(double t) const;
  Vec eval_deriv(double t) const;
};

BvpSolution bvp_solve(const BvpSpec& spec);

// Scaled max-norm of the interpolant's ODE defect on each subinterval.
// Recomputed independently of the residuals stored in the solution.
std::vector<double> residual_estimate(const BvpSolution& sol,
                                      const BvpSpec& spec);

namespace detail {
// FD Jacobians of odefun at all nodes and midpoints. The parallel path
// must produce bit-identical output to the serial one (points are
// independent); kept separate so tests and the benchmark can compare.
void point_jacobians(const OdeRhs& f, const std::vector<double>& t,
                     const std::vector<Vec>& y, const std::vector<Vec>& fy,
                     std::vector<Mat>& J, bool parallel);
}  // namespace detail

}  // namespace imd
