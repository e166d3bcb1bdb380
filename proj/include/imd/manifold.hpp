#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "imd/householder.hpp"
#include "imd/ode_bvp.hpp"
#include "imd/ode_ivp.hpp"
#include "imd/problems.hpp"

namespace imd {

// Hypothesis constants (H1)-(H3) plus the derived contraction factor.
struct GapData {
  double K = 1.0;
  double alpha = 0.0;  // strong-stable rate, alpha < beta
  double beta = 0.0;   // slow-block rate
  double L = 0.0;      // Lipschitz constant of the nonlinearity
  double sigma = 0.0;  // rate in (alpha + K L, beta - K L)
  double kappa = 0.0;  // max{KL/(sigma-alpha), KL/(beta-sigma)}
  bool estimated = false;

  // sigma defaults to (alpha+beta)/2 when NaN is passed.
  static GapData make(double K, double alpha, double beta, double L,
                      double sigma = std::numeric_limits<double>::quiet_NaN());
  bool gap_ok() const;  // L < (beta-alpha)/(2K), kappa < 1, sigma in range
};

// Inputs of the point-on-manifold solve.
struct ManifoldQuery {
  double t = 0.0;       // evaluation time
  Vec y0;               // boundary value y(t)
  double T = 1.0;       // truncation horizon, > 0
  int p = 1;            // split dimension
  std::vector<Vec> what_boundary;  // hat-w_i(t-T); empty = zeros
  double bvp_tol = 1e-3;
  double ivp_rtol = 1e-4;
  double ivp_atol = 1e-7;
  int initial_mesh = 11;
  int max_mesh_points = 4000;
  int threads = 0;
};

struct ManifoldPoint {
  double t = 0.0;
  Vec y;  // slow coordinates at t
  Vec x;  // = Psi(t, y0)
  ReflectorStack stack;
  double bvp_residual = 0.0;
  int newton_iterations = 0;
  int reembed_events = 0;
  BvpSolution bvp;  // full solution, for warm starts and diagnostics

  Vec original_state(const ProblemDef& problem) const;  // u = Q z
};

// The coupled (y, x, hat-w_1..hat-w_p) system of the decoupled BVP/IVP.
class CoupledSystem {
 public:
  CoupledSystem(const ProblemDef& problem, int p);

  int dim() const { return n_; }
  int p() const { return p_; }
  int d() const { return problem_.d; }

  Vec pack(const Vec& y, const Vec& x, const std::vector<Vec>& what) const;
  void unpack(const Vec& Y, Vec& y, Vec& x, ReflectorStack& stack) const;

  Vec rhs(double t, const Vec& Y) const;
  // Blocks of D(t) linearized along the state carried in Y.
  BlockD blockD(double t, const Vec& Y) const;
  // Reembeds every hat-w block with |hat-w|^2 > 1; true if any.
  bool reembed_hook(double t, Vec& Y) const;
  // Slow-block right-hand side B(t)y + G(t,x,y) read off the assembled
  // blocks at the given coupled state.
  Vec slow_rhs(double t, const Vec& Y) const;

  const ProblemDef& problem() const { return problem_; }

 private:
  ProblemDef problem_;
  int p_;
  int n_;
};

struct SolverFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Algorithm: integrate the coupled IVP on [t-T, t] for the initial
// guess, then solve the truncated BVP with boundary conditions
// x(t-T)=0, y(t)=y0, hat-w_i(t-T) given.
ManifoldPoint manifold_point(const ProblemDef& problem,
                             const ManifoldQuery& q,
                             const BvpSolution* warm_start = nullptr);

struct SweepRow {
  double T = 0.0;
  bool ok = false;
  double residual = std::numeric_limits<double>::quiet_NaN();
  double bvp_residual = std::numeric_limits<double>::quiet_NaN();
  int newton_iterations = 0;
  int reembed_events = 0;
  int mesh_points = 0;
  Vec y, x;
  std::string error;
};

// One manifold_point per T, identical other settings. Failed rows are
// recorded and the sweep continues. Rows are independent; workers > 1
// runs them concurrently with deterministic row order.
std::vector<SweepRow> sweep_T(const ProblemDef& problem,
                              const ManifoldQuery& base,
                              const std::vector<double>& Ts, int workers = 1);

// First T where the residual improvement drops below 10% per unit T
// (empirical knee, used when GapData is unavailable).
std::optional<double> residual_knee(const std::vector<SweepRow>& rows);

// Invariance metric: evolve the candidate point forward by `horizon`,
// re-solve the manifold at the later time with the evolved y, and
// return |x_evolved - x_resolved|.
double pullback_defect(const ProblemDef& problem, const ManifoldPoint& point,
                       const ManifoldQuery& q, double horizon);

enum class TimeStepScheme { ExplicitEuler, AdamsBashforth2,
                            AdamsBashforth3, AdamsBashforth4 };

struct TrajectoryStep {
  double t;
  Vec y;
  Vec x;
  double residual = std::numeric_limits<double>::quiet_NaN();
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  int bvp_solves = 0;
};

// Time-stepping on the inertial form: each step evaluates the slow
// right-hand side through one manifold_point solve (multistep methods
// reuse stored evaluations after startup).
Trajectory manifold_trajectory(const ProblemDef& problem,
                               const ManifoldQuery& q, double dt, int steps,
                               TimeStepScheme scheme);

// Theorem bound |phi - phi_T|_{sigma,T} <= C |x0| e^{(alpha-sigma)(T-t0)},
// C = e^kappa kappa / (1-kappa). Throws if kappa >= 1.
double truncation_bound(const GapData& g, double x0_norm, double t0, double T);

// Smallest T with truncation_bound <= tol at sigma = (alpha+beta)/2.
double t_lower_bound(const GapData& g, double tol, double x0_norm, double t0);

// Heuristic GapData from a decoupled trajectory: alpha/beta from
// time-averaged diag(D), L from sampled difference quotients of the
// rotated nonlinearity, K = 1.
GapData estimate_gapdata(const ProblemDef& problem, const CoupledSystem& sys,
                         const IvpSolution& sample, int p);

}  // namespace imd
