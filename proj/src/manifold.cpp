#include "imd/manifold.hpp"

#include <algorithm>
#include <cmath>

#ifdef IMD_HAVE_OPENMP
#include <omp.h>
#endif

namespace imd {

GapData GapData::make(double K, double alpha, double beta, double L,
                      double sigma) {
  GapData g;
  g.K = K;
  g.alpha = alpha;
  g.beta = beta;
  g.L = L;
  g.sigma = std::isnan(sigma) ? 0.5 * (alpha + beta) : sigma;
  const double kl = K * L;
  if (kl == 0.0)
    g.kappa = 0.0;
  else
    g.kappa = std::max(kl / (g.sigma - alpha), kl / (beta - g.sigma));
  return g;
}

bool GapData::gap_ok() const {
  return alpha < beta && L < (beta - alpha) / (2.0 * K) && kappa >= 0.0 &&
         kappa < 1.0 && sigma > alpha + K * L && sigma < beta - K * L;
}

CoupledSystem::CoupledSystem(const ProblemDef& problem, int p)
    : problem_(problem), p_(p) {
  if (p < 1 || p >= problem.d)
    throw std::invalid_argument("CoupledSystem: need 1 <= p < d");
  n_ = problem.d;
  for (int i = 1; i <= p; ++i) n_ += problem.d - i;
}

Vec CoupledSystem::pack(const Vec& y, const Vec& x,
                        const std::vector<Vec>& what) const {
  Vec Y(n_);
  Y.head(p_) = y;
  Y.segment(p_, problem_.d - p_) = x;
  int off = problem_.d;
  for (int i = 0; i < p_; ++i) {
    const int len = problem_.d - i - 1;
    if (i < static_cast<int>(what.size()) && what[i].size() == len)
      Y.segment(off, len) = what[i];
    else if (i < static_cast<int>(what.size()) && what[i].size() != 0)
      throw std::invalid_argument("CoupledSystem::pack: bad what length");
    else
      Y.segment(off, len).setZero();
    off += len;
  }
  return Y;
}

void CoupledSystem::unpack(const Vec& Y, Vec& y, Vec& x,
                           ReflectorStack& stack) const {
  y = Y.head(p_);
  x = Y.segment(p_, problem_.d - p_);
  stack.d = problem_.d;
  stack.what.resize(p_);
  stack.sigma.assign(p_, +1);
  int off = problem_.d;
  for (int i = 0; i < p_; ++i) {
    const int len = problem_.d - i - 1;
    stack.what[i] = Y.segment(off, len);
    off += len;
  }
}

Vec CoupledSystem::rhs(double t, const Vec& Y) const {
  Vec y, x;
  ReflectorStack stack;
  unpack(Y, y, x, stack);
  DecoupledState z{y, x, t};
  Vec u = from_rotated(stack, z);
  // Linearize along the current solution, so the frame tracks the
  // variational equation of the trajectory itself.
  const Mat C = problem_.jacobian(u, t);
  std::vector<Vec> dwhat;
  BlockD D = assemble_D(stack, C, &dwhat);

  Vec N = problem_.rhs(t, u) - C * u;
  Vec Nrot = rotate_forward(stack, N);

  Vec out(n_);
  out.head(p_) = D.D11 * y + D.D12 * x + Nrot.head(p_);
  out.segment(p_, problem_.d - p_) =
      D.D22 * x + Nrot.tail(problem_.d - p_);
  int off = problem_.d;
  for (int i = 0; i < p_; ++i) {
    out.segment(off, dwhat[i].size()) = dwhat[i];
    off += static_cast<int>(dwhat[i].size());
  }
  return out;
}

BlockD CoupledSystem::blockD(double t, const Vec& Y) const {
  Vec y, x;
  ReflectorStack stack;
  unpack(Y, y, x, stack);
  Vec u = from_rotated(stack, DecoupledState{y, x, t});
  return assemble_D(stack, problem_.jacobian(u, t));
}

bool CoupledSystem::reembed_hook(double /*t*/, Vec& Y) const {
  bool any = false;
  int off = problem_.d;
  for (int i = 0; i < p_; ++i) {
    const int len = problem_.d - i - 1;
    auto w = Y.segment(off, len);
    const double n2 = w.squaredNorm();
    if (n2 > 1.0) {
      w = -w / n2;
      any = true;
    }
    off += len;
  }
  return any;
}

Vec CoupledSystem::slow_rhs(double t, const Vec& Y) const {
  return rhs(t, Y).head(p_);
}

Vec ManifoldPoint::original_state(const ProblemDef& /*problem*/) const {
  DecoupledState z{y, x, t};
  return from_rotated(stack, z);
}

ManifoldPoint manifold_point(const ProblemDef& problem,
                             const ManifoldQuery& q,
                             const BvpSolution* warm_start) {
  if (q.T <= 0.0) throw std::invalid_argument("manifold_point: T must be > 0");
  CoupledSystem sys(problem, q.p);
  if (q.y0.size() != q.p)
    throw std::invalid_argument("manifold_point: y0 length != p");
  std::vector<Vec> wb = q.what_boundary;
  wb.resize(q.p);
  for (int i = 0; i < q.p; ++i) {
    const int len = problem.d - i - 1;
    if (wb[i].size() == 0) wb[i] = Vec::Zero(len);
    if (wb[i].size() != len)
      throw std::invalid_argument("manifold_point: bad what_boundary length");
  }

  const double ta = q.t - q.T;
  const double tb = q.t;
  const Vec x0 = Vec::Zero(problem.d - q.p);
  const Vec Yleft = sys.pack(q.y0, x0, wb);
  const Vec wb_flat = Yleft.tail(sys.dim() - problem.d);

  // Mesh and initial guess.
  const int nm = std::max(q.initial_mesh, 3);
  std::vector<double> mesh(nm);
  for (int i = 0; i < nm; ++i)
    mesh[i] = ta + (tb - ta) * static_cast<double>(i) / (nm - 1);
  mesh.back() = tb;

  std::vector<Vec> guess(nm, Yleft);
  if (warm_start != nullptr && !warm_start->mesh.empty()) {
    const double shift = tb - warm_start->mesh.back();
    for (int i = 0; i < nm; ++i) {
      double tq = std::clamp(mesh[i] - shift, warm_start->mesh.front(),
                             warm_start->mesh.back());
      guess[i] = warm_start->eval(tq);
    }
    // keep the boundary data exact at the ends
    guess.front().segment(q.p, problem.d - q.p) = x0;
    guess.front().tail(wb_flat.size()) = wb_flat;
    guess.back().head(q.p) = q.y0;
  } else {
    // Algorithm step 1: coupled IVP from the left boundary data.
    try {
      IvpSpec ivp;
      ivp.rhs = [&sys](double t, const Vec& Y) { return sys.rhs(t, Y); };
      ivp.t0 = ta;
      ivp.t1 = tb;
      ivp.y0 = Yleft;
      ivp.rtol = q.ivp_rtol;
      ivp.atol = q.ivp_atol;
      ivp.hook = [&sys](double t, Vec& Y) { return sys.reembed_hook(t, Y); };
      IvpSolution seed = integrate(ivp);
      for (int i = 0; i < nm; ++i) guess[i] = seed.eval(mesh[i]);
    } catch (const IntegrationError&) {
      // fall back to the constant guess
    }
  }

  BvpSpec bvp;
  bvp.odefun = [&sys](double t, const Vec& Y) { return sys.rhs(t, Y); };
  const int p = q.p;
  const int dx = problem.d - p;
  bvp.bcfun = [&, p, dx](const Vec& Ya, const Vec& Yb) {
    Vec r(sys.dim());
    r.head(dx) = Ya.segment(p, dx);                          // x(t-T) = 0
    r.segment(dx, p) = Yb.head(p) - q.y0;                    // y(t) = y0
    r.tail(wb_flat.size()) = Ya.tail(wb_flat.size()) - wb_flat;
    return r;
  };
  bvp.mesh = mesh;
  bvp.guess = guess;
  bvp.tol = q.bvp_tol;
  bvp.hook = [&sys](double t, Vec& Y) { return sys.reembed_hook(t, Y); };
  bvp.max_mesh_points = q.max_mesh_points;
  bvp.threads = q.threads;

  BvpSolution sol;
  try {
    sol = bvp_solve(bvp);
  } catch (const std::runtime_error& e) {
    throw SolverFailure(std::string("manifold_point: ") + e.what());
  }

  ManifoldPoint pt;
  pt.t = tb;
  sys.unpack(sol.y.back(), pt.y, pt.x, pt.stack);
  pt.bvp_residual = sol.max_residual();
  pt.newton_iterations = sol.newton_iterations;
  pt.reembed_events = static_cast<int>(sol.events.size());
  pt.bvp = std::move(sol);
  return pt;
}

std::vector<SweepRow> sweep_T(const ProblemDef& problem,
                              const ManifoldQuery& base,
                              const std::vector<double>& Ts, int workers) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(Ts.size());
  std::vector<SweepRow> rows(n);
  auto run_row = [&](std::ptrdiff_t i) {
    SweepRow row;
    row.T = Ts[i];
    ManifoldQuery q = base;
    q.T = Ts[i];
    if (workers > 1) q.threads = 1;
    try {
      ManifoldPoint pt = manifold_point(problem, q);
      row.ok = true;
      row.bvp_residual = pt.bvp_residual;
      row.newton_iterations = pt.newton_iterations;
      row.reembed_events = pt.reembed_events;
      row.mesh_points = static_cast<int>(pt.bvp.mesh.size());
      row.y = pt.y;
      row.x = pt.x;
      if (problem.residual_metric) {
        Vec u = pt.original_state(problem);
        row.residual = std::abs(problem.residual_metric(u, pt.t));
      }
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    rows[i] = std::move(row);
  };
#ifdef IMD_HAVE_OPENMP
  if (workers > 1) {
#pragma omp parallel for schedule(dynamic) num_threads(workers)
    for (std::ptrdiff_t i = 0; i < n; ++i) run_row(i);
    return rows;
  }
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) run_row(i);
  return rows;
}

std::optional<double> residual_knee(const std::vector<SweepRow>& rows) {
  for (std::size_t k = 1; k < rows.size(); ++k) {
    if (!rows[k - 1].ok || !rows[k].ok) continue;
    const double r0 = rows[k - 1].residual;
    const double r1 = rows[k].residual;
    const double dT = rows[k].T - rows[k - 1].T;
    if (!(dT > 0.0) || !(r0 > 0.0)) continue;
    const double rate = (r0 - r1) / r0 / dT;
    if (rate < 0.1) return rows[k].T;
  }
  return std::nullopt;
}

double pullback_defect(const ProblemDef& problem, const ManifoldPoint& point,
                       const ManifoldQuery& q, double horizon) {
  if (horizon <= 0.0)
    throw std::invalid_argument("pullback_defect: horizon must be > 0");
  CoupledSystem sys(problem, q.p);
  Vec Y0 = sys.pack(point.y, point.x, point.stack.what);

  IvpSpec ivp;
  ivp.rhs = [&sys](double t, const Vec& Y) { return sys.rhs(t, Y); };
  ivp.t0 = point.t;
  ivp.t1 = point.t + horizon;
  ivp.y0 = Y0;
  ivp.rtol = q.ivp_rtol;
  ivp.atol = q.ivp_atol;
  ivp.hook = [&sys](double t, Vec& Y) { return sys.reembed_hook(t, Y); };
  IvpSolution fwd = integrate(ivp);

  Vec ye, xe;
  ReflectorStack se;
  sys.unpack(fwd.y.back(), ye, xe, se);

  ManifoldQuery q2 = q;
  q2.t = point.t + horizon;
  q2.y0 = ye;
  ManifoldPoint resolved = manifold_point(problem, q2);
  return (xe - resolved.x).norm();
}

namespace {
// Adams-Bashforth weights, newest history value first.
const std::vector<double>& ab_weights(int k) {
  static const std::vector<double> w1{1.0};
  static const std::vector<double> w2{1.5, -0.5};
  static const std::vector<double> w3{23.0 / 12, -16.0 / 12, 5.0 / 12};
  static const std::vector<double> w4{55.0 / 24, -59.0 / 24, 37.0 / 24,
                                      -9.0 / 24};
  switch (k) {
    case 1: return w1;
    case 2: return w2;
    case 3: return w3;
    default: return w4;
  }
}
}  // namespace

Trajectory manifold_trajectory(const ProblemDef& problem,
                               const ManifoldQuery& q, double dt, int steps,
                               TimeStepScheme scheme) {
  int k = 1;
  switch (scheme) {
    case TimeStepScheme::ExplicitEuler: k = 1; break;
    case TimeStepScheme::AdamsBashforth2: k = 2; break;
    case TimeStepScheme::AdamsBashforth3: k = 3; break;
    case TimeStepScheme::AdamsBashforth4: k = 4; break;
  }
  CoupledSystem sys(problem, q.p);
  Trajectory traj;
  std::vector<Vec> history;  // slow rhs values, newest first
  Vec yn = q.y0;
  const BvpSolution* warm = nullptr;
  BvpSolution prev;
  for (int n = 0; n <= steps; ++n) {
    ManifoldQuery qn = q;
    qn.t = q.t + n * dt;
    qn.y0 = yn;
    ManifoldPoint pt = manifold_point(problem, qn, warm);
    ++traj.bvp_solves;
    prev = pt.bvp;
    warm = &prev;

    TrajectoryStep step;
    step.t = qn.t;
    step.y = pt.y;
    step.x = pt.x;
    if (problem.residual_metric)
      step.residual =
          std::abs(problem.residual_metric(pt.original_state(problem), qn.t));
    traj.steps.push_back(step);
    if (n == steps) break;

    Vec Yn = sys.pack(pt.y, pt.x, pt.stack.what);
    Vec g = sys.slow_rhs(qn.t, Yn);
    history.insert(history.begin(), g);
    const int order = std::min<int>(k, static_cast<int>(history.size()));
    if (static_cast<int>(history.size()) > k) history.pop_back();
    const std::vector<double>& w = ab_weights(order);
    Vec incr = Vec::Zero(q.p);
    for (int j = 0; j < order; ++j) incr += w[j] * history[j];
    yn = pt.y + dt * incr;
  }
  return traj;
}

double truncation_bound(const GapData& g, double x0_norm, double t0,
                        double T) {
  if (g.kappa >= 1.0)
    throw SolverFailure("truncation_bound: kappa >= 1 (gap violated)");
  const double C = std::exp(g.kappa) * g.kappa / (1.0 - g.kappa);
  return C * x0_norm * std::exp((g.alpha - g.sigma) * (T - t0));
}

double t_lower_bound(const GapData& g, double tol, double x0_norm,
                     double t0) {
  if (tol <= 0.0)
    throw std::invalid_argument("t_lower_bound: tol must be > 0");
  const double sigma = 0.5 * (g.alpha + g.beta);
  const double kl = g.K * g.L;
  const double kappa =
      kl == 0.0 ? 0.0
                : std::max(kl / (sigma - g.alpha), kl / (g.beta - sigma));
  if (kappa >= 1.0)
    throw SolverFailure("t_lower_bound: kappa >= 1 (gap violated)");
  if (x0_norm <= 0.0) return t0;
  const double C = std::exp(kappa) * kappa / (1.0 - kappa);
  if (C * x0_norm <= tol) return t0;  // bound already met at T = t0
  return t0 + 2.0 / (g.alpha - g.beta) * std::log(tol / (C * x0_norm));
}

GapData estimate_gapdata(const ProblemDef& problem, const CoupledSystem& sys,
                         const IvpSolution& sample, int p) {
  if (sample.t.size() < 2)
    throw std::invalid_argument("estimate_gapdata: empty sample");
  const int d = problem.d;
  Vec diag_avg = Vec::Zero(d);
  double total = 0.0;
  std::vector<Vec> diags(sample.t.size());
  for (std::size_t i = 0; i < sample.t.size(); ++i) {
    Vec y, x;
    ReflectorStack stack;
    sys.unpack(sample.y[i], y, x, stack);
    BlockD D = sys.blockD(sample.t[i], sample.y[i]);
    Vec dg(d);
    dg.head(p) = D.D11.diagonal();
    dg.tail(d - p) = D.D22.diagonal();
    diags[i] = dg;
  }
  for (std::size_t i = 0; i + 1 < sample.t.size(); ++i) {
    const double h = sample.t[i + 1] - sample.t[i];
    diag_avg += 0.5 * h * (diags[i] + diags[i + 1]);
    total += h;
  }
  diag_avg /= total;

  const double beta = diag_avg.head(p).minCoeff();
  const double alpha = diag_avg.tail(d - p).maxCoeff();

  // Lipschitz estimate of the rotated nonlinearity along the sample.
  double L = 0.0;
  const double delta = 1e-5;
  const std::size_t stride = std::max<std::size_t>(1, sample.t.size() / 32);
  for (std::size_t i = 0; i < sample.t.size(); i += stride) {
    Vec y, x;
    ReflectorStack stack;
    sys.unpack(sample.y[i], y, x, stack);
    const double t = sample.t[i];
    Vec ui = from_rotated(stack, DecoupledState{y, x, t});
    const Mat C = problem.jacobian(ui, t);
    auto H = [&](const Vec& z) {
      DecoupledState s{z.head(p), z.tail(d - p), t};
      Vec u = from_rotated(stack, s);
      return Vec(rotate_forward(stack, problem.rhs(t, u) - C * u));
    };
    Vec z(d);
    z.head(p) = y;
    z.tail(d - p) = x;
    Vec H0 = H(z);
    Mat Jh(d, d);
    for (int c = 0; c < d; ++c) {
      Vec zp = z;
      zp[c] += delta;
      Jh.col(c) = (H(zp) - H0) / delta;
    }
    L = std::max(L, Jh.operatorNorm());
  }
  GapData g = GapData::make(1.0, alpha, beta, L);
  g.estimated = true;
  return g;
}

}  // namespace imd
