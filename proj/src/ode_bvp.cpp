#include "imd/ode_bvp.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#ifdef IMD_HAVE_OPENMP
#include <omp.h>
#endif

namespace imd {
namespace {

// Monomial coefficients of the quartic matching p(0), p(1), p(1/2),
// p'(0), p'(1) in the normalized variable tau in [0,1].
const Mat& quartic_basis() {
  static const Mat inv = [] {
    Mat M(5, 5);
    // rows: the five interpolation conditions, cols: c0..c4
    M << 1, 0, 0, 0, 0,              // p(0)
        1, 1, 1, 1, 1,               // p(1)
        1, 0.5, 0.25, 0.125, 0.0625, // p(1/2)
        0, 1, 0, 0, 0,               // p'(0)
        0, 1, 2, 3, 4;               // p'(1)
    return Mat(M.inverse());
  }();
  return inv;
}

// Coefficients (d x 5) of the interval interpolant in tau.
Mat interval_coeffs(const Vec& y0, const Vec& y1, const Vec& ym, const Vec& f0,
                    const Vec& f1, double h) {
  const Eigen::Index d = y0.size();
  Mat rhs(5, d);
  rhs.row(0) = y0.transpose();
  rhs.row(1) = y1.transpose();
  rhs.row(2) = ym.transpose();
  rhs.row(3) = (h * f0).transpose();
  rhs.row(4) = (h * f1).transpose();
  Mat c = quartic_basis() * rhs;  // 5 x d
  return c.transpose();
}

Vec poly_eval(const Mat& c, double tau) {
  Vec out = c.col(4);
  for (int m = 3; m >= 0; --m) out = out * tau + c.col(m);
  return out;
}

Vec poly_deriv(const Mat& c, double tau, double h) {
  Vec out = 4.0 * c.col(4);
  for (int m = 3; m >= 1; --m) out = out * tau + m * c.col(m);
  return out / h;
}

std::size_t find_interval(const std::vector<double>& mesh, double t) {
  if (t < mesh.front() - 1e-12 * (1.0 + std::abs(mesh.front())) ||
      t > mesh.back() + 1e-12 * (1.0 + std::abs(mesh.back())))
    throw std::out_of_range("bvp interpolant: t outside mesh");
  std::size_t j =
      std::upper_bound(mesh.begin(), mesh.end(), t) - mesh.begin();
  if (j > 0) --j;
  if (j >= mesh.size() - 1) j = mesh.size() - 2;
  return j;
}

struct Discretization {
  std::vector<Vec> f, ymid, fmid;
};

// Midpoint values per the Lobatto IIIA (Simpson) relations.
void fill_discretization(const OdeRhs& rhs, const std::vector<double>& mesh,
                         const std::vector<Vec>& y, Discretization& dz) {
  const std::size_t N = mesh.size() - 1;
  dz.f.resize(N + 1);
  dz.ymid.resize(N);
  dz.fmid.resize(N);
  for (std::size_t i = 0; i <= N; ++i) dz.f[i] = rhs(mesh[i], y[i]);
  for (std::size_t j = 0; j < N; ++j) {
    const double h = mesh[j + 1] - mesh[j];
    dz.ymid[j] =
        0.5 * (y[j] + y[j + 1]) - (h / 8.0) * (dz.f[j + 1] - dz.f[j]);
    dz.fmid[j] = rhs(mesh[j] + 0.5 * h, dz.ymid[j]);
  }
}

// Stacked residual: [bc; Phi_0; ...; Phi_{N-1}].
Vec full_residual(const BvpSpec& spec, const std::vector<double>& mesh,
                  const std::vector<Vec>& y, Discretization& dz) {
  const std::size_t N = mesh.size() - 1;
  const Eigen::Index m = y[0].size();
  fill_discretization(spec.odefun, mesh, y, dz);
  Vec R((N + 1) * m);
  R.segment(0, m) = spec.bcfun(y[0], y[N]);
  for (std::size_t j = 0; j < N; ++j) {
    const double h = mesh[j + 1] - mesh[j];
    R.segment((j + 1) * m, m) =
        y[j + 1] - y[j] -
        (h / 6.0) * (dz.f[j] + 4.0 * dz.fmid[j] + dz.f[j + 1]);
  }
  return R;
}

Mat fd_jacobian(const OdeRhs& f, double t, const Vec& y, const Vec& fy) {
  const Eigen::Index m = y.size();
  Mat J(m, m);
  const double sqrt_eps = std::sqrt(2.220446049250313e-16);
  for (Eigen::Index c = 0; c < m; ++c) {
    const double delta = sqrt_eps * std::max(std::abs(y[c]), 1.0);
    Vec yp = y;
    yp[c] += delta;
    J.col(c) = (f(t, yp) - fy) / delta;
  }
  return J;
}

}  // namespace

namespace detail {
void point_jacobians(const OdeRhs& f, const std::vector<double>& t,
                     const std::vector<Vec>& y, const std::vector<Vec>& fy,
                     std::vector<Mat>& J, bool parallel) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(t.size());
  J.resize(n);
#ifdef IMD_HAVE_OPENMP
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i)
      J[i] = fd_jacobian(f, t[i], y[i], fy[i]);
    return;
  }
#else
  (void)parallel;
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i)
    J[i] = fd_jacobian(f, t[i], y[i], fy[i]);
}
}  // namespace detail

double BvpSolution::max_residual() const {
  double r = 0.0;
  for (double v : residual) r = std::max(r, v);
  return r;
}

Vec BvpSolution::eval(double t) const {
  const std::size_t j = find_interval(mesh, t);
  const double h = mesh[j + 1] - mesh[j];
  Mat c = interval_coeffs(y[j], y[j + 1], ymid[j], f[j], f[j + 1], h);
  return poly_eval(c, (t - mesh[j]) / h);
}

Vec BvpSolution::eval_deriv(double t) const {
  const std::size_t j = find_interval(mesh, t);
  const double h = mesh[j + 1] - mesh[j];
  Mat c = interval_coeffs(y[j], y[j + 1], ymid[j], f[j], f[j + 1], h);
  return poly_deriv(c, (t - mesh[j]) / h, h);
}

std::vector<double> residual_estimate(const BvpSolution& sol,
                                      const BvpSpec& spec) {
  const std::size_t N = sol.mesh.size() - 1;
  std::vector<double> res(N, 0.0);
  // Sample the defect off the collocation points.
  static const double taus[2] = {0.25, 0.75};
  for (std::size_t j = 0; j < N; ++j) {
    const double h = sol.mesh[j + 1] - sol.mesh[j];
    Mat c = interval_coeffs(sol.y[j], sol.y[j + 1], sol.ymid[j], sol.f[j],
                            sol.f[j + 1], h);
    double worst = 0.0;
    for (double tau : taus) {
      const double t = sol.mesh[j] + tau * h;
      Vec s = poly_eval(c, tau);
      Vec sp = poly_deriv(c, tau, h);
      Vec fv = spec.odefun(t, s);
      const double defect =
          (sp - fv).cwiseAbs().maxCoeff() / (1.0 + fv.cwiseAbs().maxCoeff());
      worst = std::max(worst, defect);
    }
    res[j] = worst;
  }
  return res;
}

namespace {

using SpMat = Eigen::SparseMatrix<double>;

// Newton iteration on a fixed mesh; y is updated in place.
int newton_on_mesh(const BvpSpec& spec, const std::vector<double>& mesh,
                   std::vector<Vec>& y, Discretization& dz) {
  const std::size_t N = mesh.size() - 1;
  const Eigen::Index m = y[0].size();
  const Eigen::Index n_unknowns = static_cast<Eigen::Index>((N + 1) * m);
  const double newton_tol = std::max(1e-12, 1e-4 * spec.tol);
  const bool parallel = spec.threads != 1;
#ifdef IMD_HAVE_OPENMP
  if (spec.threads > 1) omp_set_num_threads(spec.threads);
#endif

  Vec R = full_residual(spec, mesh, y, dz);
  int iters = 0;
  for (; iters < spec.max_newton_iter; ++iters) {
    if (R.cwiseAbs().maxCoeff() <= newton_tol) break;

    // Jacobians of f at nodes and midpoints.
    std::vector<double> tall(2 * N + 1);
    std::vector<Vec> yall(2 * N + 1), fall(2 * N + 1);
    for (std::size_t i = 0; i <= N; ++i) {
      tall[i] = mesh[i];
      yall[i] = y[i];
      fall[i] = dz.f[i];
    }
    for (std::size_t j = 0; j < N; ++j) {
      tall[N + 1 + j] = mesh[j] + 0.5 * (mesh[j + 1] - mesh[j]);
      yall[N + 1 + j] = dz.ymid[j];
      fall[N + 1 + j] = dz.fmid[j];
    }
    std::vector<Mat> J;
    detail::point_jacobians(spec.odefun, tall, yall, fall, J, parallel);

    // Boundary condition Jacobians by forward differences.
    Vec bc0 = spec.bcfun(y[0], y[N]);
    Mat Ba(m, m), Bb(m, m);
    const double sqrt_eps = std::sqrt(2.220446049250313e-16);
    for (Eigen::Index c = 0; c < m; ++c) {
      double da = sqrt_eps * std::max(std::abs(y[0][c]), 1.0);
      Vec ya = y[0];
      ya[c] += da;
      Ba.col(c) = (spec.bcfun(ya, y[N]) - bc0) / da;
      double db = sqrt_eps * std::max(std::abs(y[N][c]), 1.0);
      Vec yb = y[N];
      yb[c] += db;
      Bb.col(c) = (spec.bcfun(y[0], yb) - bc0) / db;
    }

    // Assemble the almost-block-bidiagonal Newton matrix.
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve((N * 2 + 2) * m * m);
    auto add_block = [&](Eigen::Index row0, Eigen::Index col0, const Mat& B) {
      for (Eigen::Index r = 0; r < m; ++r)
        for (Eigen::Index c = 0; c < m; ++c)
          if (B(r, c) != 0.0) trip.emplace_back(row0 + r, col0 + c, B(r, c));
    };
    add_block(0, 0, Ba);
    add_block(0, static_cast<Eigen::Index>(N) * m, Bb);
    const Mat I = Mat::Identity(m, m);
    for (std::size_t j = 0; j < N; ++j) {
      const double h = mesh[j + 1] - mesh[j];
      const Mat& Jl = J[j];
      const Mat& Jr = J[j + 1];
      const Mat& Jm = J[N + 1 + j];
      Mat A = -I - (h / 6.0) * (Jl + 4.0 * Jm * (0.5 * I + (h / 8.0) * Jl));
      Mat B = I - (h / 6.0) * (Jr + 4.0 * Jm * (0.5 * I - (h / 8.0) * Jr));
      add_block((j + 1) * m, j * m, A);
      add_block((j + 1) * m, (j + 1) * m, B);
    }
    SpMat Jac(n_unknowns, n_unknowns);
    Jac.setFromTriplets(trip.begin(), trip.end());

    Eigen::SparseLU<SpMat> lu;
    lu.compute(Jac);
    if (lu.info() != Eigen::Success)
      throw BvpConditioningError("bvp_solve: singular collocation Jacobian");
    Vec step = lu.solve(-R);
    if (!step.allFinite())
      throw BvpConditioningError("bvp_solve: non-finite Newton step");

    // Armijo backtracking on ||R||^2.
    const double merit0 = R.squaredNorm();
    double lambda = 1.0;
    bool accepted = false;
    std::vector<Vec> ytrial(N + 1);
    Vec Rtrial;
    while (lambda >= 1.0 / 1024.0) {
      for (std::size_t i = 0; i <= N; ++i)
        ytrial[i] = y[i] + lambda * step.segment(i * m, m);
      try {
        Rtrial = full_residual(spec, mesh, ytrial, dz);
      } catch (const IntegrationError&) {
        lambda *= 0.5;
        continue;
      }
      if (Rtrial.allFinite() &&
          Rtrial.squaredNorm() <= (1.0 - 2e-4 * lambda) * merit0) {
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (std::getenv("IMD_BVP_TRACE"))
      std::fprintf(stderr, "newton it=%d |R|=%.3e lambda=%.4f\n", iters,
                   R.cwiseAbs().maxCoeff(), lambda);
    if (!accepted)
      throw BvpConvergenceError(
          "bvp_solve: no residual decrease in damped Newton, |R|_max=" +
          std::to_string(R.cwiseAbs().maxCoeff()));
    y = ytrial;
    R = Rtrial;
  }
  if (R.cwiseAbs().maxCoeff() > std::max(1e-12, 1e-4 * spec.tol) * 10.0 &&
      iters == spec.max_newton_iter)
    throw BvpConvergenceError("bvp_solve: Newton did not converge, |R|_max=" +
                              std::to_string(R.cwiseAbs().maxCoeff()));
  return iters;
}

}  // namespace

BvpSolution bvp_solve(const BvpSpec& spec) {
  if (spec.mesh.size() < 2)
    throw std::invalid_argument("bvp_solve: mesh needs at least two points");
  if (spec.guess.size() != spec.mesh.size())
    throw std::invalid_argument("bvp_solve: guess/mesh size mismatch");
  for (std::size_t i = 1; i < spec.mesh.size(); ++i)
    if (!(spec.mesh[i] > spec.mesh[i - 1]))
      throw std::invalid_argument("bvp_solve: mesh must be increasing");
  const Eigen::Index m = spec.guess[0].size();
  for (const Vec& g : spec.guess) {
    if (g.size() != m || !g.allFinite())
      throw std::invalid_argument("bvp_solve: bad initial guess");
  }
  {
    Vec bc = spec.bcfun(spec.guess.front(), spec.guess.back());
    if (bc.size() != m)
      throw std::invalid_argument(
          "bvp_solve: bcfun must return exactly d components");
  }

  std::vector<double> mesh = spec.mesh;
  std::vector<Vec> y = spec.guess;

  BvpSolution sol;
  Discretization dz;
  while (true) {
    // Newton, then the post-convergence rewrite loop.
    int rewrite_rounds = 0;
    bool have_converged = false;
    std::vector<Vec> last_converged;
    while (true) {
      try {
        sol.newton_iterations += newton_on_mesh(spec, mesh, y, dz);
      } catch (const BvpConvergenceError&) {
        if (!have_converged) throw;
        // A hook rewrite pushed the iterate somewhere Newton cannot
        // return from; keep the last converged pre-hook solution.
        y = last_converged;
        sol.hook_cap_reached = true;
        break;
      }
      have_converged = true;
      last_converged = y;
      if (!spec.hook) break;
      bool any = false;
      for (std::size_t i = 0; i < mesh.size(); ++i) {
        Vec pre = y[i];
        if (spec.hook(mesh[i], y[i])) {
          any = true;
          sol.events.push_back({mesh[i], pre.norm(), y[i].norm()});
        }
      }
      if (!any) break;
      if (++rewrite_rounds > spec.max_rewrite_rounds) {
        // The hook and Newton keep undoing each other: the solution
        // genuinely straddles the states the hook rewrites. Keep the
        // converged pre-hook solution and report via the flag.
        y = last_converged;
        sol.hook_cap_reached = true;
        break;
      }
    }
    sol.rewrite_rounds = std::max(sol.rewrite_rounds, rewrite_rounds);

    sol.mesh = mesh;
    sol.y = y;
    fill_discretization(spec.odefun, mesh, y, dz);
    sol.f = dz.f;
    sol.ymid = dz.ymid;
    sol.fmid = dz.fmid;
    sol.residual = residual_estimate(sol, spec);
    if (sol.max_residual() <= spec.tol) break;

    // Refine where the defect is large; growth capped at 2x per round.
    const std::size_t N = mesh.size() - 1;
    std::vector<int> splits(N, 0);
    std::size_t extra = 0;
    for (std::size_t j = 0; j < N; ++j) {
      if (sol.residual[j] > 100.0 * spec.tol)
        splits[j] = 2;
      else if (sol.residual[j] > spec.tol)
        splits[j] = 1;
      extra += splits[j];
    }
    std::size_t budget = mesh.size();  // at most double per round
    if (extra > budget) {
      // Keep the worst offenders.
      std::vector<std::size_t> order(N);
      for (std::size_t j = 0; j < N; ++j) order[j] = j;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return sol.residual[a] > sol.residual[b];
      });
      std::vector<int> keep(N, 0);
      std::size_t used = 0;
      for (std::size_t j : order) {
        if (used >= budget) break;
        int want = std::min<int>(splits[j], static_cast<int>(budget - used));
        keep[j] = want;
        used += want;
      }
      splits = keep;
      extra = used;
    }
    if (extra == 0)
      throw BvpRefinementError(
          "bvp_solve: residual above tol but no interval flagged");
    if (mesh.size() + extra >
        static_cast<std::size_t>(spec.max_mesh_points))
      throw BvpRefinementError("bvp_solve: mesh budget exceeded, residual=" +
                               std::to_string(sol.max_residual()));

    std::vector<double> new_mesh;
    std::vector<Vec> new_y;
    for (std::size_t j = 0; j < N; ++j) {
      new_mesh.push_back(mesh[j]);
      new_y.push_back(y[j]);
      const int parts = splits[j] + 1;
      for (int q = 1; q < parts; ++q) {
        const double t =
            mesh[j] + (mesh[j + 1] - mesh[j]) * static_cast<double>(q) / parts;
        new_mesh.push_back(t);
        new_y.push_back(sol.eval(t));
      }
    }
    new_mesh.push_back(mesh[N]);
    new_y.push_back(y[N]);
    mesh = std::move(new_mesh);
    y = std::move(new_y);
  }
  return sol;
}

}  // namespace imd
