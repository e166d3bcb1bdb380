// Compares the serial reference path against the OpenMP path for the
// two data-parallel kernels: FD point Jacobians (the collocation hot
// spot) and sweep rows.

#include <chrono>
#include <iostream>

#include "imd/manifold.hpp"
#include "imd/ode_bvp.hpp"
#include "imd/problems.hpp"

using namespace imd;

static double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch())
      .count();
}

int main() {
  ProblemDef kse = kse_galerkin(15, 0.02991);
  CoupledSystem sys(kse, 6);
  OdeRhs rhs = [&sys](double t, const Vec& Y) { return sys.rhs(t, Y); };

  const int npts = 64;
  std::vector<double> ts(npts);
  std::vector<Vec> ys(npts), fs(npts);
  for (int i = 0; i < npts; ++i) {
    ts[i] = 0.01 * i;
    Vec Y = Vec::Zero(sys.dim());
    for (int c = 0; c < sys.dim(); ++c)
      Y[c] = 0.1 * std::sin(0.37 * (c + 1) * (i + 1));
    // stay inside the reflector chart
    sys.reembed_hook(ts[i], Y);
    ys[i] = Y;
    fs[i] = rhs(ts[i], Y);
  }

  std::vector<Mat> Jserial, Jpar;
  double t0 = now_s();
  detail::point_jacobians(rhs, ts, ys, fs, Jserial, /*parallel=*/false);
  double t1 = now_s();
  detail::point_jacobians(rhs, ts, ys, fs, Jpar, /*parallel=*/true);
  double t2 = now_s();

  double max_diff = 0.0;
  for (int i = 0; i < npts; ++i)
    max_diff = std::max(max_diff, (Jserial[i] - Jpar[i]).cwiseAbs().maxCoeff());
  std::cout << "point_jacobians (" << npts << " points, dim " << sys.dim()
            << ")\n"
            << "  serial:   " << (t1 - t0) << " s\n"
            << "  parallel: " << (t2 - t1) << " s\n"
            << "  speedup:  " << (t1 - t0) / (t2 - t1) << "x\n"
            << "  max |serial - parallel|: " << max_diff << "\n";

  ProblemDef p2 = rotating_2d(0.1);
  ManifoldQuery q;
  q.p = 1;
  q.y0 = Vec::Constant(1, 1.0);
  q.what_boundary = {Vec::Constant(1, 0.3)};
  q.bvp_tol = 1e-3;
  std::vector<double> Ts;
  for (int i = 1; i <= 12; ++i) Ts.push_back(0.2 * i);

  t0 = now_s();
  auto rows1 = sweep_T(p2, q, Ts, 1);
  t1 = now_s();
  auto rows4 = sweep_T(p2, q, Ts, 4);
  t2 = now_s();
  double max_row_diff = 0.0;
  for (std::size_t i = 0; i < Ts.size(); ++i)
    if (rows1[i].ok && rows4[i].ok)
      max_row_diff = std::max(max_row_diff,
                              std::abs(rows1[i].residual - rows4[i].residual));
  std::cout << "sweep_T (" << Ts.size() << " rows, rotating2d)\n"
            << "  serial (1 worker):   " << (t1 - t0) << " s\n"
            << "  parallel (4 workers): " << (t2 - t1) << " s\n"
            << "  speedup:  " << (t1 - t0) / (t2 - t1) << "x\n"
            << "  max row residual diff: " << max_row_diff << "\n";
  return 0;
}
