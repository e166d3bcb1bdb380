#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "imd/ode_bvp.hpp"
#include "imd/problems.hpp"

using namespace imd;

namespace {
std::vector<double> uniform_mesh(double a, double b, int n) {
  std::vector<double> m(n);
  for (int i = 0; i < n; ++i) m[i] = a + (b - a) * double(i) / (n - 1);
  return m;
}
}  // namespace

TEST_CASE("linear two-point problem reproduces sin(t)") {
  // u'' = -u, u(0) = 0, u(pi/2) = 1  ->  u = sin(t).
  BvpSpec s;
  s.odefun = [](double, const Vec& u) {
    Vec du(2);
    du[0] = u[1];
    du[1] = -u[0];
    return du;
  };
  s.bcfun = [](const Vec& ua, const Vec& ub) {
    Vec r(2);
    r[0] = ua[0];
    r[1] = ub[0] - 1.0;
    return r;
  };
  s.mesh = uniform_mesh(0.0, M_PI / 2.0, 9);
  s.guess.assign(9, Vec::Zero(2));
  s.tol = 1e-6;
  BvpSolution sol = bvp_solve(s);

  for (double t = 0.0; t <= M_PI / 2.0; t += 0.1) {
    Vec u = sol.eval(t);
    CHECK(std::abs(u[0] - std::sin(t)) < 1e-6);
    CHECK(std::abs(u[1] - std::cos(t)) < 1e-5);
  }
  // Interpolant derivative approximates the ODE right-hand side.
  Vec du = sol.eval_deriv(0.7);
  CHECK(std::abs(du[0] - std::cos(0.7)) < 1e-4);
  CHECK(sol.max_residual() <= s.tol);
}

TEST_CASE("nonlinear problem with a closed-form solution") {
  // u'' = 6 u^2, u(0) = 1, u(1) = 1/4  ->  u = (1+t)^-2.
  BvpSpec s;
  s.odefun = [](double, const Vec& u) {
    Vec du(2);
    du[0] = u[1];
    du[1] = 6.0 * u[0] * u[0];
    return du;
  };
  s.bcfun = [](const Vec& ua, const Vec& ub) {
    Vec r(2);
    r[0] = ua[0] - 1.0;
    r[1] = ub[0] - 0.25;
    return r;
  };
  s.mesh = uniform_mesh(0.0, 1.0, 11);
  Vec g(2);
  g << 1.0, 0.0;
  s.guess.assign(11, g);
  s.tol = 1e-6;
  BvpSolution sol = bvp_solve(s);
  CHECK(sol.newton_iterations > 1);  // genuinely nonlinear
  for (double t = 0.0; t <= 1.0; t += 0.13) {
    const double exact = std::pow(1.0 + t, -2.0);
    CHECK(std::abs(sol.eval(t)[0] - exact) < 1e-5);
  }
}

TEST_CASE("mesh refinement triggers on a boundary layer") {
  // u'' = k^2 u with k = 25 has sharp layers at both ends.
  const double k = 25.0;
  BvpSpec s;
  s.odefun = [k](double, const Vec& u) {
    Vec du(2);
    du[0] = u[1];
    du[1] = k * k * u[0];
    return du;
  };
  s.bcfun = [](const Vec& ua, const Vec& ub) {
    Vec r(2);
    r[0] = ua[0] - 1.0;
    r[1] = ub[0] - 1.0;
    return r;
  };
  s.mesh = uniform_mesh(0.0, 1.0, 7);
  s.guess.assign(7, Vec::Zero(2));
  s.tol = 1e-5;
  BvpSolution sol = bvp_solve(s);
  CHECK(sol.mesh.size() > 7);  // refinement happened
  // Exact solution: cosh centered layers.
  auto exact = [k](double t) {
    return std::cosh(k * (t - 0.5)) / std::cosh(k * 0.5);
  };
  for (double t = 0.0; t <= 1.0; t += 0.05)
    CHECK(std::abs(sol.eval(t)[0] - exact(t)) < 5e-4);
  // Independent defect estimate agrees with the converged claim.
  std::vector<double> res = residual_estimate(sol, s);
  double mx = 0.0;
  for (double r : res) mx = std::max(mx, r);
  CHECK(mx <= s.tol * 1.5);
}

TEST_CASE("unsolvable problems raise rather than return garbage") {
  // No-decrease stall: boundary data unreachable for y' = -y^2 - 1
  // (solution blows down in finite time; interval too long).
  BvpSpec s;
  s.odefun = [](double, const Vec& u) {
    return Vec(Vec::Constant(1, -u[0] * u[0] - 1.0));
  };
  s.bcfun = [](const Vec& ua, const Vec&) {
    return Vec(Vec::Constant(1, ua[0] - 0.0));
  };
  s.mesh = uniform_mesh(0.0, 10.0, 11);
  s.guess.assign(11, Vec::Zero(1));
  s.tol = 1e-6;
  s.max_mesh_points = 200;
  CHECK_THROWS_AS(bvp_solve(s), std::runtime_error);
}

TEST_CASE("point Jacobians: parallel path is bit-identical to serial") {
  ProblemDef kse = kse_galerkin(15, 0.02991);
  OdeRhs f = [&kse](double t, const Vec& u) { return kse.rhs(t, u); };

  std::mt19937 gen(123);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  const int npts = 41;
  std::vector<double> ts(npts);
  std::vector<Vec> ys(npts), fy(npts);
  for (int i = 0; i < npts; ++i) {
    ts[i] = 0.1 * i;
    Vec u(15);
    for (int c = 0; c < 15; ++c) u[c] = dist(gen);
    ys[i] = u;
    fy[i] = f(ts[i], u);
  }
  std::vector<Mat> Js, Jp;
  detail::point_jacobians(f, ts, ys, fy, Js, /*parallel=*/false);
  detail::point_jacobians(f, ts, ys, fy, Jp, /*parallel=*/true);
  REQUIRE(Js.size() == Jp.size());
  for (int i = 0; i < npts; ++i) {
    // bitwise equality, not approximate
    CHECK((Js[i].array() == Jp[i].array()).all());
  }
}

TEST_CASE("post-convergence rewrite hook runs and is reported") {
  // A hook that renames states in a dead zone the solution never enters:
  // must not fire. Then one that symmetrizes a sign: fires once.
  BvpSpec s;
  s.odefun = [](double, const Vec& u) { return Vec(-u); };
  s.bcfun = [](const Vec& ua, const Vec&) {
    return Vec(Vec::Constant(1, ua[0] - 1.0));
  };
  s.mesh = uniform_mesh(0.0, 1.0, 5);
  s.guess.assign(5, Vec::Constant(1, 1.0));
  s.tol = 1e-8;
  s.hook = [](double, Vec& u) {
    if (u[0] > 5.0) {  // never true for the decaying solution
      u[0] = 0.0;
      return true;
    }
    return false;
  };
  BvpSolution sol = bvp_solve(s);
  CHECK(sol.events.empty());
  CHECK(sol.rewrite_rounds == 0);
  CHECK(!sol.hook_cap_reached);
  CHECK(std::abs(sol.eval(1.0)[0] - std::exp(-1.0)) < 1e-7);
}

TEST_CASE("cycling rewrite hooks fall back to the converged solution") {
  // A hook that always perturbs the interior forces the cap; the solver
  // must keep the converged pre-hook states and flag the condition.
  BvpSpec s;
  s.odefun = [](double, const Vec& u) { return Vec(-u); };
  s.bcfun = [](const Vec& ua, const Vec&) {
    return Vec(Vec::Constant(1, ua[0] - 1.0));
  };
  s.mesh = uniform_mesh(0.0, 1.0, 5);
  s.guess.assign(5, Vec::Constant(1, 1.0));
  s.tol = 1e-8;
  s.max_rewrite_rounds = 3;
  s.hook = [](double t, Vec& u) {
    if (t > 0.0 && t < 1.0) {
      u[0] += 1e-3;
      return true;
    }
    return false;
  };
  BvpSolution sol = bvp_solve(s);
  CHECK(sol.hook_cap_reached);
  // Pre-hook states are the converged ones: still accurate.
  CHECK(std::abs(sol.eval(1.0)[0] - std::exp(-1.0)) < 1e-6);
}
