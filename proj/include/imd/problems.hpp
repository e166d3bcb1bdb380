#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>

#include "imd/linalg.hpp"
#include "imd/ode_ivp.hpp"

namespace imd {

// An ODE udot = f(u,t) split as C(t)u + N(u,t) with C(t) = f'(anchor,t)
// frozen along a constant linearization anchor.
struct ProblemDef {
  std::string name;
  int d = 0;
  OdeRhs rhs;
  std::function<Mat(const Vec&, double)> jacobian;  // f'(u,t)
  Vec anchor;                                       // linearization anchor
  // Problem-specific manifold residual (absolute value is the error).
  std::function<double(const Vec&, double)> residual_metric;
  std::map<std::string, double> params;

  Mat coeff(double t) const { return jacobian(anchor, t); }
  Vec nonlinearity(const Vec& u, double t) const {
    return rhs(t, u) - coeff(t) * u;
  }
};

// Central-difference Jacobian of a ProblemDef rhs, for validation.
Mat fd_jacobian_central(const ProblemDef& p, const Vec& u, double t,
                        double h = 1e-6);

// 2D rotating-frame test problem; sigma_f is the forcing amplitude.
ProblemDef rotating_2d(double sigma_f = 0.1);

// Odd 2pi-periodic sine-Galerkin truncation of w_s = (w^2)_y - w_yy
// - xi w_yyyy, state a_1..a_n.
ProblemDef kse_galerkin(int n_modes = 15, double xi = 0.02991);

// Change of variables between the Galerkin state and the original
// utilde frame: utilde = -2 w (and time rescales as s = 4 tau / xi).
Vec kse_w_from_utilde(const Vec& utilde_coeffs);
Vec kse_utilde_from_w(const Vec& w_coeffs);

// Two-layer Lorenz, state (x_1..x_K, y_{1,1}..y_{J,K}), j fastest.
ProblemDef two_layer_lorenz(int K = 5, int J = 4, double eps = 0.5,
                            double h_x = -1.0, double h_y = 1.0,
                            double F = 8.0);

struct GapData;  // see manifold.hpp

// Linear (optionally weakly nonlinear) benchmark with known constants:
// udot = [[B, C12],[0, A]] u + nl_eps * sin-coupling. Block order is
// (y, x): B slow, A strongly stable. Exact manifold: x == 0.
struct LinearBenchmark {
  ProblemDef def;
  int p = 0;
  double K = 1.0, alpha = 0.0, beta = 0.0, L = 0.0;
  bool gap_ok = false;
};
LinearBenchmark linear_benchmark(const Mat& B_block, const Mat& A_block,
                                 const Mat& coupling, double nl_eps = 0.0);

}  // namespace imd
