#include "imd/ode_ivp.hpp"

#include <algorithm>
#include <cmath>

namespace imd {
namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;

constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// 4th order weights (embedded).
constexpr double e1 = 5179.0 / 57600, e3 = 7571.0 / 16695, e4 = 393.0 / 640,
                 e5 = -92097.0 / 339200, e6 = 187.0 / 2100, e7 = 1.0 / 40;

// Dense-output polynomial weights (MATLAB ode45 interpolant).
constexpr double bi[7][4] = {
    {1.0, -183.0 / 64, 37.0 / 12, -145.0 / 128},
    {0.0, 0.0, 0.0, 0.0},
    {0.0, 1500.0 / 371, -1000.0 / 159, 1000.0 / 371},
    {0.0, -125.0 / 32, 125.0 / 12, -375.0 / 64},
    {0.0, 9477.0 / 3392, -729.0 / 106, 25515.0 / 6784},
    {0.0, -11.0 / 7, 11.0 / 3, -55.0 / 28},
    {0.0, 3.0 / 2, -4.0, 5.0 / 2}};

double error_norm(const Vec& err, const Vec& y_old, const Vec& y_new,
                  double atol, double rtol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc =
        atol + rtol * std::max(std::abs(y_old[i]), std::abs(y_new[i]));
    const double q = err[i] / sc;
    acc += q * q;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

}  // namespace

Vec IvpSolution::eval(double tq) const {
  const double dir = t.back() >= t.front() ? 1.0 : -1.0;
  const double lo = std::min(t.front(), t.back());
  const double hi = std::max(t.front(), t.back());
  const double span = hi - lo;
  if (tq < lo - 1e-12 * (1.0 + span) || tq > hi + 1e-12 * (1.0 + span))
    throw std::out_of_range("IvpSolution::eval: t outside integrated span");
  // Exact mesh hit returns the stored (post-hook) state.
  for (std::size_t j = 0; j < t.size(); ++j)
    if (tq == t[j]) return y[j];
  // Locate the step containing tq.
  std::size_t j = 0;
  while (j + 2 < t.size() && dir * (tq - t[j + 1]) > 0.0) ++j;
  const double h = t[j + 1] - t[j];
  const double th = (tq - t[j]) / h;
  Vec out = y[j];
  double p = th;
  for (int m = 0; m < 4; ++m, p *= th) out += (h * p) * coef_[j].col(m);
  return out;
}

IvpSolution integrate(const IvpSpec& spec) {
  if (spec.t0 == spec.t1)
    throw std::invalid_argument("integrate: t0 == t1");
  if (spec.rtol <= 0.0 || spec.atol <= 0.0)
    throw std::invalid_argument("integrate: tolerances must be positive");

  const double dir = spec.t1 > spec.t0 ? 1.0 : -1.0;
  const double span = std::abs(spec.t1 - spec.t0);
  const Eigen::Index d = spec.y0.size();

  auto f = [&](double t, const Vec& y) {
    Vec v = spec.rhs(t, y);
    if (!v.allFinite())
      throw IntegrationError("integrate: non-finite rhs at t=" +
                             std::to_string(t));
    return v;
  };

  IvpSolution sol;
  double tn = spec.t0;
  Vec yn = spec.y0;
  if (spec.hook) {
    Vec pre = yn;
    if (spec.hook(tn, yn)) sol.events.push_back({tn, pre.norm(), yn.norm()});
  }
  sol.t.push_back(tn);
  sol.y.push_back(yn);

  Vec k1 = f(tn, yn);

  // Initial step size from the scale of f(t0, y0).
  double h;
  {
    const double sc = spec.atol + spec.rtol * yn.norm();
    const double d0 = yn.norm() / sc;
    const double d1 = k1.norm() / sc;
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    Vec y1 = yn + dir * h0 * k1;
    Vec k2 = f(tn + dir * h0, y1);
    const double d2 = (k2 - k1).norm() / sc / h0;
    double h1;
    if (std::max(d1, d2) <= 1e-15)
      h1 = std::max(1e-6, h0 * 1e-3);
    else
      h1 = std::pow(0.01 / std::max(d1, d2), 0.2);
    h = std::min({100.0 * h0, h1, span});
  }

  Vec k2(d), k3(d), k4(d), k5(d), k6(d), k7(d);

  while (dir * (spec.t1 - tn) > 0.0) {
    if (h < 1e-14 * span)
      throw IntegrationError("integrate: step size underflow at t=" +
                             std::to_string(tn));
    h = std::min(h, std::abs(spec.t1 - tn));
    const double hs = dir * h;

    k2 = f(tn + c2 * hs, yn + hs * (a21 * k1));
    k3 = f(tn + c3 * hs, yn + hs * (a31 * k1 + a32 * k2));
    k4 = f(tn + c4 * hs, yn + hs * (a41 * k1 + a42 * k2 + a43 * k3));
    k5 = f(tn + c5 * hs,
           yn + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    k6 = f(tn + hs,
           yn + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vec ynew = yn + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    k7 = f(tn + hs, ynew);
    Vec y4 = yn + hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 +
                        e7 * k7);
    const double err = error_norm(ynew - y4, yn, ynew, spec.atol, spec.rtol);

    if (err <= 1.0) {
      // Accept: record dense-output coefficients for this step.
      Mat coef(d, 4);
      const Vec* ks[7] = {&k1, &k2, &k3, &k4, &k5, &k6, &k7};
      for (int m = 0; m < 4; ++m) {
        Vec col = Vec::Zero(d);
        for (int i = 0; i < 7; ++i)
          if (bi[i][m] != 0.0) col += bi[i][m] * (*ks[i]);
        coef.col(m) = col;
      }
      sol.coef_.push_back(std::move(coef));

      tn += hs;
      yn = std::move(ynew);
      bool rewrote = false;
      if (spec.hook) {
        Vec pre = yn;
        if (spec.hook(tn, yn)) {
          rewrote = true;
          sol.events.push_back({tn, pre.norm(), yn.norm()});
        }
      }
      sol.t.push_back(tn);
      sol.y.push_back(yn);
      ++sol.accepted;

      if (rewrote)
        k1 = f(tn, yn);  // rewritten state invalidates the FSAL cache
      else
        k1 = k7;
    } else {
      ++sol.rejected;
    }
    const double fac =
        std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 0.2, 5.0);
    h *= fac;
  }
  return sol;
}

}  // namespace imd
