#include "imd/problems.hpp"

#include <cmath>
#include <stdexcept>

namespace imd {

Mat fd_jacobian_central(const ProblemDef& p, const Vec& u, double t,
                        double h) {
  Mat J(p.d, p.d);
  for (int c = 0; c < p.d; ++c) {
    const double delta = h * std::max(std::abs(u[c]), 1.0);
    Vec up = u, um = u;
    up[c] += delta;
    um[c] -= delta;
    J.col(c) = (p.rhs(t, up) - p.rhs(t, um)) / (2.0 * delta);
  }
  return J;
}

ProblemDef rotating_2d(double sigma_f) {
  ProblemDef p;
  p.name = "rotating2d";
  p.d = 2;
  p.anchor = Vec::Zero(2);
  p.params["sigma"] = sigma_f;
  p.rhs = [sigma_f](double t, const Vec& u) {
    const double v = u[0], w = u[1];
    const double ct = std::cos(t), st = std::sin(t);
    const double x = v * ct - w * st;
    const double y = v * st + w * ct;
    const double E = -y + x * x - 2.0 * y * y + sigma_f * ct;
    Vec du(2);
    du[0] = w - x * y * ct + E * st;
    du[1] = -v + x * y * st + E * ct;
    return du;
  };
  p.jacobian = [](const Vec& u, double t) {
    const double v = u[0], w = u[1];
    const double ct = std::cos(t), st = std::sin(t);
    const double x = v * ct - w * st;
    const double y = v * st + w * ct;
    const double Ev = -st + 2.0 * x * ct - 4.0 * y * st;
    const double Ew = -ct - 2.0 * x * st - 4.0 * y * ct;
    const double xy_v = y * ct + x * st;   // d(xy)/dv
    const double xy_w = -y * st + x * ct;  // d(xy)/dw
    Mat J(2, 2);
    J(0, 0) = -ct * xy_v + st * Ev;
    J(0, 1) = 1.0 - ct * xy_w + st * Ew;
    J(1, 0) = -1.0 + st * xy_v + ct * Ev;
    J(1, 1) = st * xy_w + ct * Ew;
    return J;
  };
  p.residual_metric = [sigma_f](const Vec& u, double t) {
    const double v = u[0], w = u[1];
    const double ct = std::cos(t), st = std::sin(t);
    const double x = v * ct - w * st;
    return v * st + w * ct - x * x - 0.5 * sigma_f * (ct + st);
  };
  return p;
}

ProblemDef kse_galerkin(int n, double xi) {
  if (n < 1) throw std::invalid_argument("kse_galerkin: n_modes >= 1");
  ProblemDef p;
  p.name = "kse";
  p.d = n;
  p.anchor = Vec::Zero(n);
  p.params["n_modes"] = n;
  p.params["xi"] = xi;
  p.rhs = [n, xi](double /*t*/, const Vec& a) {
    Vec da(n);
    for (int k = 1; k <= n; ++k) {
      const double kk = static_cast<double>(k);
      double lin = (kk * kk - xi * kk * kk * kk * kk) * a[k - 1];
      double conv = 0.0;
      for (int j = 1; j <= k - 1; ++j) conv += a[j - 1] * a[k - j - 1];
      double shift = 0.0;
      for (int j = 1; j <= n - k; ++j) shift += a[j - 1] * a[j + k - 1];
      da[k - 1] = lin + 0.5 * kk * conv - kk * shift;
    }
    return da;
  };
  p.jacobian = [n, xi](const Vec& a, double /*t*/) {
    Mat J = Mat::Zero(n, n);
    for (int k = 1; k <= n; ++k) {
      const double kk = static_cast<double>(k);
      J(k - 1, k - 1) += kk * kk - xi * kk * kk * kk * kk;
      for (int i = 1; i <= n; ++i) {
        double g = 0.0;
        if (k - i >= 1 && k - i <= n) g += kk * a[k - i - 1];
        if (i + k <= n) g -= kk * a[i + k - 1];
        if (i - k >= 1) g -= kk * a[i - k - 1];
        J(k - 1, i - 1) += g;
      }
    }
    return J;
  };
  return p;
}

Vec kse_w_from_utilde(const Vec& utilde_coeffs) {
  return -0.5 * utilde_coeffs;
}

Vec kse_utilde_from_w(const Vec& w_coeffs) { return -2.0 * w_coeffs; }

ProblemDef two_layer_lorenz(int K, int J, double eps, double h_x, double h_y,
                            double F) {
  if (K < 4 || J < 4)
    throw std::invalid_argument("two_layer_lorenz: need K >= 4 and J >= 4");
  ProblemDef p;
  p.name = "two_layer_lorenz";
  p.d = K + J * K;
  p.anchor = Vec::Zero(p.d);
  p.params = {{"K", double(K)}, {"J", double(J)}, {"eps", eps},
              {"h_x", h_x},     {"h_y", h_y},     {"F", F}};
  auto xk = [K](int k) { return ((k % K) + K) % K; };
  auto yidx = [K, J](int j, int k) {
    return K + k * J + ((j % J) + J) % J;
  };
  p.rhs = [=](double /*t*/, const Vec& u) {
    Vec du(K + J * K);
    for (int k = 0; k < K; ++k) {
      double z = 0.0;
      for (int j = 0; j < J; ++j) z += u[yidx(j, k)];
      z *= h_x / J;
      du[k] = u[xk(k - 1)] * (u[xk(k + 1)] - u[xk(k - 2)]) - u[k] + F + z;
    }
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < J; ++j) {
        const double yj1 = u[yidx(j + 1, k)];
        du[yidx(j, k)] =
            (yj1 * (u[yidx(j - 1, k)] - u[yidx(j + 2, k)]) - u[yidx(j, k)] +
             h_y * u[k]) /
            eps;
      }
    return du;
  };
  p.jacobian = [=](const Vec& u, double /*t*/) {
    Mat Jm = Mat::Zero(K + J * K, K + J * K);
    for (int k = 0; k < K; ++k) {
      Jm(k, xk(k - 1)) += u[xk(k + 1)] - u[xk(k - 2)];
      Jm(k, xk(k + 1)) += u[xk(k - 1)];
      Jm(k, xk(k - 2)) -= u[xk(k - 1)];
      Jm(k, k) -= 1.0;
      for (int j = 0; j < J; ++j) Jm(k, yidx(j, k)) += h_x / J;
    }
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < J; ++j) {
        const int r = yidx(j, k);
        Jm(r, yidx(j + 1, k)) += (u[yidx(j - 1, k)] - u[yidx(j + 2, k)]) / eps;
        Jm(r, yidx(j - 1, k)) += u[yidx(j + 1, k)] / eps;
        Jm(r, yidx(j + 2, k)) -= u[yidx(j + 1, k)] / eps;
        Jm(r, r) -= 1.0 / eps;
        Jm(r, k) += h_y / eps;
      }
    return Jm;
  };
  return p;
}

LinearBenchmark linear_benchmark(const Mat& B_block, const Mat& A_block,
                                 const Mat& coupling, double nl_eps) {
  const int p = static_cast<int>(B_block.rows());
  const int q = static_cast<int>(A_block.rows());
  if (B_block.cols() != p || A_block.cols() != q || coupling.rows() != p ||
      coupling.cols() != q)
    throw std::invalid_argument("linear_benchmark: block shape mismatch");
  const int d = p + q;
  Mat M = Mat::Zero(d, d);
  M.topLeftCorner(p, p) = B_block;
  M.topRightCorner(p, q) = coupling;
  M.bottomRightCorner(q, q) = A_block;

  LinearBenchmark lb;
  lb.p = p;
  lb.def.name = "linear_benchmark";
  lb.def.d = d;
  lb.def.anchor = Vec::Zero(d);
  lb.def.params["nl_eps"] = nl_eps;
  lb.def.rhs = [M, nl_eps, d](double /*t*/, const Vec& u) {
    Vec du = M * u;
    if (nl_eps != 0.0)
      for (int i = 0; i < d; ++i) du[i] += nl_eps * std::sin(u[(i + 1) % d]);
    return du;
  };
  lb.def.jacobian = [M, nl_eps, d](const Vec& u, double /*t*/) {
    Mat J = M;
    if (nl_eps != 0.0)
      for (int i = 0; i < d; ++i)
        J(i, (i + 1) % d) += nl_eps * std::cos(u[(i + 1) % d]);
    return J;
  };

  // Exact hypothesis constants for diagonal blocks; otherwise eigenvalue
  // based (the caller should prefer diagonal blocks in tests).
  lb.K = 1.0;
  {
    Eigen::EigenSolver<Mat> ea(A_block, false), eb(B_block, false);
    lb.alpha = ea.eigenvalues().real().maxCoeff();
    lb.beta = eb.eigenvalues().real().minCoeff();
  }
  // |d(sin-coupling)| <= nl_eps entrywise, one entry per row: 2-norm
  // bound nl_eps. Linear coupling C12 enters G directly.
  lb.L = coupling.norm() + nl_eps;
  lb.gap_ok = lb.L < (lb.beta - lb.alpha) / (2.0 * lb.K);
  return lb;
}

}  // namespace imd
