#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "imd/householder.hpp"
#include "imd/ode_ivp.hpp"
#include "imd/problems.hpp"

using namespace imd;

namespace {

ReflectorStack random_stack(int d, int p, unsigned seed, double scale) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  ReflectorStack st;
  st.d = d;
  st.sigma.assign(p, +1);
  for (int i = 0; i < p; ++i) {
    Vec w(d - i - 1);
    for (int j = 0; j < w.size(); ++j) w[j] = scale * dist(gen);
    st.what.push_back(w);
  }
  return st;
}

Vec flatten(const ReflectorStack& st) {
  int n = 0;
  for (const Vec& w : st.what) n += static_cast<int>(w.size());
  Vec v(n);
  int off = 0;
  for (const Vec& w : st.what) {
    v.segment(off, w.size()) = w;
    off += static_cast<int>(w.size());
  }
  return v;
}

ReflectorStack unflatten(const Vec& v, int d, int p) {
  ReflectorStack st;
  st.d = d;
  st.sigma.assign(p, +1);
  int off = 0;
  for (int i = 0; i < p; ++i) {
    st.what.push_back(v.segment(off, d - i - 1));
    off += d - i - 1;
  }
  return st;
}

// Sign-align the full QR of M to a reference frame; requires the frames
// to agree columnwise up to sign.
Mat qr_aligned(const Mat& M, const Mat& Qref) {
  Mat Q, R;
  qr_oracle(M, std::vector<int>(M.cols(), +1), Q, R);
  for (int j = 0; j < Q.cols(); ++j) {
    const double dot = Q.col(j).dot(Qref.col(j));
    REQUIRE(std::abs(dot) > 0.99);  // same column span
    if (dot < 0.0) Q.col(j) *= -1.0;
  }
  return Q;
}

// Max-entry difference between assemble_D along the integrated reflector
// flow and the FD-of-QR oracle at time tq, for a given FD step h.
double oracle_error(const std::function<Mat(double)>& Cfun, int d, int p,
                    unsigned seed, double tq, double h) {
  ReflectorStack st0 = random_stack(d, p, seed, 0.12);

  IvpSpec ws;
  ws.rhs = [&](double t, const Vec& v) {
    ReflectorStack st = unflatten(v, d, p);
    std::vector<Vec> dw = what_rhs(st, Cfun(t));
    ReflectorStack ds;
    ds.d = d;
    ds.what = dw;
    ds.sigma.assign(p, +1);
    return flatten(ds);
  };
  ws.t0 = 0.0;
  ws.t1 = tq + 2.0 * h;
  ws.y0 = flatten(st0);
  ws.rtol = 1e-12;
  ws.atol = 1e-14;
  IvpSolution wsol = integrate(ws);

  ReflectorStack stq = unflatten(wsol.eval(tq), d, p);
  Mat Qs = assemble_Q(stq);

  // Fundamental matrix X' = C X from X(0) = Q(0).
  const Mat Q0 = assemble_Q(st0);
  IvpSpec xs;
  xs.rhs = [&](double t, const Vec& v) {
    Mat X = Eigen::Map<const Mat>(v.data(), d, d);
    Mat dX = Cfun(t) * X;
    return Vec(Eigen::Map<Vec>(dX.data(), d * d));
  };
  xs.t0 = 0.0;
  xs.t1 = tq + 2.0 * h;
  xs.y0 = Eigen::Map<const Vec>(Q0.data(), d * d);
  xs.rtol = 1e-12;
  xs.atol = 1e-14;
  IvpSolution xsol = integrate(xs);
  auto Xat = [&](double t) {
    Vec v = xsol.eval(t);
    return Mat(Eigen::Map<const Mat>(v.data(), d, d));
  };

  Mat Qc = qr_aligned(Xat(tq), Qs);
  CHECK((Qc - Qs).cwiseAbs().maxCoeff() < 1e-8);  // same frame
  Mat Qp = qr_aligned(Xat(tq + h), Qs);
  Mat Qm = qr_aligned(Xat(tq - h), Qs);
  Mat Qdot = (Qp - Qm) / (2.0 * h);
  Mat Dfd = Qc.transpose() * Cfun(tq) * Qc - Qc.transpose() * Qdot;

  Mat Dst = assemble_D(stq, Cfun(tq)).assemble();
  return (Dfd - Dst).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("v_from_what on hand-checked inputs") {
  // what = 0: v = -sigma * e1.
  Vec v = v_from_what(Vec::Zero(2), +1);
  CHECK(v[0] == doctest::Approx(-1.0));
  CHECK(v.tail(2).norm() == doctest::Approx(0.0));
  Vec vm = v_from_what(Vec::Zero(2), -1);
  CHECK(vm[0] == doctest::Approx(1.0));

  // what = [1]: v = -[1,1]/sqrt(2); unit by construction.
  Vec v2 = v_from_what(Vec::Constant(1, 1.0), +1);
  CHECK(v2[0] == doctest::Approx(-1.0 / std::sqrt(2.0)));
  CHECK(v2[1] == doctest::Approx(-1.0 / std::sqrt(2.0)));
  CHECK(v2.norm() == doctest::Approx(1.0));
}

TEST_CASE("assemble_Q is orthogonal and triangularizes its own frame") {
  for (unsigned seed : {3u, 4u}) {
    ReflectorStack st = random_stack(6, 4, seed, 0.4);
    Mat Q = assemble_Q(st);
    CHECK((Q.transpose() * Q - Mat::Identity(6, 6)).cwiseAbs().maxCoeff() <
          1e-13);
  }
}

TEST_CASE("rotation round trips") {
  ReflectorStack st = random_stack(5, 2, 9, 0.5);
  std::mt19937 gen(17);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  Vec u(5);
  for (int i = 0; i < 5; ++i) u[i] = dist(gen);

  DecoupledState z = to_rotated(st, u, 2, 1.25);
  CHECK(z.t == 1.25);
  CHECK(z.y.size() == 2);
  CHECK(z.x.size() == 3);
  Vec back = from_rotated(st, z);
  CHECK((back - u).norm() < 1e-13);

  Vec n = rotate_forward(st, u);
  CHECK((rotate_inverse(st, n) - u).norm() < 1e-13);
  // Rotations are isometries.
  CHECK(n.norm() == doctest::Approx(u.norm()));
  // to_rotated is exactly (Q^T u) split in two.
  Mat Q = assemble_Q(st);
  Vec ref = Q.transpose() * u;
  CHECK((n - ref).norm() < 1e-13);
}

TEST_CASE("reembed is an involution and preserves the frame") {
  ReflectorStack st = random_stack(5, 3, 21, 0.4);
  st.what[1] *= 4.0;  // push block 1 out of the unit ball
  REQUIRE(needs_reembed(st) == std::vector<int>{1});

  ReflectorStack orig = st;
  Mat Qb = assemble_Q(st);
  reembed(st, 1);
  CHECK(st.sigma[1] == -orig.sigma[1]);
  CHECK(st.what[1].squaredNorm() < 1.0);
  Mat Qa = assemble_Q(st);
  // Reflectors ahead of the reembedded one are untouched, so their
  // columns agree exactly; the reembedded reflector is replaced by the
  // opposite-sign choice for the same pivot, flipping its own column.
  CHECK((Qa.col(0) - Qb.col(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((Qa.col(1) + Qb.col(1)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((Qa.transpose() * Qa - Mat::Identity(5, 5)).cwiseAbs().maxCoeff() <
        1e-13);

  reembed(st, 1);
  CHECK(st.sigma[1] == orig.sigma[1]);
  CHECK((st.what[1] - orig.what[1]).cwiseAbs().maxCoeff() < 1e-12);

  // Single reflector: its own column flips, the orthogonal complement is
  // preserved as a subspace.
  ReflectorStack one = random_stack(3, 1, 22, 0.4);
  one.what[0] *= 5.0;
  Mat Q1 = assemble_Q(one);
  reembed(one, 0);
  Mat Q2 = assemble_Q(one);
  CHECK((Q1.col(0) + Q2.col(0)).cwiseAbs().maxCoeff() < 1e-12);
  Mat proj1 = Q1.rightCols(2) * Q1.rightCols(2).transpose();
  Mat proj2 = Q2.rightCols(2) * Q2.rightCols(2).transpose();
  CHECK((proj1 - proj2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("needs_reembed uses a strict boundary") {
  ReflectorStack st = ReflectorStack::zeros(3, 1);
  st.what[0] = Vec::Zero(2);
  st.what[0][0] = 1.0;  // exactly on the boundary
  CHECK(needs_reembed(st).empty());
  st.what[0][0] = 1.0 + 1e-9;
  CHECK(needs_reembed(st) == std::vector<int>{0});
}

TEST_CASE("update_C zeroes the first column tail and reports leakage") {
  Mat C(3, 3);
  C << -1.0, 0.3, 0.1, 0.2, -2.0, 0.4, 0.05, 0.1, -3.0;
  Vec what(2);
  what << 0.2, -0.1;
  ReflectorStack st;
  st.d = 3;
  st.what = {what};
  st.sigma = {+1};
  std::vector<Vec> dw = what_rhs(st, C);
  double leak = 1.0;
  Mat Cn = update_C(C, what, dw[0], &leak);
  CHECK(std::abs(Cn(1, 0)) == 0.0);
  CHECK(std::abs(Cn(2, 0)) == 0.0);
  // With the consistent dwhat, the zeroed entries were already tiny.
  CHECK(leak < 1e-12);
  // With an inconsistent dwhat they are not; leakage must say so.
  Mat Cbad = update_C(C, what, Vec::Zero(2), &leak);
  CHECK(leak > 1e-6);
}

TEST_CASE("assembled D matches the FD-of-QR oracle at O(h^2)") {
  // Random constant coefficient matrices, full reflector stack.
  for (unsigned seed : {31u, 32u}) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Mat C(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) C(i, j) = dist(gen);
    auto Cfun = [&C](double) { return C; };

    const double e1 = oracle_error(Cfun, 5, 4, seed, 0.3, 4e-3);
    const double e2 = oracle_error(Cfun, 5, 4, seed, 0.3, 2e-3);
    CHECK(e1 < 1e-4);
    CHECK(e2 < e1);
    // halving h divides the error by about four
    CHECK(e1 / e2 > 2.5);
    CHECK(e1 / e2 < 6.5);
  }

  // Time-dependent case: the rotating 2D problem's frozen coefficient.
  ProblemDef rot = rotating_2d(0.1);
  auto Cfun = [&rot](double t) { return rot.coeff(t); };
  const double e = oracle_error(Cfun, 2, 1, 77, 0.4, 1e-3);
  CHECK(e < 1e-6);
}

TEST_CASE("leakage of the slow block stays tiny along the flow") {
  // Integrate the reflector flow for the rotating problem and check the
  // structural zeroing never hides anything substantial.
  ProblemDef rot = rotating_2d(0.1);
  ReflectorStack st = ReflectorStack::zeros(2, 1);
  st.what[0] = Vec::Constant(1, 0.3);
  IvpSpec s;
  s.rhs = [&](double t, const Vec& v) {
    ReflectorStack cur = unflatten(v, 2, 1);
    std::vector<Vec> dw = what_rhs(cur, rot.coeff(t));
    return Vec(dw[0]);
  };
  s.t0 = 0.0;
  s.t1 = 5.0;
  s.y0 = flatten(st);
  s.rtol = 1e-10;
  s.atol = 1e-12;
  s.hook = [](double, Vec& v) {
    ReflectorStack cur = unflatten(v, 2, 1);
    auto idx = needs_reembed(cur);
    for (int i : idx) reembed(cur, i);
    if (!idx.empty()) v = flatten(cur);
    return !idx.empty();
  };
  IvpSolution sol = integrate(s);
  for (double t = 0.0; t <= 5.0; t += 0.25) {
    ReflectorStack cur = unflatten(sol.eval(t), 2, 1);
    if (!needs_reembed(cur).empty()) continue;  // out of chart, skip
    BlockD D = assemble_D(cur, rot.coeff(t));
    CHECK(D.leakage < 1e-8);
  }
}
