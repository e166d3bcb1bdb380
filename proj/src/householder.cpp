#include "imd/householder.hpp"

#include <cmath>
#include <stdexcept>

namespace imd {
namespace {

void check_stack(const ReflectorStack& stack) {
  if (stack.p() >= stack.d)
    throw std::invalid_argument("ReflectorStack: p must be < d");
  for (int i = 0; i < stack.p(); ++i)
    if (stack.what[i].size() != stack.d - i - 1)
      throw std::invalid_argument("ReflectorStack: bad what length at " +
                                  std::to_string(i));
}

// dwhat for one stage from the local matrix C (m x m), what length m-1.
Vec stage_rhs(const Mat& C, const Vec& what) {
  const Eigen::Index m = C.rows();
  const double s = 1.0 + what.squaredNorm();
  const double c11 = C(0, 0);
  const Vec chat_col = C.col(0).tail(m - 1);
  const Eigen::RowVectorXd c1r = C.row(0).tail(m - 1);
  const auto Chat = C.bottomRightCorner(m - 1, m - 1);
  const double wtCw =
      c11 + c1r.dot(what) + what.dot(chat_col) + what.dot(Chat * what);
  Vec dwhat = (c11 + what.dot(chat_col) - 2.0 * wtCw / s) * what;
  dwhat += (1.0 - 0.5 * s) * chat_col;
  dwhat.noalias() += Chat * what;
  return dwhat;
}

}  // namespace

ReflectorStack ReflectorStack::zeros(int d, int p) {
  ReflectorStack st;
  st.d = d;
  st.what.reserve(p);
  st.sigma.assign(p, +1);
  for (int i = 0; i < p; ++i) st.what.push_back(Vec::Zero(d - i - 1));
  return st;
}

Mat BlockD::assemble() const {
  const Eigen::Index p = D11.rows();
  const Eigen::Index q = D22.rows();
  Mat D = Mat::Zero(p + q, p + q);
  D.topLeftCorner(p, p) = D11;
  D.topRightCorner(p, q) = D12;
  D.bottomRightCorner(q, q) = D22;
  return D;
}

Vec v_from_what(const Vec& what_i, int sigma_i) {
  if (what_i.squaredNorm() > 1.0 + 1e-12)
    throw std::invalid_argument("v_from_what: |what| > 1 (reembed first)");
  Vec w(what_i.size() + 1);
  w[0] = 1.0;
  w.tail(what_i.size()) = what_i;
  return (-static_cast<double>(sigma_i) / w.norm()) * w;
}

Mat update_C(const Mat& C_prev, const Vec& what_i, const Vec& dwhat_i,
             double* leakage) {
  const Eigen::Index m = C_prev.rows();
  if (C_prev.cols() != m || what_i.size() != m - 1 || dwhat_i.size() != m - 1)
    throw std::invalid_argument("update_C: dimension mismatch");
  Vec w(m), wd(m);
  w[0] = 1.0;
  w.tail(m - 1) = what_i;
  wd[0] = 0.0;
  wd.tail(m - 1) = dwhat_i;
  const double s = w.squaredNorm();  // >= 1 since the leading entry is 1

  Mat C = C_prev;
  Eigen::RowVectorXd wtC = w.transpose() * C_prev;
  Vec Cw = C_prev * w;
  const double wtCw = wtC.dot(w);
  C.noalias() -= (2.0 / s) * (w * wtC);
  C.noalias() -= (2.0 / s) * (Cw * w.transpose());
  C.noalias() += (4.0 * wtCw / (s * s)) * (w * w.transpose());
  C.noalias() -= (2.0 / s) * (w * wd.transpose());
  C.noalias() += (2.0 / s) * (wd * w.transpose());

  double leak = C.col(0).tail(m - 1).cwiseAbs().maxCoeff();
  if (leakage) *leakage = leak;
  C.col(0).tail(m - 1).setZero();
  return C;
}

std::vector<Vec> what_rhs(const ReflectorStack& stack, const Mat& C) {
  std::vector<Vec> dwhat;
  assemble_D(stack, C, &dwhat);
  return dwhat;
}

BlockD assemble_D(const ReflectorStack& stack, const Mat& C,
                  std::vector<Vec>* dwhat_out) {
  check_stack(stack);
  const int d = stack.d;
  const int p = stack.p();
  if (C.rows() != d || C.cols() != d)
    throw std::invalid_argument("assemble_D: C dimension mismatch");

  Mat M = C;
  double leakage = 0.0;
  if (dwhat_out) dwhat_out->clear();
  for (int i = 0; i < p; ++i) {
    const Eigen::Index m = d - i;
    const Vec& what = stack.what[i];
    Mat local = M.block(i, i, m, m);
    Vec dw = stage_rhs(local, what);
    double leak = 0.0;
    Mat updated = update_C(local, what, dw, &leak);
    leakage = std::max(leakage, leak);
    M.block(i, i, m, m) = updated;
    if (i > 0) {
      // pass the reflector through the rows above the active block
      Vec w(m);
      w[0] = 1.0;
      w.tail(m - 1) = what;
      const double s = w.squaredNorm();
      auto top = M.block(0, i, i, m);
      Vec Bw = top * w;
      top.noalias() -= (2.0 / s) * (Bw * w.transpose());
    }
    if (dwhat_out) dwhat_out->push_back(std::move(dw));
  }

  BlockD out;
  out.D11 = M.topLeftCorner(p, p).triangularView<Eigen::Upper>();
  out.D12 = M.topRightCorner(p, d - p);
  out.D22 = M.bottomRightCorner(d - p, d - p);
  out.leakage = leakage;
  return out;
}

std::vector<int> needs_reembed(const ReflectorStack& stack) {
  std::vector<int> idx;
  for (int i = 0; i < stack.p(); ++i)
    if (stack.what[i].squaredNorm() > 1.0) idx.push_back(i);
  return idx;
}

void reembed(ReflectorStack& stack, int index) {
  Vec& w = stack.what[index];
  const double n2 = w.squaredNorm();
  if (n2 == 0.0)
    throw std::logic_error("reembed: cannot reembed what = 0");
  w = -w / n2;
  stack.sigma[index] = -stack.sigma[index];
}

Mat assemble_Q(const ReflectorStack& stack) {
  check_stack(stack);
  const int d = stack.d;
  Mat Q = Mat::Identity(d, d);
  // Q = Q_1 ... Q_p applied to I from the left, innermost first.
  for (int i = stack.p() - 1; i >= 0; --i) {
    const Eigen::Index m = d - i;
    Vec w(m);
    w[0] = 1.0;
    w.tail(m - 1) = stack.what[i];
    const double s = w.squaredNorm();
    auto rows = Q.block(i, 0, m, d);
    Eigen::RowVectorXd wtR = w.transpose() * rows;
    rows.noalias() -= (2.0 / s) * (w * wtR);
  }
  return Q;
}

Vec rotate_forward(const ReflectorStack& stack, const Vec& n) {
  check_stack(stack);
  if (n.size() != stack.d)
    throw std::invalid_argument("rotate_forward: dimension mismatch");
  Vec z = n;
  for (int i = 0; i < stack.p(); ++i) {
    const Eigen::Index m = stack.d - i;
    Vec w(m);
    w[0] = 1.0;
    w.tail(m - 1) = stack.what[i];
    const double s = w.squaredNorm();
    auto tail = z.tail(m);
    tail -= (2.0 * w.dot(tail) / s) * w;
  }
  return z;
}

Vec rotate_inverse(const ReflectorStack& stack, const Vec& n) {
  check_stack(stack);
  if (n.size() != stack.d)
    throw std::invalid_argument("rotate_inverse: dimension mismatch");
  Vec u = n;
  for (int i = stack.p() - 1; i >= 0; --i) {
    const Eigen::Index m = stack.d - i;
    Vec w(m);
    w[0] = 1.0;
    w.tail(m - 1) = stack.what[i];
    const double s = w.squaredNorm();
    auto tail = u.tail(m);
    tail -= (2.0 * w.dot(tail) / s) * w;
  }
  return u;
}

DecoupledState to_rotated(const ReflectorStack& stack, const Vec& u, int p,
                          double t) {
  Vec z = rotate_forward(stack, u);
  DecoupledState s;
  s.y = z.head(p);
  s.x = z.tail(stack.d - p);
  s.t = t;
  return s;
}

Vec from_rotated(const ReflectorStack& stack, const DecoupledState& s) {
  Vec z(stack.d);
  z.head(s.y.size()) = s.y;
  z.tail(s.x.size()) = s.x;
  return rotate_inverse(stack, z);
}

}  // namespace imd
