#pragma once

#include <vector>

#include "imd/linalg.hpp"

namespace imd {

// Stack of p time-dependent Householder reflectors encoding Q(t).
// what[i] holds the tail coordinates of w_{i+1} = [1, what[i]] (length
// d-i-1); sigma[i] is the sign chart. Invariant: |what[i]|^2 <= 1 after
// any public operation.
struct ReflectorStack {
  int d = 0;
  std::vector<Vec> what;
  std::vector<int> sigma;

  int p() const { return static_cast<int>(what.size()); }

  static ReflectorStack zeros(int d, int p);
};

// Triangularized coefficient matrix D = Q^T C Q - Q^T Qdot in block form.
// D11 (p x p) is upper triangular and drives the slow/unstable block; the
// (2,1) block is zero by construction. leakage records the magnitude of
// the sub-diagonal entries before they are structurally zeroed.
struct BlockD {
  Mat D11, D12, D22;
  double leakage = 0.0;

  Mat assemble() const;  // full d x d matrix
};

struct DecoupledState {
  Vec y;  // slow/unstable block, length p
  Vec x;  // strongly stable block, length d - p
  double t = 0.0;
};

// Unit reflector vector: v = -sigma * [1, what] / |[1, what]|.
Vec v_from_what(const Vec& what_i, int sigma_i);

// One stage of the sequential update: given the current (local) matrix
// C_prev of size m x m and the stage's what/dwhat (length m-1), returns
// the transformed matrix P C P - P Pdot with the first column below the
// diagonal zeroed structurally. leakage, when given, receives the
// magnitude of those entries before zeroing.
Mat update_C(const Mat& C_prev, const Vec& what_i, const Vec& dwhat_i,
             double* leakage = nullptr);

// Right-hand sides dwhat_i/dt for the whole stack given C(t). Derived
// from the condition that each reflector keeps column i of the
// propagated frame triangular. O(p d^2).
std::vector<Vec> what_rhs(const ReflectorStack& stack, const Mat& C);

// what_rhs and the full sequence of updates in one pass.
BlockD assemble_D(const ReflectorStack& stack, const Mat& C,
                  std::vector<Vec>* dwhat_out = nullptr);

// Indices i with |what_i|^2 > 1 (strict; the boundary is permitted).
std::vector<int> needs_reembed(const ReflectorStack& stack);

// Chart change what <- -what / (what^T what), sigma <- -sigma.
// An involution; requires what != 0.
void reembed(ReflectorStack& stack, int index);

Mat assemble_Q(const ReflectorStack& stack);

DecoupledState to_rotated(const ReflectorStack& stack, const Vec& u, int p,
                          double t = 0.0);
Vec from_rotated(const ReflectorStack& stack, const DecoupledState& s);

// Rotate a plain vector: Q^T n (forward) or Q n (inverse).
Vec rotate_forward(const ReflectorStack& stack, const Vec& n);
Vec rotate_inverse(const ReflectorStack& stack, const Vec& n);

}  // namespace imd
