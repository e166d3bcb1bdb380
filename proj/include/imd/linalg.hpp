#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace imd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Side { Left, Right };

struct DegeneracyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// (I - 2 v v^T) M  or  M (I - 2 v v^T), without forming the reflector.
// v must be a unit vector (checked to 1e-12).
Mat householder_apply(const Vec& v, const Mat& M, Side side);

// Dense Householder QR with a per-column sign convention on diag(R).
// sign_convention[i] = +1 or -1 selects sign(R(i,i)).
// Throws DegeneracyError when a pivot column has norm < 1e-13.
void qr_oracle(const Mat& M, const std::vector<int>& sign_convention, Mat& Q,
               Mat& R);

// Real parts of all eigenvalues of a square matrix, sorted descending.
// Diagnostic path only (spectrum inspection, GapData estimation).
std::vector<double> eig_real_parts(const Mat& M);

}  // namespace imd
