#include "imd/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace imd {

Mat householder_apply(const Vec& v, const Mat& M, Side side) {
  if (std::abs(v.norm() - 1.0) > 1e-12)
    throw std::invalid_argument("householder_apply: v is not a unit vector");
  if (side == Side::Left) {
    if (v.size() != M.rows())
      throw std::invalid_argument("householder_apply: dimension mismatch");
    Mat out = M;
    Eigen::RowVectorXd vtM = v.transpose() * M;
    out.noalias() -= 2.0 * v * vtM;
    return out;
  }
  if (v.size() != M.cols())
    throw std::invalid_argument("householder_apply: dimension mismatch");
  Mat out = M;
  Vec Mv = M * v;
  out.noalias() -= 2.0 * Mv * v.transpose();
  return out;
}

void qr_oracle(const Mat& M, const std::vector<int>& sign_convention, Mat& Q,
               Mat& R) {
  const Eigen::Index n = M.rows();
  if (M.cols() != n) throw std::invalid_argument("qr_oracle: M must be square");
  if (static_cast<Eigen::Index>(sign_convention.size()) != n)
    throw std::invalid_argument("qr_oracle: sign convention length mismatch");

  Eigen::HouseholderQR<Mat> qr(M);
  Q = qr.householderQ();
  R = qr.matrixQR().triangularView<Eigen::Upper>();

  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(R(i, i)) < 1e-13)
      throw DegeneracyError("qr_oracle: rank-deficient column " +
                            std::to_string(i));
    const double want = sign_convention[i] >= 0 ? 1.0 : -1.0;
    if (R(i, i) * want < 0.0) {
      R.row(i) = -R.row(i);
      Q.col(i) = -Q.col(i);
    }
  }
}

std::vector<double> eig_real_parts(const Mat& M) {
  if (M.rows() != M.cols())
    throw std::invalid_argument("eig_real_parts: M must be square");
  Eigen::EigenSolver<Mat> es(M, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eig_real_parts: eigen iteration failed");
  std::vector<double> re(M.rows());
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    re[i] = es.eigenvalues()[i].real();
  std::sort(re.begin(), re.end(), std::greater<double>());
  return re;
}

}  // namespace imd
