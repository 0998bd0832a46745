#include "hdib/util.hpp"

#include <cstdio>

namespace hdib {

MetricFactor MetricFactor::make(const Mat& M) {
  Eigen::LLT<Mat> llt(M);
  if (llt.info() != Eigen::Success)
    throw NotPositive("Gram matrix is not positive definite");
  MetricFactor f;
  f.R = llt.matrixU();
  f.Rinv = f.R.triangularView<Eigen::Upper>().solve(
      Mat::Identity(M.rows(), M.cols()));
  return f;
}

MetricEigs metric_self_adjoint_eigs(const Mat& A, const MetricFactor& mf) {
  // S = R A R^{-1} is Hermitian when M A = A^H M; symmetrize to kill rounding.
  Mat S = mf.R * A * mf.Rinv;
  S = 0.5 * (S + Mat(S.adjoint()));
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  if (es.info() != Eigen::Success)
    throw LabError("metric_self_adjoint_eigs: eigensolver failed");
  MetricEigs out;
  out.values = es.eigenvalues();
  out.vectors = mf.Rinv * es.eigenvectors();
  return out;
}

Vec metric_min_norm_solve(const Mat& A, const Vec& b, const MetricFactor& dom,
                          const MetricFactor& cod, double rank_tol) {
  // Orthonormal coordinates: At = Rc A Rd^{-1}, bt = Rc b; minimal Euclidean
  // norm least squares via complete orthogonal decomposition.
  Mat At = cod.R * A * dom.Rinv;
  Vec bt = cod.R * b;
  Eigen::CompleteOrthogonalDecomposition<Mat> cod_dec(At);
  cod_dec.setThreshold(rank_tol);
  Vec xt = cod_dec.solve(bt);
  return dom.Rinv * xt;
}

std::string fmt_sci(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*e", digits, x);
  return buf;
}

std::string fmt_cplx(cplx z, int digits) {
  return fmt_sci(z.real(), digits) + (z.imag() < 0 ? "-" : "+") +
         fmt_sci(std::abs(z.imag()), digits) + "i";
}

}  // namespace hdib
