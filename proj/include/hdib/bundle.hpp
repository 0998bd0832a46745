// Direct-image bundle over the parameter ball: the fixed cohomology space
// H^{p,q} of the fiber complex carries the family of inner products induced
// by the parameter-dependent weight (and twisted fiber metric).  Constant
// cohomology classes form a holomorphic frame; the metric in that frame is
// the Gram matrix of the harmonic representatives,
//     A(t) = S(t)^H G(t) S(t),   S(t) = U - Dm (Dm-range solve)(G(t), U),
// with U the center harmonic basis and Dm the incoming dbar.  Because the
// frame variation is dbar-exact, first metric derivatives need no frame
// correction and second derivatives need exactly one:
//     d_j A        = S^H (d_j G) S
//     d_j dbar_k A = S^H (dd G) S + (dbar_k S)^H (d_j G) S + S^H (d_j G) (dbar_k S)
// where every Gram derivative is an exact diagonal insert built from the
// closed-form parameter derivatives of log W.  The finite-difference oracle
// route touches nothing but metric(t).
#pragma once

#include <array>
#include <optional>
#include <vector>

#include "hdib/family.hpp"
#include "hdib/hodge.hpp"
#include "hdib/torus.hpp"

namespace hdib {

class DirectImageBundle {
 public:
  struct Options {
    double cond_limit = 1e12;  // metric/normal-solve conditioning guard
    double rank_tol = 1e-10;   // dbar column-space cut for the range basis
  };

  // geom may be null (flat untwisted fiber metric); when present, its twist
  // deforms the fiber scale entering volume and frame factors.
  DirectImageBundle(const FiberCalculus& X, const FamilyWeight& w,
                    const TotalKahler* geom, int p, int q);
  DirectImageBundle(const FiberCalculus& X, const FamilyWeight& w,
                    const TotalKahler* geom, int p, int q, Options opt);

  int rank() const { return rank_; }
  int pars() const { return m_; }
  int form_p() const { return p_; }
  int form_q() const { return q_; }
  const FiberCalculus& fiber() const { return *X_; }
  const WeightedHodge& center_hodge() const { return *wh0_; }
  const Mat& center_frame() const { return U_; }  // packed harmonic columns
  const FamilyWeight& weight_family() const { return *w_; }
  const TotalKahler* geometry() const { return geom_; }  // may be null

  // fiber Gram of the (p,q) coefficient space at parameter t
  Mat fiber_gram(const std::array<cplx, kMaxPars>& t) const;
  // harmonic representatives of the constant classes at t (packed columns)
  Mat frame(const std::array<cplx, kMaxPars>& t) const;
  // bundle metric in the constant-class frame; throws FrameDegenerate when a
  // solve or the metric itself is ill-conditioned
  Mat metric(const std::array<cplx, kMaxPars>& t) const;

  // --- exact-insert derivative route at the center -------------------------
  Mat d_metric(int j) const;         // d_{t_j} A |_0
  Mat dbar_metric(int k) const;      // d_{tbar_k} A |_0
  Mat dd_metric(int j, int k) const; // d_{t_j} d_{tbar_k} A |_0
  // d_{tbar_k} S |_0: packed columns, exactly dbar-exact
  Mat frame_dbar_derivative(int k) const;
  // d_{t_j} S |_0: same range solve against the holomorphic insert
  Mat frame_d_derivative(int j) const;
  // curvature pairing P_{jk} with (Theta_{jk} e_a, e_b) = (P_{jk})_{ba}:
  //     P_{jk} = (dbar_k A) A^{-1} (d_j A) - d_j dbar_k A
  Mat curvature_pairing(int j, int k) const;

  // harmonic projection norm of the frame derivative relative to the frame
  // norm; the analytic route vanishes identically, the FD route at O(h^4)
  double holomorphy_residual(int k) const;
  double holomorphy_residual_fd(int k, double h) const;

  // --- finite-difference oracle route ---------------------------------------
  // 4th-order axis stencils, Richardson-improved corner stencils for mixed
  // parameter pairs; retries once at half step on FrameDegenerate.
  struct FdResult {
    std::vector<Mat> P;  // m*m pairings, index j*m + k
    double step = 0.0;
  };
  FdResult fd_curvature(double h) const;

  // Hermitian matrix on C^m (x) C^rank with block (j,k) equal to P[j*m+k]
  // transposed into row (j,beta), column (k,alpha) order
  static Mat nakano_matrix(const std::vector<Mat>& P, int m, int r);

 private:
  struct Assembled {
    Mat G;  // fiber Gram at t
    Mat S;  // harmonic frame at t
    Mat A;  // bundle metric at t
  };
  Assembled assemble(const std::array<cplx, kMaxPars>& t) const;
  RVec weight_field(const std::array<cplx, kMaxPars>& t) const;
  Mat gram_from_weight(const Vec& w) const;  // E^H diag(qw * w) E
  Mat range_correction(const Vec& insert) const;

  const FiberCalculus* X_;
  const FamilyWeight* w_;
  const TotalKahler* geom_;
  int p_, q_, m_, rank_, legs_;
  Options opt_;
  std::optional<WeightedHodge> wh0_;
  Mat E_;        // grid evaluation of the (p,q) coefficient basis
  Mat U_;        // center harmonic frame
  Mat Dm_;       // incoming dbar, (p,q-1) -> (p,q)
  Mat ZD_;       // Dm restricted to a basis of its coimage (independent cols)
  double qw_ = 0.0;

  // closed-form parameter-derivative fields of log W at the center, and the
  // center weight itself
  RVec W0_;
  std::vector<Vec> logW_j_;           // d_{t_j} log W
  std::vector<Vec> logW_jk_;          // d_{t_j} d_{tbar_k} log W, k fastest
};

}  // namespace hdib
