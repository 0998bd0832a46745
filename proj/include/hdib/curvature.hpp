// Term-by-term geometric curvature of the harmonic direct-image bundle at the
// family center (one fiber dimension, top fiber form degree p = 1, q in
// {0,1}).  For center-harmonic sections u, v and horizontal lifts
// V_j = d/dt_j + nu_j d/dz of the parameter directions, the curvature pairing
// decomposes into fiber integrals:
//
//   (Theta_{jk} u, v) = (b_j u, b_k v) - (a_j u, a_k v)
//                     + (theta(V_j, Vbar_k) u, v)
//                     + (dE delta_{[V_j, Vbar_k]} u, v)
//                     + (abar_k u, abar_j v)
// with
//   L_j u    = dE(nu_j (dz -| u)) + dS_j u - phi_j u     lifted weight derivative
//   a_j u    = (H - 1) L_j u                             harmonic defect
//   b_j u    = (dzbar nu_j) dzbar ^ (dz -| u)            lift shear
//   abar_k u = dbar(conj(nu_k) (dzbar -| u)) + dSbar_k u
//   c_j u    = (theta_{j zbar} + nu_j theta_{z zbar}) dzbar ^ u
//
// where dS_j, dSbar_k are the frame derivatives of the harmonic representative
// family and theta_{..} the total-space curvature densities of the weight.
// The bracket term splits against the Schur base density c_{jk} = <V_j, V_k>
// into a curvature part and a manifestly semipositive part ("A + Nak"), and
// the defect norm ||a||^2 obeys the commutator-inverse energy bound
// C_eps = ((Q_eps)^{-1} c, c), computed here through two independent code
// paths (generic commutator solve vs. dual-representative pointwise algebra).
// The regularized slack  I_eps = A + B + eps*cmass - C_eps  is also evaluated
// as one manifestly-signed total-space pairing, which is the quantity the
// q-semipositivity gate controls.
//
// Everything is assembled as r x r matrices per parameter pair (j,k) so the
// result can be cross-checked entry-by-entry against the exact-insert and
// finite-difference routes of DirectImageBundle.
#pragma once

#include <vector>

#include "hdib/bundle.hpp"

namespace hdib {

class CurvatureAssembly {
 public:
  struct Options {
    double eps = 1e-2;  // regularization of the commutator inverse
  };

  explicit CurvatureAssembly(const DirectImageBundle& bundle);
  CurvatureAssembly(const DirectImageBundle& bundle, Options opt);

  int rank() const { return r_; }
  int pars() const { return m_; }
  double eps() const { return opt_.eps; }

  // r x r blocks per parameter pair, index j*m + k; entry (beta, alpha) is the
  // term's contribution to (Theta_{jk} e_alpha, e_beta).
  struct Terms {
    std::vector<Mat> bb;    // (b_j u, b_k v)
    std::vector<Mat> aa;    // (a_j u, a_k v), enters with minus sign
    std::vector<Mat> mid;   // (theta(V_j, Vbar_k) u, v)
    std::vector<Mat> key;   // (dE delta_{[V_j, Vbar_k]} u, v), direct route
    std::vector<Mat> gri;   // (abar_k u, abar_j v)
    std::vector<Mat> A_blk, nak_blk;  // bracket split (zero at q = 0)
    std::vector<Mat> cmass;           // (c_{jk} u, v) base-density mass
    std::vector<Mat> P;               // assembled geometric pairing
  };
  const Terms& terms() const { return terms_; }
  Mat nakano() const;  // big Hermitian form of the geometric route

  // Residuals of identities that hold in the continuum theory; all relative
  // to the scale of the fields involved.  Galerkin truncation is the only
  // error source, so they shrink with resolution.
  struct Contracts {
    double dbar_star_a = 0;    // adjoint-closedness of every a_j e_alpha
    double chain = 0;          // dbar a = dE b + c           (q = 0)
    double a_top = 0;          // a vanishes at top degree    (q = 1)
    double minimal_match = 0;  // a vs minimal-solve of its dbar image (q = 0)
    double key_split = 0;      // direct bracket term vs A + Nak
    double pair_symmetry = 0;  // P_{jk}^H = P_{kj}
  };
  Contracts contracts() const;

  // Tuple evaluation u_j = sum_alpha Xi(alpha, j) e_alpha of the assembled
  // form, the energy bound, and the gate-controlled slack.
  struct Excess {
    double b_norm2 = 0, a_norm2 = 0;
    double A_term = 0, B_term = 0, nak = 0, gri = 0, cmass = 0;
    double C_direct = 0;      // ((Q_eps)^{-1} c, c), commutator-solve route
    double C_dual = 0;        // dual-representative route
    double I_eps = 0;         // A + B + eps*cmass - C_eps
    double I_pointwise = 0;   // same through the total-space pairing
    double I_min_density = 0; // pointwise minimum of that integrand
    double R_eps = 0;         // C_eps + ||b||^2 - ||a||^2
    double theta_form = 0;    // sum (Theta_{jk} u_j, u_k), assembled route
  };
  Excess excess(const Mat& Xi) const;

 private:
  void build_geometry();
  void build_fields();
  void build_terms();
  // weighted pairing with a pointwise complex density over the fiber
  cplx density_inner(const GridForm& u, const GridForm& v,
                     const Vec& dens) const;
  // eps-regularized gate form  omega_q ^ i Theta + eps omega_{q+1}  paired
  // against the corrected dual representative of the tuple, pointwise
  void pointwise_gate_pairing(const Mat& Xi, const std::vector<Vec>& sigma,
                              Excess& out) const;

  const DirectImageBundle* b_;
  const FiberCalculus* X_;
  const WeightedHodge* wh_;
  Options opt_;
  int m_, r_, q_;
  long np_;
  double qw_;

  // center geometry fields
  RVec gfib_, wtot_, theta_zz_;
  std::vector<Vec> phi_j_, theta_jz_, nu_, nu_zb_, nu_z_;
  std::vector<Vec> theta_jk_, cden_, wz_, dwz_;  // per pair, k fastest
  std::vector<Vec> mid_den_;               // theta(V_j, Vbar_k) density
  Vec phi_z0_;                             // z-derivative of the extra weight
  Vec gzb_;                                // d_zbar of the fiber metric scale

  // per-alpha grid data for the harmonic frame
  std::vector<GridForm> ug_;   // harmonic sections
  std::vector<GridForm> cug_;  // dz -| u
  std::vector<Vec> sgrid_, dsgrid_;  // *u and dbar *u components (q = 1)
  std::vector<Vec> Dzf_, Dbf_;  // connection/antiholomorphic ladder derivative
                                // grids of the distinguished fiber component
  // per (j, alpha) fields: grid forms for pointwise work, packed coefficient
  // vectors for Galerkin inners
  std::vector<std::vector<Vec>> Lf_, af_, bf_, abarf_, cf_;
  std::vector<std::vector<Vec>> af_gal_;  // Galerkin-route defect (contracts)
  std::vector<std::vector<Vec>> abarg_;  // incoming-dbar top component grids
  std::vector<std::vector<GridForm>> cg_, bgr_;

  Terms terms_;
};

// Positivity verdicts from pairing matrices (any route): minimal eigenvalue
// of the big Hermitian form against Id (x) gram (Nakano sense) and minimal
// direction value over a unit-direction net (Griffiths sense), plus the
// spectral scale used for relative tolerances.
struct PositivityVerdict {
  double nakano_min = 0;
  double griffiths_min = 0;
  double scale = 0;
};
PositivityVerdict positivity_verdict(const std::vector<Mat>& P,
                                     const Mat& gram, int m, int r,
                                     int xi_net = 32);

// Bundle of *all* truncated dbar-closed (p,q)-forms over a product family
// (untwisted flat fiber metric): the kernel basis is a global frame, the
// metric comes from the weight alone, and curvature follows by exact diagonal
// inserts.  The finite model satisfies, exactly in the truncation,
//     sum (Theta_{jk} u_j, u_k) = sum (phi_{jk} u_j, u_k) - ||(1 - proj) w||^2
// with w = -sum phi_j u_j and proj the weighted projection onto the kernel
// space -- the quantity the q-semipositivity gate makes nonnegative.
class ClosedFormsBundle {
 public:
  ClosedFormsBundle(const FiberCalculus& X, const FamilyWeight& w, int p,
                    int q);

  int rank() const { return int(K_.cols()); }
  int pars() const { return m_; }
  const WeightedHodge& center_hodge() const { return *wh_; }
  const Mat& kernel_basis() const { return K_; }  // packed columns

  Mat metric(const std::array<cplx, kMaxPars>& t) const;
  Mat d_metric(int j) const;
  Mat dbar_metric(int k) const;
  Mat dd_metric(int j, int k) const;
  Mat curvature_pairing(int j, int k) const;  // same convention as the bundle
  std::vector<Mat> pairing_all() const;
  Mat nakano() const;

  // residual of the exact finite-model identity for the given tuple,
  // relative to the larger of the two sides
  double identity_residual(const Mat& Xi) const;

 private:
  Mat gram_insert(const Vec& dens) const;  // K^H E^H diag(qw dens W0) E K

  const FiberCalculus* X_;
  const FamilyWeight* w_;
  int p_, q_, m_, comp_;
  long np_;
  double qw_, gflat_;
  std::optional<WeightedHodge> wh_;
  Mat E_, K_;
  RVec W0_;
  std::vector<Vec> phi_j_, phi_jk_;
};

}  // namespace hdib
