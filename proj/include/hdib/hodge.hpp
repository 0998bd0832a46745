// Weighted Hodge theory on the fiber: Grams, adjoints, Laplacians, harmonic
// projection, minimal dbar-solves, the pointwise Hodge star, and the inverse
// of the curvature commutator [T^, Lambda] -- everything downstream curvature
// work needs from the fixed-fiber elliptic theory.
//
// The weight is a pointwise positive field W = (volume density) * e^{-phi}
// together with per-factor conformal metric scales g_a > 0; inner products of
// component forms add a 1/g_a frame factor per dz- and per dzbar-leg.  All
// operators are Galerkin matrices in the exact spectral basis: dbar and the
// background part of the (1,0) Chern derivative are exact ladder actions,
// adjoints are Gram conjugations, so dbar^2 = 0 and adjointness hold to
// rounding regardless of the weight.
#pragma once

#include <map>
#include <memory>
#include <vector>

#include "hdib/torus.hpp"

namespace hdib {

// n = 1 weight data on the (joint = factor) grid.  dlogw[a] is the extra
// (1,0) log-derivative of the weight against the background, i.e. -phi_{z_a};
// leave empty for weights with no z-dependence beyond the background.
struct SectionWeight {
  RVec wtot;                  // volume density * e^{-phi}
  std::vector<RVec> gscale;   // fiber metric scale per factor
  std::vector<Vec> dlogw;     // optional, per factor
};

class WeightedHodge {
 public:
  // general pointwise weight; n = 1 only
  WeightedHodge(const FiberCalculus& X, SectionWeight w);
  // separable weight given per factor grid; any n, no dlogw corrections
  WeightedHodge(const FiberCalculus& X, std::vector<RVec> wfac,
                std::vector<RVec> gfac);

  const FiberCalculus& fiber() const { return *X_; }
  bool separable() const { return separable_; }
  const SectionWeight& weight() const { return w_; }

  // --- inner products -----------------------------------------------------
  const Mat& gram(int comp) const;          // cached per algebra component
  Mat gram_pq(int p, int q) const;          // block diagonal over components
  cplx inner(const CoefForm& u, const CoefForm& v) const;
  double norm(const CoefForm& u) const;

  // stacked coefficient layout, component order = comps_of_bidegree(p, q)
  Vec pack(const CoefForm& u) const;
  CoefForm unpack(int p, int q, const Vec& x) const;

  // --- operators ------------------------------------------------------------
  Mat dbar_matrix(int p, int q) const;      // (p,q) -> (p,q+1), exact
  Mat dE_matrix(int p, int q) const;        // (p,q) -> (p+1,q), background exact
                                            // + weighted correction from dlogw
  Mat dbar_adjoint(int p, int q) const;     // (p,q+1) -> (p,q) w.r.t. the Grams
  Mat laplacian(int p, int q) const;        // dbar* dbar + dbar dbar*

  struct HarmonicSpace {
    Mat basis;     // columns, Gram-orthonormal, packed layout
    RVec eigs;     // full Laplacian spectrum (ascending)
    double gap = 0.0;  // smallest nonzero / largest kernel residue
    int dim = 0;
  };
  // cached; throws AmbiguousKernel when the spectrum has no clean cut
  const HarmonicSpace& harmonic(int p, int q) const;
  CoefForm harmonic_project(const CoefForm& u) const;
  // minimal-norm a at (p,q) with dbar a = rhs, rhs at (p,q+1) (in the image)
  CoefForm dbar_minimal_solve(const CoefForm& rhs) const;

  // --- pointwise geometry (n = 1 unless noted) -------------------------------
  RVec comp_weight(int c) const;            // wtot * frame factors, no quadrature
  const Mat& eval_comp(int c) const;        // grid evaluation of the comp basis
  // weighted L2 projection of grid values onto the coefficient basis
  CoefForm grid_project(int p, int q, const GridForm& vals) const;
  CoefForm star(const CoefForm& u) const;   // pointwise star, then projection

  // Solve ([T^, Lambda] + eps) v = u pointwise on an (n, q+1) grid form.
  // theta[a*n + b] is the component field of T = i sum theta_ab dz_a^dzbar_b
  // (Hermitian in (a,b)).  Throws SingularCommutator listing offending points.
  GridForm commutator_solve(const GridForm& u, const std::vector<Vec>& theta,
                            double eps) const;

 private:
  void init_factor_weights();
  const MetricFactor& gram_factor(int p, int q) const;

  const FiberCalculus* X_;
  SectionWeight w_;         // n = 1 path (joint grid fields)
  bool separable_ = false;
  std::vector<RVec> wfac_, gfac_;  // separable path (factor grid fields)

  mutable std::map<int, Mat> gram_cache_;
  mutable std::map<int, Mat> eval_cache_;
  mutable std::map<int, HarmonicSpace> harm_cache_;
  mutable std::map<int, std::unique_ptr<MetricFactor>> mf_cache_;
};

}  // namespace hdib
