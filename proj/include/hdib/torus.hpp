// Fiber calculus on flat 2-torus factors E = C/(Z + tau Z), carrying a flat
// holomorphic line bundle of integer degree d per factor.
//
// Discretization: a quadrature-Galerkin spectral model.  Scalar sections are
// expanded in an exact structured basis per factor,
//   d = 0 : Fourier modes  e_{m,n}(x,y) = exp(2 pi i (m x + n y)) / sqrt(A),
//   d != 0: magnetic-oscillator (theta function) Landau levels psi_{k,s},
// so that dbar and the (1,0) Chern derivative D_z act as *exact* ladder /
// diagonal matrices, adjoints are Gram-conjugate transposes, dbar^2 = 0 holds
// to rounding, and kernel dimensions are exactly the sheaf-cohomology values
// at every truncation.  Evaluation matrices map coefficients to "physical
// amplitudes" f~ = f exp(-psi0/2) (background weight folded in) on an
// Nq x Nq trapezoid grid per factor, which is where all pointwise geometry
// (weights, twists, Hodge star) happens.
//
// Conventions, used everywhere downstream:
//   z = x + tau y,  x,y in [0,1);     dz ^ dzbar = -2 i tau2 dx ^ dy
//   d_z    = (d_y - taubar d_x) / (2 i tau2)
//   d_zbar = (tau d_x - d_y)   / (2 i tau2)
//   flat fiber metric: omega = i g dz ^ dzbar with g = A / (2 tau2)
//   background weight  psi0 = 2 pi d tau2 y^2,  B0 = pi |d| / tau2
//   inner products are (u,v) = integral <u,v> e^{-phi} dV, antilinear in v.
#pragma once

#include <utility>
#include <vector>

#include "hdib/exterior.hpp"
#include "hdib/util.hpp"

namespace hdib {

struct FactorGeometry {
  cplx tau{0.0, 1.0};
  double area = 1.0;
  int degree = 0;
};

struct FiberSpec {
  std::vector<FactorGeometry> factors;  // n in {1, 2}
  int resolution = 16;  // basis cut ~ resolution/2 per direction; Nq = 2*resolution
  int levels = 0;       // Landau level budget; 0 = auto (max(6, resolution/2))
  double kernel_rel_threshold = 1e-8;
  int n() const { return int(factors.size()); }
};

// One torus factor: bases for both "slot parities".  A component dz^S^dzbar^T
// uses, on factor a, the barred basis when a is in T, else the unbarred one;
// the level budgets differ by one so the chopped ladder keeps the exact
// kernel/cokernel dimensions of the continuum complex.
class FactorCalculus {
 public:
  FactorCalculus(const FactorGeometry& geo, int resolution, int levels);

  const FactorGeometry& geo() const { return geo_; }
  int points() const { return Nq_ * Nq_; }
  int nq() const { return Nq_; }
  int count(bool barred) const { return barred ? n_bar_ : n_unbar_; }
  double b0() const { return B0_; }
  double tau2() const { return tau2_; }
  double flat_g() const { return geo_.area / (2.0 * tau2_); }

  const Mat& eval(bool barred) const { return barred ? eval_bar_ : eval_unbar_; }
  const Mat& dbar() const { return dbar_; }  // unbarred -> barred coefficients
  const Mat& dE(bool barred) const { return barred ? dE_b_ : dE_u_; }
  // dbar as an endomorphism of one parity's coefficient space (exact ladder
  // action on the stored basis; content pushed past the top stored level is
  // dropped).  Lets callers differentiate an in-basis section pointwise on
  // the grid before any product is formed, instead of projecting a product
  // back into the truncated basis first.
  const Mat& dbar_within(bool barred) const {
    return barred ? dbar_w_b_ : dbar_w_u_;
  }

  const RVec& xs() const { return xs_; }
  const RVec& ys() const { return ys_; }
  Vec zvals() const;

  // Gram of the (barred?) basis against pointwise weight W >= 0 (W contains
  // volume density, e^{-phi} and frame factors; quadrature weights added
  // here).  d = 0 uses exact Toeplitz assembly in mode space.
  Mat gram(bool barred, const RVec& W) const;

  // Matrix of the quadrature pairing  E_row^H diag(qw * W) E_col  between
  // parities (used for weighted projections and operator assembly).
  Mat pairing(bool barred_row, bool barred_col, const RVec& W) const;

  // Lattice-gauge holonomy: sum of plaquette phases of the background
  // connection in the unitary gauge, divided by 2 pi.  Integer == -degree
  // orientation checks happen in tests; returns the signed winding.
  double flux_winding() const;

  // structural cohomology count of the factor, flat complex: h^q(L_d)
  int h_structural(int q) const;

  // Fourier mode list (d = 0 only), index-aligned with the basis.
  const std::vector<std::pair<int, int>>& modes() const { return modes_; }

  int landau_levels(bool barred) const;  // level count (d != 0)

 private:
  void build_fourier();
  void build_landau();

  FactorGeometry geo_;
  int N_, Nq_, K_, dd_, sgn_;
  double tau2_, B0_;
  int n_unbar_ = 0, n_bar_ = 0;
  Mat eval_unbar_, eval_bar_;
  Mat dbar_, dE_u_, dE_b_;
  Mat dbar_w_u_, dbar_w_b_;
  RVec xs_, ys_;
  std::vector<std::pair<int, int>> modes_;
};

// A (p,q)-form on the fiber in coefficient space: one coefficient vector per
// algebra component of that bidegree (others empty).
struct CoefForm {
  int p = 0, q = 0;
  std::vector<Vec> comp;
};

// The same in point space (values of all components on the joint grid).
struct GridForm {
  int p = 0, q = 0;
  std::vector<Vec> comp;
};

class FiberCalculus {
 public:
  explicit FiberCalculus(FiberSpec spec);

  const FiberSpec& spec() const { return spec_; }
  int n() const { return spec_.n(); }
  const LegAlgebra& alg() const { return alg_; }
  const FactorCalculus& factor(int a) const { return fac_[a]; }

  long npoints() const;
  double quad_weight() const;  // product of 1/Nq^2 per factor
  // joint grid coordinate of factor a at joint point index p
  double xs(int a, long p) const;
  double ys(int a, long p) const;

  int comp_size(int c) const;           // coefficient dimension of component c
  CoefForm zero_form(int p, int q) const;
  CoefForm random_form(int p, int q, Rng& rng) const;

  CoefForm apply_dbar(const CoefForm& u) const;
  CoefForm apply_dE(const CoefForm& u) const;

  GridForm eval(const CoefForm& u) const;

  // L2 pairing of grid forms against a pointwise Hermitian structure given by
  // per-factor conformal scales g[a](p) (fiber metric), total weight field
  // wtot(p) = volume density * e^{-phi}; frame factors computed per component.
  cplx grid_inner(const GridForm& u, const GridForm& v,
                  const std::vector<RVec>& g, const RVec& wtot) const;

  // expected harmonic dimension of H^{p,q} (Kuenneth over factors);
  // independent of weights, used as the structural oracle.
  int expected_dim(int p, int q) const;

  // flat factor scales as pointwise arrays (constants), convenience
  std::vector<RVec> flat_scales() const;
  RVec flat_weight() const;  // volume density, no e^{-phi}

 private:
  FiberSpec spec_;
  LegAlgebra alg_;
  std::vector<FactorCalculus> fac_;
};

// Apply a per-factor matrix stack to a coefficient vector laid out with
// factor 0 fastest: result = (A_{n-1} kron ... kron A_0) u, without forming
// the Kronecker product.
Vec kron_apply(const std::vector<const Mat*>& ops, const Vec& u);

}  // namespace hdib
