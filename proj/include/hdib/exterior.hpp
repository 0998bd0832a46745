// Pointwise exterior algebra over k complex directions ("legs"): all wedge /
// interior-product / conjugation sign bookkeeping in one place, so the Hodge
// star, Lefschetz splitting and every curvature contraction share a single
// convention.  A component is a pair of bitmasks (S,T) standing for the
// canonical monomial dz^{S asc} ^ dzbar^{T asc}.
#pragma once

#include <bit>
#include <vector>

#include "hdib/util.hpp"

namespace hdib {

class LegAlgebra {
 public:
  explicit LegAlgebra(int legs);

  int legs() const { return k_; }
  int comps() const { return ncomp_; }  // 4^legs
  int comp_id(unsigned S, unsigned T) const {
    return int(S) | (int(T) << k_);
  }
  unsigned s_mask(int c) const { return unsigned(c) & ((1u << k_) - 1u); }
  unsigned t_mask(int c) const { return unsigned(c) >> k_; }
  int p_of(int c) const { return std::popcount(s_mask(c)); }
  int q_of(int c) const { return std::popcount(t_mask(c)); }

  struct Signed {
    int comp = -1;
    int sign = 0;  // 0 means the product vanishes
  };

  Signed wedge(int c1, int c2) const { return wtab_[size_t(c1) * ncomp_ + c2]; }
  // interior product with the (1,0) coordinate vector of leg a (pairs dz^a)
  Signed contract_dz(int a, int c) const { return ctab_z_[a][c]; }
  // interior product with the (0,1) coordinate vector of leg a (pairs dzbar^a)
  Signed contract_dzbar(int a, int c) const { return ctab_zb_[a][c]; }
  // conj(dz^S ^ dzbar^T) = sign * dz^T ^ dzbar^S
  Signed conj(int c) const { return conj_[c]; }

  std::vector<int> comps_of_bidegree(int p, int q) const;

  // Parity sign of sorting the concatenated leg list [dz legs of c1][dzbar
  // legs of c1][dz legs of c2]... into canonical order; exposed for tests.
  static int merge_sign(unsigned S1, unsigned T1, unsigned S2, unsigned T2,
                        int legs);

 private:
  int k_;
  int ncomp_;
  std::vector<Signed> wtab_;
  std::vector<std::vector<Signed>> ctab_z_, ctab_zb_;
  std::vector<Signed> conj_;
};

// Constant-coefficient form in a LegAlgebra: one complex coefficient per
// component.  This is what pointwise kernels manipulate at a single grid
// point; fields hold one of these per point (stored structure-of-arrays).
struct AlgElem {
  std::vector<cplx> c;  // size alg.comps()
  explicit AlgElem(const LegAlgebra& a) : c(a.comps(), cplx(0.0)) {}
  AlgElem() = default;
};

AlgElem wedge(const LegAlgebra& a, const AlgElem& u, const AlgElem& v);
AlgElem conj_form(const LegAlgebra& a, const AlgElem& u);
// interior product with vector sum_a (vz[a] d/dz_a + vzb[a] d/dzbar_a)
AlgElem contract(const LegAlgebra& a, const std::vector<cplx>& vz,
                 const std::vector<cplx>& vzb, const AlgElem& u);

// ---------------------------------------------------------------------------
// Metric block: Hodge star and Lefschetz machinery for a *diagonal* Kaehler
// form  omega = i sum_a g_a dz^a ^ dzbar^a  (g_a > 0).  Everything is built
// in the orthonormal coframe eps^a = sqrt(g_a) dz^a, where the operators have
// constant matrices, then conjugated by the per-component diagonal scaling.
// The star is the C-linear one fixed by  u ^ conj(*v) = <u,v> vol.
// ---------------------------------------------------------------------------
class DiagonalHodge {
 public:
  DiagonalHodge(const LegAlgebra& alg, std::vector<double> g);

  const LegAlgebra& alg() const { return *alg_; }
  const std::vector<double>& g() const { return g_; }

  // pointwise inner product of two forms
  cplx inner(const AlgElem& u, const AlgElem& v) const;
  AlgElem star(const AlgElem& u) const;
  AlgElem wedge_omega(const AlgElem& u) const;              // omega ^ u
  AlgElem wedge_omega_pow(int r, const AlgElem& u) const;   // (omega^r / r!) ^ u
  AlgElem lambda(const AlgElem& u) const;                   // adjoint of omega^

  // Lefschetz split of a (p,q) form: u = sum_r (omega^r / r!) ^ u_r with
  // every u_r primitive.  Returns u_r indexed from r = 0.
  std::vector<AlgElem> lefschetz_split(int p, int q, const AlgElem& u) const;

  // Dual representative *u computed through the primitive decomposition:
  //   *u = sum_r C_{p,q,r} (omega^{n+r-p-q}/(n+r-p-q)!) ^ u_r,
  //   C_{p,q,r} = i^{(p+q-2r)^2} (-1)^{p-r} (the sl2 route; must agree with
  // star(), which the tests pin down).
  AlgElem star_via_lefschetz(int p, int q, const AlgElem& u) const;

  // coefficient of the volume form on the top component in the orthonormal
  // coframe (a unit-modulus complex number, i^{n^2}-like)
  cplx vol_top() const { return vol_; }

 private:
  const LegAlgebra* alg_;
  std::vector<double> g_;
  cplx vol_;
  // component scale from dz-frame to orthonormal frame: prod sqrt(g) over legs
  std::vector<double> to_ortho_;
  std::vector<cplx> star_gamma_;  // per component, in orthonormal frame
  std::vector<int> star_comp_;
  Mat lmat_;  // omega^ in orthonormal frame (constant)
};

}  // namespace hdib
