// Kodaira-Spencer classes and the dual-norm (Weil-Petersson style) metric for
// the family of flat complex tori over a square grid of moduli parameters in
// the upper half-plane.  The underlying real torus (x, y) in [0,1)^2 stays
// fixed; the complex structure is the frame z_tau = x + tau y, so the family
// is closed-form in tau and every fiber carries the area-normalized flat
// Kaehler form.  In the frame dzbar (x) d/dz a harmonic tangent-valued
// (0,1)-class has constant coefficient, which keeps every step of the
// pipeline an honest quadrature:
//
//   * class extraction: the horizontal lift of d/dtau is the coordinate
//     vector at frozen (x, y); its vertical part is y d/dz, so the class
//     representative is [dbar(y) + dbar(correction)] dzbar (x) d/dz.  A
//     vertical correction (any periodic field w d/dz) changes the
//     representative by an exact term only; the harmonic coefficient is the
//     flat-volume mean and is lift-independent.
//   * metric: the squared norm of the class is computed as a *dual* norm,
//     pairing against the one-dimensional space of holomorphic quadratic
//     differentials phi dz (x) dz through the conjugation-free wedge integral
//     and inverting the Gram matrix of that frame (the code handles a frame
//     of any finite dimension).
//   * plurisubharmonicity: discrete complex Hessian of log |d/dtau|_WP on the
//     parameter grid via the nine-point stencil.
#pragma once

#include <vector>

#include "hdib/util.hpp"

namespace hdib {

// Which family lives over the parameter grid: "modular" varies the complex
// structure (z_tau = x + tau y), "product" freezes it at the grid center so
// the Kodaira-Spencer class vanishes identically.
enum class FamilyKind { modular, product };

struct ModularSpec {
  FamilyKind kind = FamilyKind::modular;
  cplx center{0.0, 2.0};  // grid center tau_0, Im tau_0 > 0
  double step = 0.01;     // grid spacing along both real axes of tau
  int half = 4;           // grid is (2 half + 1)^2 nodes, half >= 2
  double area = 1.0;      // symplectic area of the fiber (flat form A dx^dy)
  int resolution = 32;    // fiber grid is resolution^2 points
};

// Kodaira-Spencer data of dir * d/dtau at one parameter value.
struct KSClass {
  cplx tau{0.0, 1.0};
  cplx coef = 0.0;      // harmonic coefficient in the dzbar (x) d/dz frame
  Vec rep;              // representative on the fiber grid (coef + exact part)
  double energy = 0.0;  // squared fiber L2 norm of rep; >= squared dual norm
};

// Per-node Weil-Petersson table over the parameter grid (row-major, real
// direction fastest).
struct WpReport {
  std::vector<cplx> tau;
  std::vector<double> g_wp;   // squared dual norm of the class of d/dtau
  std::vector<double> bound;  // lift energy; g_wp <= bound pointwise
  double bound_slack = 0.0;   // min(bound - g_wp) over the grid
  bool hypothesis_ok = false; // fiberwise semipositivity of the curvature of
                              // the induced metric on the relative cotangent
};

// Result of the plurisubharmonicity certificate for log |d/dtau|_WP.
struct PshReport {
  bool ok = false;
  bool minus_infinity = false;  // degenerate branch: g_wp vanishes identically
  double min_hess = 0.0;        // smallest discrete complex Hessian value
  long arg = -1;                // interior node index attaining the minimum
  std::vector<double> hess;     // interior table, (side-2)^2 entries
};

// Holomorphy diagnostics of tau -> wedge pairing of the class against the
// holomorphic frame dz_tau (x) dz_tau of quadratic differentials.
struct HolomorphyReport {
  double residual = 0.0;      // max |dbar_fd pairing| / max |pairing|
  std::vector<cplx> pairing;  // full grid table
};

class ModularFamily {
 public:
  explicit ModularFamily(const ModularSpec& spec);

  const ModularSpec& spec() const { return spec_; }
  int side() const { return 2 * spec_.half + 1; }
  long nodes() const { return long(side()) * side(); }
  cplx tau_at(long idx) const;  // idx = iu + side*iv, tau = center + step*((iu-half) + i(iv-half))

  // area-normalized flat fiber metric coefficient g = A / (2 Im tau)
  double fiber_metric(cplx tau) const { return spec_.area / (2.0 * tau.imag()); }

  // Kodaira-Spencer class of dir * d/dtau with the horizontal lift plus an
  // optional vertical correction w d/dz (grid samples, p = i + resolution*j,
  // x = i/resolution, y = j/resolution).  The correction is differentiated
  // with fourth-order periodic stencils.
  KSClass ks_class(cplx tau, cplx dir = 1.0, const Vec* correction = nullptr) const;

  // conjugation-free wedge pairing of the class against the quadratic
  // differential frame dz (x) dz:  integral of rep * 1 dz^dzbar
  cplx frame_pairing(const KSClass& k) const;

  // squared dual norm through pairing-vector / Gram-matrix inversion
  double dual_norm2(const KSClass& k) const;

  // assemble the per-node table; the optional correction exercises the
  // dual-norm <= lift-energy bound strictly
  WpReport wp_metric(const Vec* correction = nullptr) const;

  // discrete complex Hessian certificate on log |d/dtau|_WP
  PshReport psh_check(const WpReport& data, double tol) const;

  // dbar residual over the parameter grid of the frame pairing
  HolomorphyReport holomorphy_check(const Vec* correction = nullptr) const;

 private:
  ModularSpec spec_;
  // fourth-order periodic x / y derivatives on the fiber grid
  Vec fiber_dx(const Vec& f) const;
  Vec fiber_dy(const Vec& f) const;

  friend bool relative_cotangent_semipositive(const ModularFamily& fam, double tol);
};

// Hypothesis gate feeding WpReport::hypothesis_ok: the flat fiber metric on
// the relative cotangent bundle has identically vanishing curvature, checked
// through the general commutator-positivity machinery at q = 0.
bool relative_cotangent_semipositive(const ModularFamily& fam, double tol = 1e-12);

}  // namespace hdib
