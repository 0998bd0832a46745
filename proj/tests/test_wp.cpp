// Kodaira-Spencer / dual-norm metric layer over the flat-torus modular
// family.  Oracles: the local-chart finite-difference extraction of the
// deformation class (differentiating the coordinate frame in the parameter,
// away from the seam of the multivalued vertical coordinate), the closed-form
// complex Hessian of -log Im tau, double-resolution quadrature, and step
// refinement ratios.
#include <cmath>
#include <complex>

#include "doctest.h"
#include "hdib/wp.hpp"

using namespace hdib;

namespace {

ModularSpec base_spec(cplx center = cplx(0.0, 2.0), int res = 32,
                      double step = 0.01, double area = 1.0) {
  ModularSpec s;
  s.center = center;
  s.step = step;
  s.half = 4;
  s.area = area;
  s.resolution = res;
  return s;
}

// smooth periodic vertical correction, deliberately not band-limited
cplx bump(double x, double y) {
  double a = std::exp(0.4 * std::cos(2.0 * PI * x) + 0.2 * std::sin(2.0 * PI * y));
  double b = std::exp(0.3 * std::cos(2.0 * PI * (x + y)));
  return 0.11 * a + cplx(0.0, 0.07) * b;
}

Vec sample_bump(int n) {
  Vec w(long(n) * n);
  for (long j = 0; j < n; ++j)
    for (long i = 0; i < n; ++i)
      w(i + long(n) * j) = bump(double(i) / n, double(j) / n);
  return w;
}

// Independent route to the class coefficient: in a local chart away from the
// vertical seam, differentiate the frame coordinate z_tau = x + tau y in tau
// (giving the vertical displacement field) and take its dbar.  Both steps use
// plain one-dimensional 4th-order stencils in local (not wrapped) variables.
cplx fd_beltrami_coef(cplx tau, double x, double y) {
  double h = 1e-3;
  auto vert = [&](double xx, double yy) {
    // d z_{tau'} / d tau' at tau' = tau, frozen real point
    auto z = [&](cplx tp) { return cplx(xx, 0.0) + tp * yy; };
    return (-z(tau + 2.0 * h) + 8.0 * z(tau + h) - 8.0 * z(tau - h) +
            z(tau - 2.0 * h)) /
           (12.0 * h);
  };
  double s = 1e-3;
  auto dx = [&](auto&& f) {
    return (-f(x + 2.0 * s, y) + 8.0 * f(x + s, y) - 8.0 * f(x - s, y) +
            f(x - 2.0 * s, y)) /
           (12.0 * s);
  };
  auto dy = [&](auto&& f) {
    return (-f(x, y + 2.0 * s) + 8.0 * f(x, y + s) - 8.0 * f(x, y - s) +
            f(x, y - 2.0 * s)) /
           (12.0 * s);
  };
  return (dy(vert) - tau * dx(vert)) / (-2.0 * I_UNIT * tau.imag());
}

}  // namespace

TEST_SUITE_BEGIN("wp");

TEST_CASE("horizontal class: closed form, linearity, lift independence") {
  ModularFamily fam(base_spec(cplx(0.0, 2.0), 32));

  for (cplx tau : {cplx(0.0, 2.0), cplx(0.0, 1.0), cplx(0.35, 1.7)}) {
    KSClass k = fam.ks_class(tau);
    // oracle: local-chart FD extraction at a few interior points
    cplx want = fd_beltrami_coef(tau, 0.31, 0.47);
    CHECK(std::abs(k.coef - want) < 1e-9);
    CHECK(std::abs(std::abs(k.coef) - 1.0 / (2.0 * tau.imag())) < 1e-13);
    // direction linearity
    cplx c(0.7, -0.3);
    KSClass kc = fam.ks_class(tau, c);
    CHECK(std::abs(kc.coef - c * k.coef) < 1e-13);
  }

  // changing the lift by a vertical correction leaves the harmonic
  // coefficient untouched and only adds exact-part energy
  Vec w = sample_bump(32);
  KSClass plain = fam.ks_class(cplx(0.0, 2.0));
  KSClass lifted = fam.ks_class(cplx(0.0, 2.0), 1.0, &w);
  CHECK(std::abs(lifted.coef - plain.coef) < 1e-12);
  CHECK(lifted.energy > plain.energy + 1e-4);
  // Serre-duality isometry: the pairing/Gram dual norm equals the direct
  // harmonic L2 norm  area * |coef|^2
  double direct = fam.spec().area * std::norm(plain.coef);
  CHECK(rel_diff(fam.dual_norm2(plain), direct) < 1e-12);
  // the lifted representative bounds the dual norm strictly from above
  CHECK(fam.dual_norm2(lifted) < lifted.energy - 1e-4);
}

TEST_CASE("product family: vanishing class and the minus-infinity branch") {
  ModularSpec s = base_spec();
  s.kind = FamilyKind::product;
  ModularFamily fam(s);

  Vec w = sample_bump(32);
  KSClass k = fam.ks_class(cplx(0.01, 2.01), 1.0, &w);
  CHECK(std::abs(k.coef) < 1e-15);

  WpReport rep = fam.wp_metric();
  for (double v : rep.g_wp) CHECK(v < 1e-25);
  PshReport psh = fam.psh_check(rep, 1e-8);
  CHECK(psh.ok);
  CHECK(psh.minus_infinity);

  HolomorphyReport hol = fam.holomorphy_check(&w);
  for (cplx p : hol.pairing) CHECK(std::abs(p) < 1e-13);
  CHECK(hol.residual < 1e-12);
}

TEST_CASE("spec validation rejects degenerate parameter grids") {
  ModularSpec s = base_spec();
  s.half = 1;
  CHECK_THROWS_AS(ModularFamily{s}, ConfigError);
  s = base_spec();
  s.step = 0.0;
  CHECK_THROWS_AS(ModularFamily{s}, ConfigError);
  s = base_spec(cplx(0.0, 0.03));
  CHECK_THROWS_AS(ModularFamily{s}, ConfigError);
  s = base_spec();
  s.resolution = 4;
  CHECK_THROWS_AS(ModularFamily{s}, ConfigError);
}

TEST_CASE("dual-norm table: (Im tau)^2-constancy, energy bound, curvature") {
  double A = 1.3;
  ModularFamily fam(base_spec(cplx(0.0, 2.0), 32, 0.01, A));
  WpReport rep = fam.wp_metric();
  REQUIRE(rep.tau.size() == 81);

  for (size_t i = 0; i < rep.tau.size(); ++i) {
    double t2 = rep.tau[i].imag();
    CHECK(std::abs(rep.g_wp[i] * 4.0 * t2 * t2 / A - 1.0) < 1e-12);
    // equality case of the bound: the two sides reach A/(4 t2^2) through
    // different floating-point paths, so allow rounding-scale slack
    CHECK(rep.bound[i] >= rep.g_wp[i] - 1e-12 * (1.0 + rep.g_wp[i]));
  }
  CHECK(rep.bound_slack > -1e-12);
  CHECK(rep.hypothesis_ok);

  // Gauss curvature of the metric g_wp |dtau|^2 from the table alone:
  // K = -2 (ddbar log g_wp) / g_wp, stencilled at the grid center; the
  // closed form gives K * A = -4 for every area normalization.
  int s = fam.side();
  double h = fam.spec().step;
  auto L = [&](int iu, int iv) {
    return std::log(rep.g_wp[size_t(iu + s * iv)]);
  };
  int c = fam.spec().half;
  double edge = L(c + 1, c) + L(c - 1, c) + L(c, c + 1) + L(c, c - 1);
  double corner =
      L(c + 1, c + 1) + L(c + 1, c - 1) + L(c - 1, c + 1) + L(c - 1, c - 1);
  double ddbar_log = (4.0 * edge + corner - 20.0 * L(c, c)) / (24.0 * h * h);
  double K = -2.0 * ddbar_log / rep.g_wp[size_t(c + s * c)];
  CHECK(std::abs(K * A + 4.0) < 1e-3);
}

TEST_CASE("psh certificate: closed-form Hessian, quadratic step refinement") {
  auto center_err = [&](double step) {
    ModularFamily fam(base_spec(cplx(0.0, 2.0), 16, step));
    WpReport rep = fam.wp_metric();
    PshReport psh = fam.psh_check(rep, 1e-8);
    REQUIRE(psh.ok);
    REQUIRE_FALSE(psh.minus_infinity);
    REQUIRE(psh.hess.size() == 49);
    int w = fam.side() - 2;
    double t2 = fam.spec().center.imag();
    double truth = 1.0 / (4.0 * t2 * t2);  // ddbar(-log Im tau)
    long cc = (w / 2) + w * (w / 2);
    // certificate well above the psh floor
    CHECK(psh.min_hess > 0.0);
    return std::abs(psh.hess[size_t(cc)] - truth);
  };

  double coarse = center_err(0.01);
  double fine = center_err(0.005);
  CHECK(coarse < 1e-5);
  // second-order stencil: halving the step cuts the defect at least 4x
  CHECK(fine < coarse / 3.8);
  CHECK(coarse > 1e-12);  // and the ratio is measured above rounding
}

TEST_CASE("frame pairing is holomorphic and matches independent quadrature") {
  ModularFamily fam(base_spec(cplx(0.0, 1.0), 32));
  Vec w = sample_bump(32);
  HolomorphyReport hol = fam.holomorphy_check(&w);
  CHECK(hol.residual <= 1e-6);

  // center value against the local-chart FD class and the explicit wedge
  // volume (-2i Im tau) of the fiber
  cplx tau0 = fam.spec().center;
  cplx want = fd_beltrami_coef(tau0, 0.21, 0.62) * (-2.0 * I_UNIT * tau0.imag());
  long cidx = fam.spec().half + long(fam.side()) * fam.spec().half;
  CHECK(std::abs(hol.pairing[size_t(cidx)] - want) < 1e-8);

  // doubling the fiber resolution moves the pairing by < 1e-8
  ModularFamily fine(base_spec(cplx(0.0, 1.0), 64));
  Vec w2 = sample_bump(64);
  KSClass k32 = fam.ks_class(tau0, 1.0, &w);
  KSClass k64 = fine.ks_class(tau0, 1.0, &w2);
  CHECK(std::abs(fam.frame_pairing(k32) - fine.frame_pairing(k64)) < 1e-8);
}

TEST_CASE("fiber refinement: correction-energy error decays at least quadratically") {
  cplx tau0(0.0, 2.0);
  auto energy_at = [&](int n) {
    ModularFamily fam(base_spec(tau0, n));
    Vec w = sample_bump(n);
    return fam.ks_class(tau0, 1.0, &w);
  };
  KSClass ref = energy_at(128);
  KSClass e16 = energy_at(16);
  KSClass e32 = energy_at(32);
  double err16 = std::abs(e16.energy - ref.energy);
  double err32 = std::abs(e32.energy - ref.energy);
  CHECK(err16 > 1e-10);
  CHECK(err32 < err16 / 3.9);
  // while the harmonic coefficient itself is discretization-exact
  CHECK(std::abs(e16.coef - ref.coef) < 1e-13);
  CHECK(std::abs(e32.coef - ref.coef) < 1e-13);
}

TEST_SUITE_END();
