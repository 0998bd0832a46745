// Geometric curvature assembly.  Oracles:
//  - the radial weight c|t|^2, whose curvature is exactly c times the metric
//    and kills every non-mass term;
//  - the exact-insert and finite-difference routes of DirectImageBundle,
//    which touch none of the geometric decomposition;
//  - continuum identities (chain rule of the defect fields, minimality,
//    adjoint-closedness, bracket split) as truncation-level contracts;
//  - a twisted family whose top-degree L2 metric provably coincides with the
//    untwisted one, so the full lift machinery must reassemble to the flat
//    answer;
//  - the two independent code paths for the regularized excess and the
//    total-space pointwise pairing for the gate-controlled slack;
//  - the closed-forms bundle, whose finite model satisfies an exact identity.
#include <cmath>

#include "doctest.h"
#include "hdib/curvature.hpp"

using namespace hdib;

namespace {

FiberCalculus spec1(cplx tau, double area, int deg, int res = 16,
                    int levels = 0) {
  FiberSpec s;
  s.factors = {FactorGeometry{tau, area, deg}};
  s.resolution = res;
  s.levels = levels;
  return FiberCalculus(s);
}

// phi = c1 cos(2 pi x) Re t_1 + c2 |t_1|^2 (+ optional second-parameter and
// cross pieces for m = 2)
TotalField cos_weight(const FiberCalculus& X, int m, double c1, double c2,
                      double c3 = 0.0, double cx = 0.0) {
  TotalField phi(X, m);
  if (c1 != 0.0)
    phi.add_real({{{1, 0}, {0, 0}}}, base_re(0, m).scaled(0.5 * c1));
  if (c2 != 0.0)
    phi.add_real({{{0, 0}, {0, 0}}}, base_abs2(0, m).scaled(0.5 * c2));
  if (c3 != 0.0)
    phi.add_real({{{0, 0}, {0, 0}}}, base_abs2(1, m).scaled(0.5 * c3));
  if (cx != 0.0) {
    BaseExpr cross = BaseExpr::monomial(0.25 * cx, {1, 0}, {0, 1}, m);
    cross += BaseExpr::monomial(0.25 * cx, {0, 1}, {1, 0}, m);
    phi.add_real({{{1, 0}, {0, 0}}}, cross);
  }
  return phi;
}

double rel_err(const Mat& got, const Mat& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-300);
}

double block_scale(const std::vector<Mat>& P) {
  double s = 1e-300;
  for (const Mat& b : P) s = std::max(s, b.norm());
  return s;
}

Mat random_tuple(Rng& rng, int r, int m) {
  Mat Xi(r, m);
  for (int j = 0; j < m; ++j)
    for (int a = 0; a < r; ++a) Xi(a, j) = cplx(rng.gauss(), rng.gauss());
  return Xi;
}

}  // namespace

TEST_SUITE_BEGIN("curvature");

TEST_CASE("radial weight at top degree: only the curvature mass survives") {
  double c = 0.4;
  FiberCalculus X = spec1(cplx(0.0, 1.0), 1.0, 3);
  FamilyWeight fw(X, cos_weight(X, 1, 0.0, c));
  DirectImageBundle bun(X, fw, nullptr, 1, 0);
  CHECK(bun.rank() == 3);
  CurvatureAssembly asm1(bun);
  const auto& T = asm1.terms();
  Mat A0 = bun.metric(std::array<cplx, kMaxPars>{});
  CHECK(rel_err(T.P[0], c * A0) < 1e-10);
  double scale = T.P[0].norm();
  CHECK(T.aa[0].norm() < 1e-12 * scale);
  CHECK(T.bb[0].norm() < 1e-12 * scale);
  CHECK(T.key[0].norm() < 1e-12 * scale);
  CHECK(T.gri[0].norm() < 1e-12 * scale);
  // and the metric-derivative route sees the same curvature
  CHECK(rel_err(bun.curvature_pairing(0, 0), T.P[0]) < 1e-10);

  auto v = positivity_verdict(T.P, A0, 1, bun.rank());
  CHECK(std::abs(v.nakano_min - c) < 1e-9);
  CHECK(std::abs(v.griffiths_min - c) < 1e-9);
}

TEST_CASE("cos weight q=0: geometric route against insert and FD routes, "
          "with the continuum contracts") {
  FiberCalculus X = spec1(cplx(0.2, 1.1), 1.3, 3, 32, 14);
  FamilyWeight fw(X, cos_weight(X, 1, 0.3, 0.35));
  DirectImageBundle bun(X, fw, nullptr, 1, 0);
  CHECK(bun.rank() == 3);
  CurvatureAssembly asm1(bun);
  Mat Pg = asm1.terms().P[0];
  Mat Pi = bun.curvature_pairing(0, 0);
  // the insert route resolves the defect through the frame metric, the
  // geometric route through pointwise fields; they meet in the continuum,
  // and at this level budget the truncation tails are below rounding
  CHECK(rel_err(Pg, Pi) < 1e-8);
  auto fd = bun.fd_curvature(0.02);
  CHECK(rel_err(Pg, fd.P[0]) < 1e-6);

  auto con = asm1.contracts();
  CHECK(con.chain < 1e-9);
  CHECK(con.minimal_match < 1e-9);
  CHECK(con.key_split < 1e-10);  // no twist: the bracket vanishes outright
  CHECK(con.pair_symmetry < 1e-10);

  // the defect really is active in this family
  CHECK(asm1.terms().aa[0].norm() > 1e-4 * Pg.norm());
}

TEST_CASE("twisted family at top degree reassembles the untwisted curvature") {
  FiberCalculus X = spec1(cplx(0.0, 1.0), 1.0, 3, 32, 14);
  FamilyWeight fw(X, cos_weight(X, 1, 0.3, 0.35));
  Mat gB = Mat::Identity(1, 1) * 0.05;
  TotalField rho(X, 1);
  rho.add_real({{{1, 0}, {0, 0}}}, base_re(0, 1).scaled(0.5 * 0.04));
  TotalKahler tk(X, gB, rho);

  DirectImageBundle flat(X, fw, nullptr, 1, 0);
  DirectImageBundle twisted(X, fw, &tk, 1, 0);
  // contracting a (1,0)-form against the fiber metric cancels the volume
  // density exactly, so the two L2 metric families coincide pointwise in t
  std::array<cplx, kMaxPars> t{cplx(0.2, -0.15), cplx(0.0, 0.0)};
  CHECK(rel_err(twisted.metric(t), flat.metric(t)) < 1e-11);

  CurvatureAssembly af(flat), at(twisted);
  // the decomposition is genuinely different ...
  CHECK(at.terms().bb[0].norm() > 1e-10);
  CHECK(af.terms().bb[0].norm() == 0.0);
  // ... yet assembles to the same curvature
  CHECK(rel_err(at.terms().P[0], af.terms().P[0]) < 1e-9);
  CHECK(rel_err(at.terms().P[0], flat.curvature_pairing(0, 0)) < 1e-9);

  auto con = at.contracts();
  CHECK(con.chain < 1e-8);
  CHECK(con.minimal_match < 1e-8);
  CHECK(con.key_split < 1e-8);
  CHECK(con.pair_symmetry < 1e-9);
}

TEST_CASE("negative degree q=1: route agreement, top-degree defect decay, "
          "and the bracket split") {
  FiberCalculus X = spec1(cplx(0.1, 0.9), 1.0, -2, 32, 14);
  FamilyWeight fw(X, cos_weight(X, 1, 0.3, 0.8));
  DirectImageBundle bun(X, fw, nullptr, 1, 1);
  CHECK(bun.rank() == 2);
  CurvatureAssembly asm1(bun);
  Mat Pg = asm1.terms().P[0];
  CHECK(rel_err(Pg, bun.curvature_pairing(0, 0)) < 1e-8);
  auto fd = bun.fd_curvature(0.04);
  CHECK(rel_err(Pg, fd.P[0]) < 1e-5);

  auto con = asm1.contracts();
  CHECK(con.a_top < 1e-8);        // the lifted derivative is harmonic at top
  CHECK(con.dbar_star_a < 1e-8);  // and its defect is adjoint-closed
  CHECK(con.pair_symmetry < 1e-9);
  // no twist: the bracket vanishes, so the split must cancel internally,
  // A = -Nak, while both parts are individually large
  CHECK(con.key_split < 1e-8);
  const auto& T = asm1.terms();
  CHECK(T.A_blk[0].norm() > 1e-2);
  CHECK((T.A_blk[0] + T.nak_blk[0]).norm() < 1e-8 * T.A_blk[0].norm());
  // the incoming-frame variation contributes a genuine Gram-positive term
  Mat G = T.gri[0];
  CHECK((G - G.adjoint()).norm() < 1e-10 * std::max(1.0, G.norm()));
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (G + G.adjoint()));
  CHECK(es.eigenvalues().minCoeff() > -1e-12);
}

TEST_CASE("twisted q=1 family: full decomposition against insert and FD") {
  FiberCalculus X = spec1(cplx(0.0, 1.0), 1.0, -2, 32, 14);
  FamilyWeight fw(X, cos_weight(X, 1, 0.25, 0.8));
  Mat gB = Mat::Identity(1, 1) * 0.05;
  TotalField rho(X, 1);
  rho.add_real({{{1, 0}, {0, 0}}}, base_re(0, 1).scaled(0.5 * 0.04));
  TotalKahler tk(X, gB, rho);
  DirectImageBundle bun(X, fw, &tk, 1, 1);
  CurvatureAssembly asm1(bun);
  Mat Pg = asm1.terms().P[0];
  CHECK(rel_err(Pg, bun.curvature_pairing(0, 0)) < 1e-9);
  auto fd = bun.fd_curvature(0.04);
  CHECK(rel_err(Pg, fd.P[0]) < 1e-5);
  auto con = asm1.contracts();
  CHECK(con.a_top < 1e-7);
  CHECK(con.dbar_star_a < 1e-7);
  CHECK(con.key_split < 1e-7);  // now the bracket term is real and splits
  CHECK(asm1.terms().key[0].norm() > 1e-8);
}

TEST_CASE("route gap is pure truncation: enlarging the basis collapses it") {
  // same twisted q=1 family at the default and at an enlarged level budget;
  // the geometric and insert routes may only disagree through the dropped
  // ladder tails of the product fields, so the gap must crash with the budget
  auto gap_at = [&](int res, int lev) {
    FiberCalculus X = spec1(cplx(0.0, 1.0), 1.0, -2, res, lev);
    FamilyWeight fw(X, cos_weight(X, 1, 0.25, 0.8));
    Mat gB = Mat::Identity(1, 1) * 0.05;
    TotalField rho(X, 1);
    rho.add_real({{{1, 0}, {0, 0}}}, base_re(0, 1).scaled(0.5 * 0.04));
    TotalKahler tk(X, gB, rho);
    DirectImageBundle bun(X, fw, &tk, 1, 1);
    CurvatureAssembly asm1(bun);
    return rel_err(asm1.terms().P[0], bun.curvature_pairing(0, 0));
  };
  double coarse = gap_at(16, 0);   // default budget: max(6, 16/2) levels
  double fine = gap_at(32, 14);
  CHECK(coarse < 1e-4);
  CHECK(fine < 1e-9);
  CHECK(fine < 1e-2 * coarse);
}

TEST_CASE("excess q=0: dual code paths, pointwise pairing, and the energy "
          "bound") {
  FiberCalculus X = spec1(cplx(0.2, 1.1), 1.3, 3);
  FamilyWeight fw(X, cos_weight(X, 1, 0.3, 0.35));
  DirectImageBundle bun(X, fw, nullptr, 1, 0);
  CurvatureAssembly::Options opt;
  opt.eps = 1e-2;
  CurvatureAssembly asm1(bun, opt);

  Rng rng(77);
  for (int trial = 0; trial < 3; ++trial) {
    Mat Xi = random_tuple(rng, bun.rank(), 1);
    auto ex = asm1.excess(Xi);
    double scale = std::abs(ex.B_term) + std::abs(ex.C_direct) +
                   std::abs(ex.a_norm2) + 1e-300;
    // the commutator-solve and dual-representative routes integrate the same
    // analytic quantity through disjoint code
    CHECK(std::abs(ex.C_direct - ex.C_dual) < 1e-10 * scale);
    // the total-space pointwise pairing reproduces the term sum
    CHECK(std::abs(ex.I_eps - ex.I_pointwise) < 1e-8 * scale);
    // assembled form matches the term-by-term route
    double form = ex.b_norm2 - ex.a_norm2 + ex.B_term + ex.gri + ex.A_term +
                  ex.nak;
    CHECK(std::abs(ex.theta_form - form) < 1e-9 * scale);
    // gate holds for this family: the slack is nonnegative
    CHECK(ex.I_eps > -1e-8 * scale);
    CHECK(ex.I_min_density > -1e-10 * scale);
  }

  // energy bound at nearly-zero regularization: C dominates the defect
  CurvatureAssembly::Options tight;
  tight.eps = 1e-6;
  CurvatureAssembly asm2(bun, tight);
  for (int trial = 0; trial < 3; ++trial) {
    Mat Xi = random_tuple(rng, bun.rank(), 1);
    auto ex = asm2.excess(Xi);
    double scale = std::abs(ex.C_direct) + std::abs(ex.a_norm2) + 1e-300;
    CHECK(ex.R_eps > -1e-6 * scale);
  }
}

TEST_CASE("excess q=1 under a scaled base: gate-positive slack and dual "
          "pointwise route") {
  FiberCalculus X = spec1(cplx(0.0, 1.0), 1.0, -2);
  FamilyWeight fw(X, cos_weight(X, 1, 0.3, 0.8));
  Mat gB = Mat::Identity(1, 1) * 0.05;
  TotalKahler tk(X, gB, TotalField(X, 1));  // pure base scaling, no twist
  DirectImageBundle bun(X, fw, &tk, 1, 1);
  CurvatureAssembly asm1(bun);

  Rng rng(91);
  for (int trial = 0; trial < 3; ++trial) {
    Mat Xi = random_tuple(rng, bun.rank(), 1);
    auto ex = asm1.excess(Xi);
    double scale =
        std::abs(ex.A_term) + std::abs(ex.B_term) + std::abs(ex.cmass) + 1e-300;
    CHECK(std::abs(ex.I_eps - ex.I_pointwise) < 1e-8 * scale);
    // fiber curvature is negative, the weight mass positive; the scaled base
    // keeps the gate open:  0.8 * g  >  2 pi * 0.05
    CHECK(ex.A_term < 0.0);
    CHECK(ex.B_term > 0.0);
    CHECK(ex.I_eps > 0.0);
    CHECK(ex.I_min_density > -1e-10 * scale);
    CHECK(ex.R_eps > -1e-8 * scale);
  }
}

TEST_CASE("gate violation is reported as honest negativity") {
  FiberCalculus X = spec1(cplx(0.0, 1.0), 1.0, -2);
  FamilyWeight fw(X, cos_weight(X, 1, 0.0, -0.2));
  DirectImageBundle bun(X, fw, nullptr, 1, 1);
  CurvatureAssembly asm1(bun);
  Mat Xi = Mat::Zero(bun.rank(), 1);
  Xi(0, 0) = 1.0;
  auto ex = asm1.excess(Xi);
  CHECK(ex.I_eps < -1e-2);
  CHECK(ex.I_min_density < 0.0);
  CHECK(std::abs(ex.I_eps - ex.I_pointwise) <
        1e-8 * (std::abs(ex.I_eps) + 1e-300));
  auto v = positivity_verdict(asm1.terms().P,
                              bun.metric(std::array<cplx, kMaxPars>{}), 1,
                              bun.rank());
  CHECK(v.nakano_min < 0.0);
}

TEST_CASE("two coupled parameters: pair symmetry, route agreement, and the "
          "pointwise pairing at m=2") {
  FiberCalculus X = spec1(cplx(0.0, 1.0), 1.0, 2, 32, 14);
  FamilyWeight fw(X, cos_weight(X, 2, 0.25, 0.3, 0.35, 0.15));
  DirectImageBundle bun(X, fw, nullptr, 1, 0);
  CHECK(bun.rank() == 2);
  CurvatureAssembly asm1(bun);
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k) {
      Mat Pg = asm1.terms().P[size_t(j) * 2 + k];
      CHECK(rel_err(Pg, bun.curvature_pairing(j, k)) < 1e-8);
    }
  CHECK(asm1.contracts().pair_symmetry < 1e-9);
  CHECK(asm1.terms().P[1].norm() > 1e-3);  // coupling really present

  Rng rng(13);
  for (int trial = 0; trial < 2; ++trial) {
    Mat Xi = random_tuple(rng, bun.rank(), 2);
    auto ex = asm1.excess(Xi);
    double scale = std::abs(ex.B_term) + std::abs(ex.C_direct) +
                   std::abs(ex.a_norm2) + 1e-300;
    CHECK(std::abs(ex.C_direct - ex.C_dual) < 1e-10 * scale);
    CHECK(std::abs(ex.I_eps - ex.I_pointwise) < 1e-8 * scale);
  }
}

TEST_CASE("closed-forms bundle: kernel frame, exact finite identity, and "
          "psh positivity") {
  FiberCalculus X = spec1(cplx(0.2, 1.1), 1.3, 3);
  FamilyWeight fw(X, cos_weight(X, 1, 0.3, 0.35));

  // at top fiber degree the closed forms are exactly the harmonic classes,
  // so the bundle must agree with the direct image
  ClosedFormsBundle cb(X, fw, 1, 0);
  DirectImageBundle bun(X, fw, nullptr, 1, 0);
  CHECK(cb.rank() == 3);
  // the frames span the same coefficient subspace; express the harmonic frame
  // in the kernel basis and compare the metric families through that constant
  // change of basis
  Mat K = cb.kernel_basis();
  Mat U = bun.center_frame();
  Mat T = K.adjoint() * U;
  CHECK((U - K * T).norm() < 1e-10 * U.norm());
  for (cplx tv : {cplx(0.0, 0.0), cplx(0.2, -0.1)}) {
    std::array<cplx, kMaxPars> t{tv, cplx(0.0, 0.0)};
    Mat Ac = cb.metric(t);
    Mat Ad = bun.metric(t);
    CHECK(rel_err(Ad, Mat(T.adjoint() * Ac * T)) < 1e-9);
  }

  // finite-difference spot check of the closed-form inserts
  double h = 0.02;
  std::array<cplx, kMaxPars> tp{cplx(h, 0.0), cplx(0.0, 0.0)};
  std::array<cplx, kMaxPars> tm{cplx(-h, 0.0), cplx(0.0, 0.0)};
  std::array<cplx, kMaxPars> tip{cplx(0.0, h), cplx(0.0, 0.0)};
  std::array<cplx, kMaxPars> tim{cplx(0.0, -h), cplx(0.0, 0.0)};
  Mat dRe = (cb.metric(tp) - cb.metric(tm)) / (2.0 * h);
  Mat dIm = (cb.metric(tip) - cb.metric(tim)) / (2.0 * h);
  Mat dFd = 0.5 * (dRe - I_UNIT * dIm);  // d/dt of the metric family
  CHECK(rel_err(dFd, cb.d_metric(0)) < 1e-3);

  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Mat Xi = random_tuple(rng, cb.rank(), 1);
    CHECK(cb.identity_residual(Xi) < 1e-10);
  }
  auto v = positivity_verdict(cb.pairing_all(),
                              cb.metric(std::array<cplx, kMaxPars>{}), 1,
                              cb.rank());
  CHECK(v.nakano_min > -1e-6 * std::max(v.scale, 1e-300));
}

TEST_CASE("closed-forms bundle on the full space: identity without a "
          "harmonic frame") {
  FiberCalculus X = spec1(cplx(0.1, 0.9), 1.0, -2);
  FamilyWeight fw(X, cos_weight(X, 2, 0.25, 0.3, 0.35, 0.15));
  // outgoing dbar from (0,1) is empty: every truncated form is closed
  ClosedFormsBundle cb(X, fw, 0, 1);
  CHECK(cb.rank() > 2);
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Mat Xi = random_tuple(rng, cb.rank(), 2);
    CHECK(cb.identity_residual(Xi) < 1e-10);
  }
  auto v = positivity_verdict(cb.pairing_all(),
                              cb.metric(std::array<cplx, kMaxPars>{}), 2,
                              cb.rank());
  CHECK(v.nakano_min > -1e-6 * std::max(v.scale, 1e-300));
}

TEST_CASE("positivity verdict matches direct spectra") {
  // m=1: verdict is exactly the generalized eigenvalue problem
  Rng rng(23);
  int r = 3;
  Mat B(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) B(i, j) = cplx(rng.gauss(), rng.gauss());
  Mat H = B + B.adjoint();  // indefinite Hermitian
  std::vector<Mat> P{H};
  Mat gram = Mat::Identity(r, r);
  auto v = positivity_verdict(P, gram, 1, r);
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  CHECK(std::abs(v.nakano_min - es.eigenvalues().minCoeff()) < 1e-10);
  CHECK(std::abs(v.griffiths_min - es.eigenvalues().minCoeff()) < 1e-10);
  CHECK(v.scale >= std::abs(es.eigenvalues().minCoeff()) - 1e-12);

  // scaling the gram rescales the verdict inversely
  auto v2 = positivity_verdict(P, Mat(4.0 * gram), 1, r);
  CHECK(std::abs(v2.nakano_min - 0.25 * v.nakano_min) < 1e-10);
}

TEST_CASE("unsupported shapes are rejected") {
  FiberCalculus X = spec1(cplx(0.0, 1.0), 1.0, 3);
  FamilyWeight fw(X, cos_weight(X, 1, 0.0, 0.4));
  DirectImageBundle b00(X, fw, nullptr, 0, 0);
  CHECK_THROWS_AS(CurvatureAssembly{b00}, NotSupported);
  CHECK_THROWS_AS(ClosedFormsBundle(X, fw, 2, 0), NotSupported);
  // (1,0) kernel is empty at negative degree: the closed bundle is trivial
  FiberCalculus Xn = spec1(cplx(0.0, 1.0), 1.0, -2);
  FamilyWeight fn(Xn, cos_weight(Xn, 1, 0.0, 0.4));
  CHECK_THROWS_AS(ClosedFormsBundle(Xn, fn, 1, 0), NotSupported);
}

TEST_SUITE_END();
