#include "doctest.h"
#include "hdib/exterior.hpp"

using namespace hdib;

namespace {

AlgElem basis_elem(const LegAlgebra& a, unsigned S, unsigned T, cplx v = 1.0) {
  AlgElem e(a);
  e.c[a.comp_id(S, T)] = v;
  return e;
}

double form_dist(const AlgElem& u, const AlgElem& v) {
  double d = 0.0;
  for (size_t i = 0; i < u.c.size(); ++i) d += std::abs(u.c[i] - v.c[i]);
  return d;
}

AlgElem random_form(const LegAlgebra& a, int p, int q, Rng& rng) {
  AlgElem e(a);
  for (int c : a.comps_of_bidegree(p, q)) e.c[c] = rng.gaussc();
  return e;
}

}  // namespace

TEST_SUITE_BEGIN("exterior");

TEST_CASE("wedge signs by hand, two legs") {
  LegAlgebra a(2);
  // dz1 ^ dz2 vs dz2 ^ dz1
  auto dz1 = basis_elem(a, 1u, 0u), dz2 = basis_elem(a, 2u, 0u);
  auto w12 = wedge(a, dz1, dz2), w21 = wedge(a, dz2, dz1);
  CHECK(w12.c[a.comp_id(3u, 0u)] == cplx(1.0));
  CHECK(w21.c[a.comp_id(3u, 0u)] == cplx(-1.0));
  // dzbar1 ^ dz1 = - dz1 ^ dzbar1
  auto zb1 = basis_elem(a, 0u, 1u);
  auto w = wedge(a, zb1, dz1);
  CHECK(w.c[a.comp_id(1u, 1u)] == cplx(-1.0));
  // square of an odd element vanishes
  auto sq = wedge(a, dz1, dz1);
  for (auto& cc : sq.c) CHECK(cc == cplx(0.0));
}

TEST_CASE("associativity and graded commutativity on random elements") {
  LegAlgebra a(2);
  Rng rng(7);
  for (int it = 0; it < 20; ++it) {
    AlgElem u(a), v(a), w(a);
    for (int c = 0; c < a.comps(); ++c) {
      u.c[c] = rng.gaussc();
      v.c[c] = rng.gaussc();
      w.c[c] = rng.gaussc();
    }
    auto l = wedge(a, wedge(a, u, v), w);
    auto r = wedge(a, u, wedge(a, v, w));
    CHECK(form_dist(l, r) < 1e-12);
  }
  // graded: for homogeneous u (deg k), v (deg l): u^v = (-1)^{kl} v^u
  Rng rng2(8);
  auto u = random_form(a, 1, 1, rng2);
  auto v = random_form(a, 1, 0, rng2);
  auto uv = wedge(a, u, v);
  auto vu = wedge(a, v, u);
  for (int c = 0; c < a.comps(); ++c) CHECK(std::abs(uv.c[c] - vu.c[c]) < 1e-14);
  auto w1 = random_form(a, 0, 1, rng2);
  auto uw = wedge(a, v, w1), wu = wedge(a, w1, v);
  for (int c = 0; c < a.comps(); ++c) CHECK(std::abs(uw.c[c] + wu.c[c]) < 1e-14);
}

TEST_CASE("interior product: hand values and anti-derivation") {
  LegAlgebra a(2);
  auto dz12 = basis_elem(a, 3u, 0u);  // dz1 ^ dz2
  std::vector<cplx> e1 = {1.0, 0.0}, e2 = {0.0, 1.0}, zero = {0.0, 0.0};
  auto c1 = contract(a, e1, zero, dz12);
  auto c2 = contract(a, e2, zero, dz12);
  CHECK(c1.c[a.comp_id(2u, 0u)] == cplx(1.0));   // -> dz2
  CHECK(c2.c[a.comp_id(1u, 0u)] == cplx(-1.0));  // -> -dz1
  // iota_X(u ^ v) = iota_X u ^ v + (-1)^{deg u} u ^ iota_X v
  Rng rng(3);
  for (int du = 1; du <= 2; ++du) {
    auto u = random_form(a, 1, du - 1, rng);
    auto v = random_form(a, 1, 1, rng);
    std::vector<cplx> vx = {rng.gaussc(), rng.gaussc()};
    std::vector<cplx> vb = {rng.gaussc(), rng.gaussc()};
    auto lhs = contract(a, vx, vb, wedge(a, u, v));
    auto t1 = wedge(a, contract(a, vx, vb, u), v);
    auto t2 = wedge(a, u, contract(a, vx, vb, v));
    double sg = (du % 2 == 0) ? 1.0 : -1.0;
    AlgElem rhs(a);
    for (int c = 0; c < a.comps(); ++c) rhs.c[c] = t1.c[c] + sg * t2.c[c];
    CHECK(form_dist(lhs, rhs) < 1e-12);
  }
}

TEST_CASE("conjugation") {
  LegAlgebra a(1);
  // conj(f dz^dzbar) = -conj(f) dz^dzbar
  auto t = basis_elem(a, 1u, 1u, cplx(2.0, 3.0));
  auto ct = conj_form(a, t);
  CHECK(ct.c[a.comp_id(1u, 1u)] == cplx(-2.0, 3.0));
  LegAlgebra b(2);
  Rng rng(5);
  AlgElem u(b);
  for (int c = 0; c < b.comps(); ++c) u.c[c] = rng.gaussc();
  auto cc = conj_form(b, conj_form(b, u));
  CHECK(form_dist(cc, u) < 1e-14);
}

TEST_CASE("hodge star closed forms, one leg") {
  LegAlgebra a(1);
  double g = 0.73;
  DiagonalHodge H(a, {g});
  // *1 = i g dz^dzbar (= omega), *(f dz) = -i f dz, *(f dzbar) = i f dzbar,
  // *(f dz^dzbar) = -i f / g
  auto s0 = H.star(basis_elem(a, 0u, 0u));
  CHECK(std::abs(s0.c[a.comp_id(1u, 1u)] - I_UNIT * g) < 1e-14);
  cplx f(0.4, -1.1);
  auto s10 = H.star(basis_elem(a, 1u, 0u, f));
  CHECK(std::abs(s10.c[a.comp_id(1u, 0u)] + I_UNIT * f) < 1e-14);
  auto s01 = H.star(basis_elem(a, 0u, 1u, f));
  CHECK(std::abs(s01.c[a.comp_id(0u, 1u)] - I_UNIT * f) < 1e-14);
  auto s11 = H.star(basis_elem(a, 1u, 1u, f));
  CHECK(std::abs(s11.c[a.comp_id(0u, 0u)] + I_UNIT * f / g) < 1e-14);
}

TEST_CASE("star: defining property, isometry, double star") {
  Rng rng(11);
  for (int legs = 1; legs <= 2; ++legs) {
    LegAlgebra a(legs);
    std::vector<double> g;
    for (int i = 0; i < legs; ++i) g.push_back(0.5 + rng.uniform(0.0, 1.0));
    DiagonalHodge H(a, g);
    // vol as a form: omega^n / n!
    AlgElem one(a);
    one.c[0] = 1.0;
    AlgElem vol = H.wedge_omega_pow(legs, one);
    const int top = a.comp_id((1u << legs) - 1u, (1u << legs) - 1u);
    for (int p = 0; p <= legs; ++p)
      for (int q = 0; q <= legs; ++q) {
        auto u = random_form(a, p, q, rng);
        auto v = random_form(a, p, q, rng);
        // u ^ conj(*v) = <u,v> vol
        auto lhs = wedge(a, u, conj_form(a, H.star(v)));
        cplx ip = H.inner(u, v);
        CHECK(std::abs(lhs.c[top] - ip * vol.c[top]) < 1e-12);
        // isometry of the C-linear star (no argument swap)
        CHECK(std::abs(H.inner(H.star(u), H.star(v)) - H.inner(u, v)) < 1e-12);
        // ** = (-1)^{p+q}
        auto ss = H.star(H.star(u));
        double sg = ((p + q) % 2 == 0) ? 1.0 : -1.0;
        AlgElem expect(a);
        for (int c = 0; c < a.comps(); ++c) expect.c[c] = sg * u.c[c];
        CHECK(form_dist(ss, expect) < 1e-12);
      }
  }
}

TEST_CASE("lefschetz split and sl2 star route agree with direct star") {
  Rng rng(23);
  for (int legs = 1; legs <= 2; ++legs) {
    LegAlgebra a(legs);
    std::vector<double> g;
    for (int i = 0; i < legs; ++i) g.push_back(0.4 + rng.uniform(0.0, 1.5));
    DiagonalHodge H(a, g);
    for (int p = 0; p <= legs; ++p)
      for (int q = 0; q <= legs; ++q) {
        auto u = random_form(a, p, q, rng);
        auto parts = H.lefschetz_split(p, q, u);
        // reconstruction and primitivity
        AlgElem rec(a);
        int rmin = std::max(0, p + q - legs);
        for (size_t i = 0; i < parts.size(); ++i) {
          auto t = H.wedge_omega_pow(rmin + int(i), parts[i]);
          for (int c = 0; c < a.comps(); ++c) rec.c[c] += t.c[c];
          auto lam = H.lambda(parts[i]);
          for (auto& cc : lam.c) CHECK(std::abs(cc) < 1e-10);
        }
        CHECK(form_dist(rec, u) < 1e-10);
        // sl2 route
        auto s1 = H.star(u);
        auto s2 = H.star_via_lefschetz(p, q, u);
        CHECK(form_dist(s1, s2) < 1e-10);
      }
  }
}

TEST_CASE("lambda is the metric adjoint of wedging omega") {
  Rng rng(31);
  LegAlgebra a(2);
  DiagonalHodge H(a, {1.3, 0.6});
  for (int p = 0; p <= 1; ++p)
    for (int q = 0; q <= 1; ++q) {
      auto u = random_form(a, p, q, rng);
      auto v = random_form(a, p + 1, q + 1, rng);
      cplx lhs = H.inner(H.wedge_omega(u), v);
      cplx rhs = H.inner(u, H.lambda(v));
      CHECK(std::abs(lhs - rhs) < 1e-12);
    }
}

TEST_SUITE_END();
