#include "hdib/wp.hpp"

#include <algorithm>
#include <cmath>

#include "hdib/exterior.hpp"
#include "hdib/family.hpp"

namespace hdib {

namespace {
// Frame parameter of the fiber complex structure at a grid node: the product
// family keeps the structure of the grid center everywhere.
cplx frame_tau(const ModularSpec& s, cplx tau) {
  return s.kind == FamilyKind::product ? s.center : tau;
}
}  // namespace

ModularFamily::ModularFamily(const ModularSpec& spec) : spec_(spec) {
  if (spec_.half < 2)
    throw ConfigError("parameter grid needs half >= 2 (stencils reach two nodes out)");
  if (!(spec_.step > 0.0)) throw ConfigError("parameter grid step must be positive");
  if (spec_.resolution < 8) throw ConfigError("fiber resolution must be at least 8");
  if (!(spec_.area > 0.0)) throw ConfigError("fiber area must be positive");
  double min_im = spec_.center.imag() - spec_.half * spec_.step;
  if (!(min_im > 0.0))
    throw ConfigError("parameter grid leaves the upper half-plane (Im tau <= 0)");
}

cplx ModularFamily::tau_at(long idx) const {
  int s = side();
  long iu = idx % s, iv = idx / s;
  return spec_.center +
         spec_.step * cplx(double(iu - spec_.half), double(iv - spec_.half));
}

Vec ModularFamily::fiber_dx(const Vec& f) const {
  long n = spec_.resolution;
  Vec out(n * n);
  double sc = double(n) / 12.0;
  for (long j = 0; j < n; ++j)
    for (long i = 0; i < n; ++i) {
      auto at = [&](long s) { return f(((i + s) % n + n) % n + n * j); };
      out(i + n * j) = sc * (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2));
    }
  return out;
}

Vec ModularFamily::fiber_dy(const Vec& f) const {
  long n = spec_.resolution;
  Vec out(n * n);
  double sc = double(n) / 12.0;
  for (long j = 0; j < n; ++j)
    for (long i = 0; i < n; ++i) {
      auto at = [&](long s) { return f(i + n * (((j + s) % n + n) % n)); };
      out(i + n * j) = sc * (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2));
    }
  return out;
}

KSClass ModularFamily::ks_class(cplx tau, cplx dir, const Vec* correction) const {
  long n = spec_.resolution;
  long npts = n * n;
  cplx ft = frame_tau(spec_, tau);
  double t2 = ft.imag();

  KSClass out;
  out.tau = ft;
  // Horizontal lift of d/dtau at frozen (x, y): vertical part y d/dz for the
  // modular family (dbar y = i / (2 Im tau), a constant), none for the
  // product family.
  cplx horiz = (spec_.kind == FamilyKind::modular) ? I_UNIT / (2.0 * t2) : cplx(0.0);
  out.rep = Vec::Constant(npts, dir * horiz);
  if (correction != nullptr) {
    if (correction->size() != npts)
      throw ConfigError("lift correction grid size does not match resolution^2");
    // dbar of the periodic vertical correction w d/dz in the z_tau frame:
    // dbar w = (d_y w - tau d_x w) / (-2i Im tau)
    Vec dw = (fiber_dy(*correction) - ft * fiber_dx(*correction)) /
             (-2.0 * I_UNIT * t2);
    out.rep += dir * dw;
  }
  // Harmonic projection in the flat metric: the constant Fourier mode, i.e.
  // the flat-volume mean.  A periodic-stencil derivative telescopes to mean
  // zero, which is what makes the coefficient lift-independent.
  out.coef = out.rep.mean();
  out.energy = spec_.area * out.rep.squaredNorm() / double(npts);
  return out;
}

cplx ModularFamily::frame_pairing(const KSClass& k) const {
  long npts = k.rep.size();
  double t2 = k.tau.imag();
  // Wedge integral against the frame dz (x) dz, coefficient field 1: the
  // tangent leg contracts the cotangent one, the form legs wedge to
  // dz^dzbar = -2i Im(tau) dx^dy.  No conjugation: the pairing is bilinear.
  Vec qfield = Vec::Ones(npts);
  cplx mean_prod = qfield.cwiseProduct(k.rep).mean();
  return -2.0 * I_UNIT * t2 * mean_prod;
}

double ModularFamily::dual_norm2(const KSClass& k) const {
  long npts = k.rep.size();
  double t2 = k.tau.imag();
  double g = spec_.area / (2.0 * t2);
  // Pairing vector and Gram matrix over the frame of holomorphic quadratic
  // differentials; on the torus the frame has one member, phi = 1 in the
  // dz (x) dz trivialization, but the inversion below works for any finite
  // frame.  |q|^2 carries one 1/g per form leg and one per cotangent value.
  std::vector<Vec> frame{Vec::Ones(npts)};
  auto kf = long(frame.size());
  Vec P(kf);
  Mat G(kf, kf);
  for (long a = 0; a < kf; ++a) {
    P(a) = -2.0 * I_UNIT * t2 * frame[size_t(a)].cwiseProduct(k.rep).mean();
    for (long b = 0; b < kf; ++b) {
      cplx m = frame[size_t(a)].cwiseProduct(frame[size_t(b)].conjugate()).mean();
      G(a, b) = spec_.area * m / (g * g);
    }
  }
  Vec sol = G.llt().solve(P);
  return std::max(0.0, (P.adjoint() * sol)(0, 0).real());
}

WpReport ModularFamily::wp_metric(const Vec* correction) const {
  WpReport rep;
  long nn = nodes();
  rep.tau.resize(size_t(nn));
  rep.g_wp.resize(size_t(nn));
  rep.bound.resize(size_t(nn));
  double slack = std::numeric_limits<double>::infinity();
  for (long idx = 0; idx < nn; ++idx) {
    cplx tau = tau_at(idx);
    KSClass k = ks_class(tau, 1.0, correction);
    double d2 = dual_norm2(k);
    rep.tau[size_t(idx)] = tau;
    rep.g_wp[size_t(idx)] = d2;
    rep.bound[size_t(idx)] = k.energy;
    slack = std::min(slack, k.energy - d2);
  }
  rep.bound_slack = slack;
  rep.hypothesis_ok = relative_cotangent_semipositive(*this);
  return rep;
}

PshReport ModularFamily::psh_check(const WpReport& data, double tol) const {
  PshReport out;
  int s = side();
  double h = spec_.step;
  double peak = 0.0;
  for (double v : data.g_wp) peak = std::max(peak, v);
  // Degenerate branch: the class vanishes identically, log |.|_WP is
  // identically -infinity, which is plurisubharmonic by convention.
  double floor = 1e-30 * std::max(1.0, spec_.area * spec_.area);
  if (peak < floor) {
    out.ok = true;
    out.minus_infinity = true;
    return out;
  }
  for (double v : data.g_wp)
    if (!(v > 0.0))
      throw NotPositive("wp metric vanishes at isolated nodes; psh certificate undefined");

  auto F = [&](long iu, long iv) {
    return 0.5 * std::log(data.g_wp[size_t(iu + s * iv)]);
  };
  out.hess.assign(size_t((s - 2) * (s - 2)), 0.0);
  out.min_hess = std::numeric_limits<double>::infinity();
  for (long iv = 1; iv + 1 < s; ++iv)
    for (long iu = 1; iu + 1 < s; ++iu) {
      double edge = F(iu + 1, iv) + F(iu - 1, iv) + F(iu, iv + 1) + F(iu, iv - 1);
      double corner = F(iu + 1, iv + 1) + F(iu + 1, iv - 1) + F(iu - 1, iv + 1) +
                      F(iu - 1, iv - 1);
      // nine-point Laplacian / 4 = discrete d^2/(dtau dtaubar)
      double hess = (4.0 * edge + corner - 20.0 * F(iu, iv)) / (24.0 * h * h);
      long a = (iu - 1) + (s - 2) * (iv - 1);
      out.hess[size_t(a)] = hess;
      if (hess < out.min_hess) {
        out.min_hess = hess;
        out.arg = a;
      }
    }
  out.ok = out.min_hess >= -tol;
  return out;
}

HolomorphyReport ModularFamily::holomorphy_check(const Vec* correction) const {
  HolomorphyReport out;
  int s = side();
  double h = spec_.step;
  long nn = nodes();
  out.pairing.resize(size_t(nn));
  double pmax = 0.0;
  for (long idx = 0; idx < nn; ++idx) {
    KSClass k = ks_class(tau_at(idx), 1.0, correction);
    out.pairing[size_t(idx)] = frame_pairing(k);
    pmax = std::max(pmax, std::abs(out.pairing[size_t(idx)]));
  }
  auto P = [&](long iu, long iv) { return out.pairing[size_t(iu + s * iv)]; };
  double worst = 0.0;
  for (long iv = 2; iv + 2 < s; ++iv)
    for (long iu = 2; iu + 2 < s; ++iu) {
      cplx du = (P(iu - 2, iv) - 8.0 * P(iu - 1, iv) + 8.0 * P(iu + 1, iv) -
                 P(iu + 2, iv)) /
                (12.0 * h);
      cplx dv = (P(iu, iv - 2) - 8.0 * P(iu, iv - 1) + 8.0 * P(iu, iv + 1) -
                 P(iu, iv + 2)) /
                (12.0 * h);
      worst = std::max(worst, std::abs(0.5 * (du + I_UNIT * dv)));
    }
  out.residual = worst / std::max(pmax, 1e-30);
  return out;
}

bool relative_cotangent_semipositive(const ModularFamily& fam, double tol) {
  // The area-normalized flat metric on the relative cotangent bundle has
  // identically vanishing curvature; run it through the general commutator
  // gate at q = 0 all the same, so the hypothesis feeding the psh statement
  // is the same check other bundles go through.
  LegAlgebra alg(1);
  std::vector<double> gscales{fam.fiber_metric(fam.spec().center)};
  auto fill = [](int, long, Mat& theta) { theta.setZero(); };
  QPosReport rep = check_q_semipositive(alg, gscales, 0, fill, 1, 4, tol);
  return rep.ok;
}

}  // namespace hdib
