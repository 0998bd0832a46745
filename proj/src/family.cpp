#include "hdib/family.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace hdib {

namespace {

cplx ipow(cplx t, int k) {
  cplx r(1.0, 0.0);
  for (int i = 0; i < k; ++i) r *= t;
  return r;
}

using TermKey = std::array<double, 12>;

TermKey term_key(const BaseTerm& t) {
  return {double(t.a[0]), double(t.a[1]), double(t.b[0]), double(t.b[1]),
          t.p[0].real(),  t.p[0].imag(),  t.p[1].real(),  t.p[1].imag(),
          t.q[0].real(),  t.q[0].imag(),  t.q[1].real(),  t.q[1].imag()};
}

}  // namespace

// --------------------------------------------------------------------------
// BaseExpr
// --------------------------------------------------------------------------

BaseExpr::BaseExpr(int m) : m_(m) {
  if (m < 1 || m > kMaxPars) throw LabError("BaseExpr: bad parameter count");
}

BaseExpr BaseExpr::constant(cplx c, int m) {
  BaseExpr e(m);
  BaseTerm t;
  t.coef = c;
  e.terms_.push_back(t);
  return e;
}

BaseExpr BaseExpr::monomial(cplx c, std::array<int, kMaxPars> a,
                            std::array<int, kMaxPars> b, int m) {
  BaseExpr e(m);
  BaseTerm t;
  t.coef = c;
  t.a = a;
  t.b = b;
  e.terms_.push_back(t);
  return e;
}

BaseExpr BaseExpr::exponential(cplx c, std::array<cplx, kMaxPars> p,
                               std::array<cplx, kMaxPars> q, int m) {
  BaseExpr e(m);
  BaseTerm t;
  t.coef = c;
  t.p = p;
  t.q = q;
  e.terms_.push_back(t);
  return e;
}

BaseExpr& BaseExpr::operator+=(const BaseExpr& o) {
  if (o.m_ != m_) throw LabError("BaseExpr: parameter count mismatch");
  terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
  simplify();
  return *this;
}

BaseExpr BaseExpr::scaled(cplx s) const {
  BaseExpr e = *this;
  for (auto& t : e.terms_) t.coef *= s;
  return e;
}

BaseExpr BaseExpr::mul(const BaseExpr& o) const {
  if (o.m_ != m_) throw LabError("BaseExpr: parameter count mismatch");
  BaseExpr e(m_);
  for (const auto& t1 : terms_)
    for (const auto& t2 : o.terms_) {
      BaseTerm t;
      t.coef = t1.coef * t2.coef;
      for (int j = 0; j < kMaxPars; ++j) {
        t.a[j] = t1.a[j] + t2.a[j];
        t.b[j] = t1.b[j] + t2.b[j];
        t.p[j] = t1.p[j] + t2.p[j];
        t.q[j] = t1.q[j] + t2.q[j];
      }
      e.terms_.push_back(t);
    }
  e.simplify();
  return e;
}

BaseExpr BaseExpr::d_t(int j) const {
  BaseExpr e(m_);
  for (const auto& t : terms_) {
    if (t.a[j] > 0) {
      BaseTerm s = t;
      s.coef *= double(t.a[j]);
      s.a[j] -= 1;
      e.terms_.push_back(s);
    }
    if (t.p[j] != cplx(0.0)) {
      BaseTerm s = t;
      s.coef *= t.p[j];
      e.terms_.push_back(s);
    }
  }
  e.simplify();
  return e;
}

BaseExpr BaseExpr::d_tbar(int j) const {
  BaseExpr e(m_);
  for (const auto& t : terms_) {
    if (t.b[j] > 0) {
      BaseTerm s = t;
      s.coef *= double(t.b[j]);
      s.b[j] -= 1;
      e.terms_.push_back(s);
    }
    if (t.q[j] != cplx(0.0)) {
      BaseTerm s = t;
      s.coef *= t.q[j];
      e.terms_.push_back(s);
    }
  }
  e.simplify();
  return e;
}

BaseExpr BaseExpr::conjugate() const {
  BaseExpr e(m_);
  for (const auto& t : terms_) {
    BaseTerm s;
    s.coef = std::conj(t.coef);
    for (int j = 0; j < kMaxPars; ++j) {
      s.a[j] = t.b[j];
      s.b[j] = t.a[j];
      s.p[j] = std::conj(t.q[j]);
      s.q[j] = std::conj(t.p[j]);
    }
    e.terms_.push_back(s);
  }
  e.simplify();
  return e;
}

cplx BaseExpr::eval(const std::array<cplx, kMaxPars>& t) const {
  cplx out(0.0);
  for (const auto& tm : terms_) {
    cplx v = tm.coef;
    cplx ex(0.0);
    for (int j = 0; j < m_; ++j) {
      v *= ipow(t[j], tm.a[j]) * ipow(std::conj(t[j]), tm.b[j]);
      ex += tm.p[j] * t[j] + tm.q[j] * std::conj(t[j]);
    }
    out += v * std::exp(ex);
  }
  return out;
}

void BaseExpr::simplify() {
  std::map<TermKey, cplx> merged;
  for (const auto& t : terms_) merged[term_key(t)] += t.coef;
  std::vector<BaseTerm> out;
  out.reserve(merged.size());
  for (const auto& [key, coef] : merged) {
    if (coef == cplx(0.0)) continue;
    BaseTerm t;
    t.coef = coef;
    for (int j = 0; j < kMaxPars; ++j) {
      t.a[j] = int(key[j]);
      t.b[j] = int(key[kMaxPars + j]);
      t.p[j] = cplx(key[4 + 2 * j], key[5 + 2 * j]);
      t.q[j] = cplx(key[8 + 2 * j], key[9 + 2 * j]);
    }
    out.push_back(t);
  }
  terms_ = std::move(out);
}

BaseExpr base_re(int j, int m) {
  std::array<int, kMaxPars> e{};
  e[j] = 1;
  BaseExpr r = BaseExpr::monomial(0.5, e, {}, m);
  r += BaseExpr::monomial(0.5, {}, e, m);
  return r;
}

BaseExpr base_im(int j, int m) {
  std::array<int, kMaxPars> e{};
  e[j] = 1;
  BaseExpr r = BaseExpr::monomial(cplx(0.0, -0.5), e, {}, m);
  r += BaseExpr::monomial(cplx(0.0, 0.5), {}, e, m);
  return r;
}

BaseExpr base_abs2(int j, int m) {
  std::array<int, kMaxPars> e{};
  e[j] = 1;
  return BaseExpr::monomial(1.0, e, e, m);
}

namespace {
// e^{+-i l} for the real-linear form l = c0 + sum re_j Re t_j + im_j Im t_j
BaseExpr exp_il(std::array<double, kMaxPars> re, std::array<double, kMaxPars> im,
                double c0, int m, double sign) {
  std::array<cplx, kMaxPars> p{}, q{};
  for (int j = 0; j < kMaxPars; ++j) {
    p[j] = sign * cplx(im[j] / 2.0, re[j] / 2.0);
    q[j] = sign * cplx(-im[j] / 2.0, re[j] / 2.0);
  }
  return BaseExpr::exponential(std::polar(1.0, sign * c0), p, q, m);
}
}  // namespace

BaseExpr base_cos_linear(std::array<double, kMaxPars> re,
                         std::array<double, kMaxPars> im, double c0, int m) {
  BaseExpr r = exp_il(re, im, c0, m, +1.0).scaled(0.5);
  r += exp_il(re, im, c0, m, -1.0).scaled(0.5);
  return r;
}

BaseExpr base_sin_linear(std::array<double, kMaxPars> re,
                         std::array<double, kMaxPars> im, double c0, int m) {
  cplx s = 1.0 / cplx(0.0, 2.0);
  BaseExpr r = exp_il(re, im, c0, m, +1.0).scaled(s);
  r += exp_il(re, im, c0, m, -1.0).scaled(-s);
  return r;
}

// --------------------------------------------------------------------------
// TotalField
// --------------------------------------------------------------------------

TotalField::TotalField(const FiberCalculus& X, int m) : X_(&X), m_(m) {
  if (m < 1 || m > kMaxPars) throw LabError("TotalField: bad parameter count");
}

void TotalField::add_term(std::array<std::pair<int, int>, 2> mode,
                          BaseExpr base) {
  if (base.vars() != m_) throw LabError("TotalField: parameter count mismatch");
  for (int a = X_->n(); a < 2; ++a)
    if (mode[a].first != 0 || mode[a].second != 0)
      throw LabError("TotalField: mode on nonexistent factor");
  if (base.empty()) return;
  terms_.push_back({mode, std::move(base)});
}

void TotalField::add_real(std::array<std::pair<int, int>, 2> mode,
                          const BaseExpr& base) {
  add_term(mode, base);
  std::array<std::pair<int, int>, 2> mc = mode;
  for (auto& mn : mc) {
    mn.first = -mn.first;
    mn.second = -mn.second;
  }
  add_term(mc, base.conjugate());
}

TotalField TotalField::d_t(int j) const {
  TotalField f(*X_, m_);
  for (const auto& t : terms_) f.add_term(t.mode, t.base.d_t(j));
  return f;
}

TotalField TotalField::d_tbar(int j) const {
  TotalField f(*X_, m_);
  for (const auto& t : terms_) f.add_term(t.mode, t.base.d_tbar(j));
  return f;
}

TotalField TotalField::d_z(int a) const {
  TotalField f(*X_, m_);
  const auto& fac = X_->factor(a);
  cplx tb = std::conj(fac.geo().tau);
  for (const auto& t : terms_) {
    auto [mm, nn] = t.mode[a];
    if (mm == 0 && nn == 0) continue;
    cplx sym = PI * (double(nn) - tb * double(mm)) / fac.tau2();
    f.add_term(t.mode, t.base.scaled(sym));
  }
  return f;
}

TotalField TotalField::d_zbar(int a) const {
  TotalField f(*X_, m_);
  const auto& fac = X_->factor(a);
  cplx tau = fac.geo().tau;
  for (const auto& t : terms_) {
    auto [mm, nn] = t.mode[a];
    if (mm == 0 && nn == 0) continue;
    cplx sym = PI * (tau * double(mm) - double(nn)) / fac.tau2();
    f.add_term(t.mode, t.base.scaled(sym));
  }
  return f;
}

TotalField TotalField::conjugate() const {
  TotalField f(*X_, m_);
  for (const auto& t : terms_) {
    auto mc = t.mode;
    for (auto& mn : mc) {
      mn.first = -mn.first;
      mn.second = -mn.second;
    }
    f.add_term(mc, t.base.conjugate());
  }
  return f;
}

TotalField TotalField::operator+(const TotalField& o) const {
  if (o.m_ != m_ || o.X_ != X_) throw LabError("TotalField: mismatched sum");
  TotalField f = *this;
  f.terms_.insert(f.terms_.end(), o.terms_.begin(), o.terms_.end());
  return f;
}

TotalField TotalField::scaled(cplx s) const {
  TotalField f(*X_, m_);
  for (const auto& t : terms_) f.add_term(t.mode, t.base.scaled(s));
  return f;
}

Vec TotalField::eval(const std::array<cplx, kMaxPars>& t) const {
  long np = X_->npoints();
  Vec out = Vec::Zero(np);
  int n = X_->n();
  for (const auto& tm : terms_) {
    cplx bv = tm.base.eval(t);
    if (bv == cplx(0.0)) continue;
    for (long p = 0; p < np; ++p) {
      double ph = 0.0;
      for (int a = 0; a < n; ++a)
        ph += tm.mode[a].first * X_->xs(a, p) + tm.mode[a].second * X_->ys(a, p);
      out(p) += bv * std::polar(1.0, 2.0 * PI * ph);
    }
  }
  return out;
}

RVec TotalField::eval_real(const std::array<cplx, kMaxPars>& t) const {
  Vec v = eval(t);
  double mx = v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
  double mi = v.size() ? v.imag().cwiseAbs().maxCoeff() : 0.0;
  if (mi > 1e-10 * (1.0 + mx))
    throw LabError("TotalField: field expected to be real-valued is not");
  return v.real();
}

// --------------------------------------------------------------------------
// FamilyWeight
// --------------------------------------------------------------------------

FamilyWeight::FamilyWeight(const FiberCalculus& X, TotalField phi)
    : X_(&X),
      phi_(std::move(phi)),
      phi_z_(phi_.d_z(0)),
      phi_zz_(phi_z_.d_zbar(0)) {
  if (X.n() != 1)
    throw NotSupported("FamilyWeight: pointwise weights need a 1-factor fiber");
}

RVec FamilyWeight::phi_values(const std::array<cplx, kMaxPars>& t) const {
  return phi_.eval_real(t);
}

SectionWeight FamilyWeight::section_weight(const std::array<cplx, kMaxPars>& t,
                                           const RVec& gscale) const {
  SectionWeight w;
  RVec ph = phi_values(t);
  double two_tau2 = 2.0 * X_->factor(0).tau2();
  w.wtot = two_tau2 * gscale.cwiseProduct((-ph.array()).exp().matrix());
  w.gscale = {gscale};
  w.dlogw = {-phi_z_.eval(t)};
  return w;
}

RVec FamilyWeight::theta_zz(const std::array<cplx, kMaxPars>& t) const {
  double bg = PI * X_->factor(0).geo().degree / X_->factor(0).tau2();
  return RVec::Constant(X_->npoints(), bg) + phi_zz_.eval_real(t);
}

// --------------------------------------------------------------------------
// TotalKahler
// --------------------------------------------------------------------------

TotalKahler::TotalKahler(const FiberCalculus& X, Mat gB, TotalField rho)
    : X_(&X),
      gB_(std::move(gB)),
      rho_(std::move(rho)),
      r_zz_(rho_.d_z(0).d_zbar(0)) {
  if (X.n() != 1)
    throw NotSupported("TotalKahler: total metric needs a 1-factor fiber");
  int m = int(gB_.rows());
  if (m < 1 || m > kMaxPars || gB_.cols() != m)
    throw LabError("TotalKahler: base metric must be m x m, m in {1,2}");
  if ((gB_ - gB_.adjoint()).norm() > 1e-12 * (1.0 + gB_.norm()))
    throw LabError("TotalKahler: base metric must be Hermitian");
  if (rho_.vars() != m) throw LabError("TotalKahler: twist parameter count");
  for (int j = 0; j < m; ++j) {
    r_tzb_.push_back(rho_.d_t(j).d_zbar(0));
    r_ztb_.push_back(rho_.d_z(0).d_tbar(j));
  }
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < m; ++k) r_ttb_.push_back(rho_.d_t(j).d_tbar(k));
}

RVec TotalKahler::g_ff(const std::array<cplx, kMaxPars>& t) const {
  return RVec::Constant(X_->npoints(), X_->factor(0).flat_g()) +
         r_zz_.eval_real(t);
}

Vec TotalKahler::g_tf(int j, const std::array<cplx, kMaxPars>& t) const {
  return r_tzb_[j].eval(t);
}

Vec TotalKahler::g_ft(int j, const std::array<cplx, kMaxPars>& t) const {
  return r_ztb_[j].eval(t);
}

Vec TotalKahler::g_tt(int j, int k, const std::array<cplx, kMaxPars>& t) const {
  return Vec::Constant(X_->npoints(), gB_(j, k)) + r_ttb_[j * m() + k].eval(t);
}

Vec TotalKahler::nu(int j, const std::array<cplx, kMaxPars>& t) const {
  return -g_tf(j, t).cwiseQuotient(g_ff(t).cast<cplx>());
}

Vec TotalKahler::nu_zbar(int j, const std::array<cplx, kMaxPars>& t) const {
  Vec gff = g_ff(t).cast<cplx>();
  Vec gtf = g_tf(j, t);
  Vec dgtf = r_tzb_[j].d_zbar(0).eval(t);
  Vec dgff = r_zz_.d_zbar(0).eval(t);
  return -(dgtf.cwiseProduct(gff) - gtf.cwiseProduct(dgff))
              .cwiseQuotient(gff.cwiseProduct(gff));
}

Vec TotalKahler::nu_z(int j, const std::array<cplx, kMaxPars>& t) const {
  Vec gff = g_ff(t).cast<cplx>();
  Vec gtf = g_tf(j, t);
  Vec dgtf = r_tzb_[j].d_z(0).eval(t);
  Vec dgff = r_zz_.d_z(0).eval(t);
  return -(dgtf.cwiseProduct(gff) - gtf.cwiseProduct(dgff))
              .cwiseQuotient(gff.cwiseProduct(gff));
}

// second derivative d_z (d_x nu) of nu = -n/d for a first direction x, given
// the evaluated fields; quotient rule twice:
//   nu_xz = -n_xz/d + (n_x d_z + n_z d_x + n d_xz)/d^2 - 2 n d_x d_z/d^3
static Vec quotient_second(const Vec& n, const Vec& nz, const Vec& nx,
                           const Vec& nxz, const Vec& d, const Vec& dz,
                           const Vec& dx, const Vec& dxz) {
  Vec d2 = d.cwiseProduct(d);
  Vec d3 = d2.cwiseProduct(d);
  return -nxz.cwiseQuotient(d) +
         (nx.cwiseProduct(dz) + nz.cwiseProduct(dx) + n.cwiseProduct(dxz))
             .cwiseQuotient(d2) -
         2.0 * n.cwiseProduct(dx).cwiseProduct(dz).cwiseQuotient(d3);
}

Vec TotalKahler::nu_zbar_z(int j, const std::array<cplx, kMaxPars>& t) const {
  Vec d = g_ff(t).cast<cplx>();
  return quotient_second(g_tf(j, t), r_tzb_[j].d_z(0).eval(t),
                         r_tzb_[j].d_zbar(0).eval(t),
                         r_tzb_[j].d_zbar(0).d_z(0).eval(t), d,
                         r_zz_.d_z(0).eval(t), r_zz_.d_zbar(0).eval(t),
                         r_zz_.d_zbar(0).d_z(0).eval(t));
}

Vec TotalKahler::nu_tbar_z(int j, int k,
                           const std::array<cplx, kMaxPars>& t) const {
  Vec d = g_ff(t).cast<cplx>();
  return quotient_second(g_tf(j, t), r_tzb_[j].d_z(0).eval(t),
                         r_tzb_[j].d_tbar(k).eval(t),
                         r_tzb_[j].d_tbar(k).d_z(0).eval(t), d,
                         r_zz_.d_z(0).eval(t), r_zz_.d_tbar(k).eval(t),
                         r_zz_.d_tbar(k).d_z(0).eval(t));
}

Vec TotalKahler::nu_tbar(int j, int k, const std::array<cplx, kMaxPars>& t) const {
  Vec gff = g_ff(t).cast<cplx>();
  Vec gtf = g_tf(j, t);
  Vec dgtf = r_tzb_[j].d_tbar(k).eval(t);
  Vec dgff = r_zz_.d_tbar(k).eval(t);
  return -(dgtf.cwiseProduct(gff) - gtf.cwiseProduct(dgff))
              .cwiseQuotient(gff.cwiseProduct(gff));
}

Vec TotalKahler::c_schur(int j, int k,
                         const std::array<cplx, kMaxPars>& t) const {
  Vec num = g_tf(j, t).cwiseProduct(g_ft(k, t));
  return g_tt(j, k, t) - num.cwiseQuotient(g_ff(t).cast<cplx>());
}

TotalKahler::PosReport TotalKahler::check_positive(
    const std::vector<std::array<cplx, kMaxPars>>& ts, double tol) const {
  int mm = m();
  long np = X_->npoints();
  PosReport rep;
  rep.min_eig = std::numeric_limits<double>::infinity();
  for (int s = 0; s < int(ts.size()); ++s) {
    RVec gf = g_ff(ts[s]);
    std::vector<Vec> tf(mm), ft(mm);
    std::vector<Vec> tt(size_t(mm) * mm);
    for (int j = 0; j < mm; ++j) {
      tf[j] = g_tf(j, ts[s]);
      ft[j] = g_ft(j, ts[s]);
      for (int k = 0; k < mm; ++k) tt[j * mm + k] = g_tt(j, k, ts[s]);
    }
    Mat H(1 + mm, 1 + mm);
    for (long p = 0; p < np; ++p) {
      H(0, 0) = gf(p);
      for (int k = 0; k < mm; ++k) H(0, 1 + k) = ft[k](p);
      for (int j = 0; j < mm; ++j) {
        H(1 + j, 0) = tf[j](p);
        for (int k = 0; k < mm; ++k) H(1 + j, 1 + k) = tt[j * mm + k](p);
      }
      Mat Hs = 0.5 * (H + H.adjoint());
      Eigen::SelfAdjointEigenSolver<Mat> es(Hs, Eigen::EigenvaluesOnly);
      double mn = es.eigenvalues().minCoeff();
      if (mn < rep.min_eig) {
        rep.min_eig = mn;
        rep.point = p;
        rep.sample = s;
      }
    }
  }
  rep.ok = rep.min_eig > tol;
  return rep;
}

// --------------------------------------------------------------------------
// q-semipositivity gate
// --------------------------------------------------------------------------

QPosReport check_q_semipositive(
    const LegAlgebra& alg, const std::vector<double>& gscales, int q,
    const std::function<void(int sample, long point, Mat& theta)>& fill,
    int nsamples, long npoints, double tol) {
  int N = alg.legs();
  if (int(gscales.size()) != N)
    throw LabError("check_q_semipositive: one metric scale per leg");
  if (q < 0 || q >= N) throw LabError("check_q_semipositive: bad q");

  DiagonalHodge H(alg, gscales);
  std::vector<int> comps = alg.comps_of_bidegree(N, q + 1);
  int B = int(comps.size());

  // Gram of the component basis (diagonal frame factors)
  Mat G = Mat::Zero(B, B);
  for (int i = 0; i < B; ++i) {
    AlgElem e(alg);
    e.c[comps[i]] = 1.0;
    G(i, i) = H.inner(e, e);
  }
  MetricFactor mf = MetricFactor::make(G);

  // commutator response of each curvature component: [i dz_a^dzbar_b ^, Lambda]
  std::vector<Mat> resp(size_t(N) * N);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) {
      AlgElem T(alg);
      T.c[alg.comp_id(1u << a, 1u << b)] = I_UNIT;
      Mat Q = Mat::Zero(B, B);
      for (int j = 0; j < B; ++j) {
        AlgElem u(alg);
        u.c[comps[j]] = 1.0;
        AlgElem w1 = wedge(alg, T, H.lambda(u));
        AlgElem w2 = H.lambda(wedge(alg, T, u));
        for (int i = 0; i < B; ++i) Q(i, j) = w1.c[comps[i]] - w2.c[comps[i]];
      }
      resp[size_t(a) * N + b] = Q;
    }

  QPosReport rep;
  rep.min_eig = std::numeric_limits<double>::infinity();
  Mat theta(N, N), Q(B, B);
  for (int s = 0; s < nsamples; ++s)
    for (long p = 0; p < npoints; ++p) {
      theta.setZero();
      fill(s, p, theta);
      rep.scale = std::max(rep.scale, theta.cwiseAbs().maxCoeff());
      Q.setZero();
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b)
          if (theta(a, b) != cplx(0.0)) Q += theta(a, b) * resp[size_t(a) * N + b];
      // Hermitize with respect to the Gram (kills rounding asymmetry only)
      Mat Qd = G.inverse() * Q.adjoint() * G;
      MetricEigs eg = metric_self_adjoint_eigs(0.5 * (Q + Qd), mf);
      double mn = eg.values.minCoeff();
      if (mn < rep.min_eig) {
        rep.min_eig = mn;
        rep.point = p;
        rep.sample = s;
      }
    }
  rep.ok = rep.min_eig >= -tol * std::max(rep.scale, 1e-300);
  return rep;
}

}  // namespace hdib
