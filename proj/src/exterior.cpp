#include "hdib/exterior.hpp"

#include <algorithm>

namespace hdib {

namespace {

// Legs of a component as an ordered list: dz legs ascending, then dzbar legs
// ascending.  Encode a leg as 2*index + (is_dzbar ? 1 : 0).
std::vector<int> leg_list(unsigned S, unsigned T, int legs) {
  std::vector<int> out;
  for (int a = 0; a < legs; ++a)
    if (S & (1u << a)) out.push_back(2 * a);
  for (int a = 0; a < legs; ++a)
    if (T & (1u << a)) out.push_back(2 * a + 1);
  return out;
}

// Parity of the permutation sorting `v` into the canonical order used by
// leg_list: all dz legs (even codes) before all dzbar legs (odd codes), each
// group ascending.  Canonical comparison: (code & 1, code >> 1).
int sort_sign(std::vector<int> v) {
  auto key = [](int code) { return std::pair<int, int>(code & 1, code >> 1); };
  int sign = 1;
  for (size_t i = 0; i < v.size(); ++i) {
    size_t best = i;
    for (size_t j = i + 1; j < v.size(); ++j)
      if (key(v[j]) < key(v[best])) best = j;
    if (best != i) {
      std::swap(v[i], v[best]);
      sign = -sign;
    }
  }
  return sign;
}

}  // namespace

int LegAlgebra::merge_sign(unsigned S1, unsigned T1, unsigned S2, unsigned T2,
                           int legs) {
  if ((S1 & S2) || (T1 & T2)) return 0;
  std::vector<int> v = leg_list(S1, T1, legs);
  std::vector<int> w = leg_list(S2, T2, legs);
  v.insert(v.end(), w.begin(), w.end());
  return sort_sign(std::move(v));
}

LegAlgebra::LegAlgebra(int legs) : k_(legs) {
  if (legs < 0 || legs > 5) throw LabError("LegAlgebra: legs out of range");
  ncomp_ = 1 << (2 * legs);
  wtab_.resize(size_t(ncomp_) * ncomp_);
  for (int c1 = 0; c1 < ncomp_; ++c1) {
    for (int c2 = 0; c2 < ncomp_; ++c2) {
      unsigned S1 = s_mask(c1), T1 = t_mask(c1);
      unsigned S2 = s_mask(c2), T2 = t_mask(c2);
      int sg = merge_sign(S1, T1, S2, T2, k_);
      Signed r;
      if (sg != 0) {
        r.comp = comp_id(S1 | S2, T1 | T2);
        r.sign = sg;
      }
      wtab_[size_t(c1) * ncomp_ + c2] = r;
    }
  }
  ctab_z_.assign(k_, std::vector<Signed>(ncomp_));
  ctab_zb_.assign(k_, std::vector<Signed>(ncomp_));
  conj_.resize(ncomp_);
  for (int c = 0; c < ncomp_; ++c) {
    unsigned S = s_mask(c), T = t_mask(c);
    for (int a = 0; a < k_; ++a) {
      // iota(d/dz_a): remove dz^a; sign = (-1)^{#legs before it}
      if (S & (1u << a)) {
        int before = std::popcount(S & ((1u << a) - 1u));
        ctab_z_[a][c] = Signed{comp_id(S & ~(1u << a), T),
                               (before % 2 == 0) ? 1 : -1};
      }
      if (T & (1u << a)) {
        int before =
            std::popcount(S) + std::popcount(T & ((1u << a) - 1u));
        ctab_zb_[a][c] = Signed{comp_id(S, T & ~(1u << a)),
                                (before % 2 == 0) ? 1 : -1};
      }
    }
    // conj maps each dz^a -> dzbar^a and vice versa, keeping the list order,
    // then we re-sort: sign = (-1)^{p q}.
    int p = std::popcount(S), q = std::popcount(T);
    conj_[c] = Signed{comp_id(T, S), (p * q) % 2 == 0 ? 1 : -1};
  }
}

std::vector<int> LegAlgebra::comps_of_bidegree(int p, int q) const {
  std::vector<int> out;
  for (int c = 0; c < ncomp_; ++c)
    if (p_of(c) == p && q_of(c) == q) out.push_back(c);
  return out;
}

AlgElem wedge(const LegAlgebra& a, const AlgElem& u, const AlgElem& v) {
  AlgElem w(a);
  for (int c1 = 0; c1 < a.comps(); ++c1) {
    if (u.c[c1] == cplx(0.0)) continue;
    for (int c2 = 0; c2 < a.comps(); ++c2) {
      if (v.c[c2] == cplx(0.0)) continue;
      auto r = a.wedge(c1, c2);
      if (r.sign) w.c[r.comp] += double(r.sign) * u.c[c1] * v.c[c2];
    }
  }
  return w;
}

AlgElem conj_form(const LegAlgebra& a, const AlgElem& u) {
  AlgElem w(a);
  for (int c = 0; c < a.comps(); ++c) {
    auto r = a.conj(c);
    w.c[r.comp] += double(r.sign) * std::conj(u.c[c]);
  }
  return w;
}

AlgElem contract(const LegAlgebra& a, const std::vector<cplx>& vz,
                 const std::vector<cplx>& vzb, const AlgElem& u) {
  AlgElem w(a);
  for (int c = 0; c < a.comps(); ++c) {
    if (u.c[c] == cplx(0.0)) continue;
    for (int l = 0; l < a.legs(); ++l) {
      if (!vz.empty() && vz[l] != cplx(0.0)) {
        auto r = a.contract_dz(l, c);
        if (r.sign) w.c[r.comp] += double(r.sign) * vz[l] * u.c[c];
      }
      if (!vzb.empty() && vzb[l] != cplx(0.0)) {
        auto r = a.contract_dzbar(l, c);
        if (r.sign) w.c[r.comp] += double(r.sign) * vzb[l] * u.c[c];
      }
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// DiagonalHodge
// ---------------------------------------------------------------------------

DiagonalHodge::DiagonalHodge(const LegAlgebra& alg, std::vector<double> g)
    : alg_(&alg), g_(std::move(g)) {
  const int n = alg.legs();
  if (int(g_.size()) != n) throw LabError("DiagonalHodge: wrong metric size");
  for (double v : g_)
    if (!(v > 0.0)) throw NotPositive("DiagonalHodge: metric scale <= 0");

  const int nc = alg.comps();
  to_ortho_.assign(nc, 1.0);
  for (int c = 0; c < nc; ++c) {
    unsigned S = alg.s_mask(c), T = alg.t_mask(c);
    double s = 1.0;
    for (int a = 0; a < n; ++a) {
      if (S & (1u << a)) s /= std::sqrt(g_[a]);
      if (T & (1u << a)) s /= std::sqrt(g_[a]);
    }
    // coefficient in dz-frame * (1/to_ortho) = coefficient in eps-frame,
    // since dz^a = eps^a / sqrt(g_a).  Stored as the dz->eps multiplier.
    to_ortho_[c] = s;
  }

  // omega in the orthonormal frame: i sum eps^a ^ epsbar^a
  AlgElem om(alg);
  for (int a = 0; a < n; ++a)
    om.c[alg.comp_id(1u << a, 1u << a)] = I_UNIT;
  lmat_ = Mat::Zero(nc, nc);
  for (int c = 0; c < nc; ++c) {
    AlgElem e(alg);
    e.c[c] = 1.0;
    AlgElem w = wedge(alg, om, e);
    for (int d = 0; d < nc; ++d) lmat_(d, c) = w.c[d];
  }

  // vol = omega^n / n! in the orthonormal frame; its only component is the
  // top one.  Also the real density factor against dx^a dy^a.
  AlgElem vol(alg);
  vol.c[0] = 1.0;
  for (int a = 0; a < n; ++a) {
    AlgElem f(alg);
    f.c[alg.comp_id(1u << a, 1u << a)] = I_UNIT;
    vol = wedge(alg, vol, f);
  }
  const int top = alg.comp_id((1u << n) - 1u, (1u << n) - 1u);
  cplx vtop = vol.c[top];
  if (std::abs(std::abs(vtop) - 1.0) > 1e-13)
    throw LabError("DiagonalHodge: volume normalization broke");
  vol_ = vtop;

  // Hodge star in the orthonormal frame from u ^ conj(*u) = <u,u> vol:
  // *(eps^S epsbar^T) = gamma * eps^{comp T} epsbar^{comp S}.
  star_gamma_.assign(nc, cplx(0.0));
  star_comp_.assign(nc, 0);
  const unsigned full = (1u << n) - 1u;
  for (int c = 0; c < nc; ++c) {
    unsigned S = alg.s_mask(c), T = alg.t_mask(c);
    int ct = alg.comp_id(full & ~T, full & ~S);
    auto cj = alg.conj(ct);                  // conj(target) component + sign
    auto wd = alg.wedge(c, cj.comp);         // u ^ conj(target)
    if (!wd.sign || wd.comp != top)
      throw LabError("DiagonalHodge: star bookkeeping broke");
    // conj(gamma) * cj.sign * wd.sign = vtop  =>  gamma
    cplx gamma = std::conj(vtop) / double(cj.sign * wd.sign);
    star_comp_[c] = ct;
    star_gamma_[c] = gamma;
  }
}

cplx DiagonalHodge::inner(const AlgElem& u, const AlgElem& v) const {
  cplx s = 0.0;
  for (int c = 0; c < alg_->comps(); ++c) {
    double sc = to_ortho_[c];
    s += (u.c[c] * sc) * std::conj(v.c[c] * sc);
  }
  return s;
}

AlgElem DiagonalHodge::star(const AlgElem& u) const {
  AlgElem w(*alg_);
  for (int c = 0; c < alg_->comps(); ++c) {
    if (u.c[c] == cplx(0.0)) continue;
    int ct = star_comp_[c];
    // to orthonormal, apply constant star, back to dz-frame
    w.c[ct] += u.c[c] * to_ortho_[c] * star_gamma_[c] / to_ortho_[ct];
  }
  return w;
}

AlgElem DiagonalHodge::wedge_omega(const AlgElem& u) const {
  AlgElem om(*alg_);
  for (int a = 0; a < alg_->legs(); ++a)
    om.c[alg_->comp_id(1u << a, 1u << a)] = I_UNIT * g_[a];
  return wedge(*alg_, om, u);
}

AlgElem DiagonalHodge::wedge_omega_pow(int r, const AlgElem& u) const {
  AlgElem w = u;
  for (int i = 0; i < r; ++i) w = wedge_omega(w);
  for (int i = 2; i <= r; ++i)
    for (auto& cc : w.c) cc /= double(i);
  return w;
}

AlgElem DiagonalHodge::lambda(const AlgElem& u) const {
  // adjoint of omega^ : do it in the orthonormal frame where it is lmat_^H
  const int nc = alg_->comps();
  Vec v(nc);
  for (int c = 0; c < nc; ++c) v(c) = u.c[c] * to_ortho_[c];
  Vec w = lmat_.adjoint() * v;
  AlgElem out(*alg_);
  for (int c = 0; c < nc; ++c) out.c[c] = w(c) / to_ortho_[c];
  return out;
}

std::vector<AlgElem> DiagonalHodge::lefschetz_split(int p, int q,
                                                    const AlgElem& u) const {
  const int n = alg_->legs();
  const int k = p + q;
  const int rmin = std::max(0, k - n);
  const int rmax = std::min(p, q);
  const int nc = alg_->comps();

  // Basis of the primitive subspace of each (p-r, q-r): null space of Lambda
  // restricted to that bidegree, computed in the orthonormal frame (constant
  // matrices, metric-independent there).
  std::vector<Mat> primbasis(rmax - rmin + 1);
  std::vector<std::vector<int>> comps(rmax - rmin + 1);
  int total_cols = 0;
  for (int r = rmin; r <= rmax; ++r) {
    auto cl = alg_->comps_of_bidegree(p - r, q - r);
    comps[r - rmin] = cl;
    Mat lam = Mat::Zero(nc, cl.size());
    Mat emb = Mat::Zero(nc, cl.size());
    for (size_t j = 0; j < cl.size(); ++j) {
      Vec e = Vec::Zero(nc);
      e(cl[j]) = 1.0;
      emb.col(j) = e;
      lam.col(j) = lmat_.adjoint() * e;
    }
    // null space of lam via SVD
    Eigen::JacobiSVD<Mat> svd(lam, Eigen::ComputeFullV);
    int rank = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()(i) > 1e-12 * (svd.singularValues()(0) + 1e-300))
        ++rank;
    Mat null = svd.matrixV().rightCols(svd.matrixV().cols() - rank);
    primbasis[r - rmin] = emb * null;  // columns: primitive forms in ortho frame
    total_cols += int(null.cols());
  }

  // Assemble the map (coeffs of all primitive pieces) -> full component vector
  // through sum_r omega^r/r! ^ (.) in ortho frame, and solve.
  auto wedge_om_ortho = [&](int r, const Vec& v) {
    Vec w = v;
    for (int i = 0; i < r; ++i) w = lmat_ * w;
    for (int i = 2; i <= r; ++i) w /= double(i);
    return w;
  };
  auto cl_target = alg_->comps_of_bidegree(p, q);
  Mat A = Mat::Zero(cl_target.size(), total_cols);
  int col = 0;
  std::vector<std::pair<int, int>> colspan;  // (r index, col within primbasis)
  for (int r = rmin; r <= rmax; ++r) {
    const Mat& pb = primbasis[r - rmin];
    for (int j = 0; j < pb.cols(); ++j) {
      Vec w = wedge_om_ortho(r, pb.col(j));
      for (size_t i = 0; i < cl_target.size(); ++i) A(i, col) = w(cl_target[i]);
      colspan.emplace_back(r - rmin, j);
      ++col;
    }
  }
  Vec rhs(cl_target.size());
  for (size_t i = 0; i < cl_target.size(); ++i)
    rhs(i) = u.c[cl_target[i]] * to_ortho_[cl_target[i]];
  Vec sol = A.completeOrthogonalDecomposition().solve(rhs);

  std::vector<AlgElem> out(rmax - rmin + 1, AlgElem(*alg_));
  col = 0;
  for (int r = rmin; r <= rmax; ++r) {
    const Mat& pb = primbasis[r - rmin];
    Vec acc = Vec::Zero(nc);
    for (int j = 0; j < pb.cols(); ++j) acc += sol(col++) * pb.col(j);
    AlgElem e(*alg_);
    for (int c = 0; c < nc; ++c) e.c[c] = acc(c) / to_ortho_[c];
    out[r - rmin] = e;
  }
  return out;
}

AlgElem DiagonalHodge::star_via_lefschetz(int p, int q,
                                          const AlgElem& u) const {
  const int n = alg_->legs();
  auto parts = lefschetz_split(p, q, u);
  const int rmin = std::max(0, p + q - n);
  AlgElem acc(*alg_);
  for (size_t idx = 0; idx < parts.size(); ++idx) {
    int r = rmin + int(idx);
    int pw = n + r - p - q;
    // i^{(p+q-2r)^2} (-1)^{p-r}
    int e4 = ((p + q - 2 * r) * (p + q - 2 * r)) % 4;
    cplx ii = (e4 == 0) ? cplx(1) : (e4 == 1 ? I_UNIT : (e4 == 2 ? cplx(-1) : -I_UNIT));
    cplx coef = ii * ((((p - r) % 2) == 0) ? 1.0 : -1.0);
    AlgElem term = wedge_omega_pow(pw, parts[idx]);
    for (int c = 0; c < alg_->comps(); ++c) acc.c[c] += coef * term.c[c];
  }
  return acc;
}

}  // namespace hdib
