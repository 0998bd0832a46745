#include "hdib/hodge.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <string>

namespace hdib {

namespace {

// small dense Kronecker product, joint index = i0 + n0 * i1  =>  kron(A1, A0)
Mat kron2(const Mat& A1, const Mat& A0) {
  Mat K(A1.rows() * A0.rows(), A1.cols() * A0.cols());
  for (Eigen::Index i = 0; i < A1.rows(); ++i)
    for (Eigen::Index j = 0; j < A1.cols(); ++j)
      K.block(i * A0.rows(), j * A0.cols(), A0.rows(), A0.cols()) =
          A1(i, j) * A0;
  return K;
}

int key_pq(int p, int q) { return p * 16 + q; }

}  // namespace

WeightedHodge::WeightedHodge(const FiberCalculus& X, SectionWeight w)
    : X_(&X), w_(std::move(w)) {
  if (X.n() != 1)
    throw NotSupported("pointwise (non-separable) weights need n = 1");
  if (w_.wtot.size() != X.npoints() || w_.gscale.size() != 1 ||
      w_.gscale[0].size() != X.npoints())
    throw LabError("weight fields do not match the grid");
  if (w_.wtot.minCoeff() <= 0.0 || w_.gscale[0].minCoeff() <= 0.0)
    throw NotPositive("weight and metric scale must be positive");
  if (!w_.dlogw.empty() &&
      (w_.dlogw.size() != 1 || w_.dlogw[0].size() != X.npoints()))
    throw LabError("dlogw field does not match the grid");
}

WeightedHodge::WeightedHodge(const FiberCalculus& X, std::vector<RVec> wfac,
                             std::vector<RVec> gfac)
    : X_(&X), separable_(true), wfac_(std::move(wfac)), gfac_(std::move(gfac)) {
  if (int(wfac_.size()) != X.n() || int(gfac_.size()) != X.n())
    throw LabError("separable weight needs one field per factor");
  for (int a = 0; a < X.n(); ++a) {
    if (wfac_[a].size() != X.factor(a).points() ||
        gfac_[a].size() != X.factor(a).points())
      throw LabError("separable weight fields do not match the factor grid");
    if (wfac_[a].minCoeff() <= 0.0 || gfac_[a].minCoeff() <= 0.0)
      throw NotPositive("weight and metric scale must be positive");
  }
  if (X.n() == 1) {
    // canonicalize to the joint-grid path
    w_.wtot = wfac_[0];
    w_.gscale = {gfac_[0]};
    separable_ = false;
  }
}

const Mat& WeightedHodge::gram(int comp) const {
  auto it = gram_cache_.find(comp);
  if (it != gram_cache_.end()) return it->second;
  const auto& alg = X_->alg();
  Mat M;
  if (!separable_) {
    const unsigned S = alg.s_mask(comp), T = alg.t_mask(comp);
    int legs = __builtin_popcount(S) + __builtin_popcount(T);
    RVec W = w_.wtot;
    for (int i = 0; i < legs; ++i) W = W.cwiseQuotient(w_.gscale[0]);
    M = X_->factor(0).gram((T & 1u) != 0u, W);
  } else {
    std::vector<Mat> fg(X_->n());
    for (int a = 0; a < X_->n(); ++a) {
      const unsigned S = alg.s_mask(comp), T = alg.t_mask(comp);
      int legs = ((S >> a) & 1u) + ((T >> a) & 1u);
      RVec W = wfac_[a];
      for (int i = 0; i < legs; ++i) W = W.cwiseQuotient(gfac_[a]);
      fg[a] = X_->factor(a).gram(((T >> a) & 1u) != 0u, W);
    }
    M = (X_->n() == 2) ? kron2(fg[1], fg[0]) : fg[0];
  }
  return gram_cache_.emplace(comp, std::move(M)).first->second;
}

Mat WeightedHodge::gram_pq(int p, int q) const {
  auto cc = X_->alg().comps_of_bidegree(p, q);
  int dim = 0;
  for (int c : cc) dim += X_->comp_size(c);
  Mat G = Mat::Zero(dim, dim);
  int off = 0;
  for (int c : cc) {
    int s = X_->comp_size(c);
    G.block(off, off, s, s) = gram(c);
    off += s;
  }
  return G;
}

cplx WeightedHodge::inner(const CoefForm& u, const CoefForm& v) const {
  if (u.p != v.p || u.q != v.q) throw LabError("inner: bidegree mismatch");
  cplx acc = 0.0;
  for (int c : X_->alg().comps_of_bidegree(u.p, u.q))
    acc += (v.comp[c].adjoint() * (gram(c) * u.comp[c]))(0, 0);
  return acc;
}

double WeightedHodge::norm(const CoefForm& u) const {
  return std::sqrt(std::max(0.0, inner(u, u).real()));
}

Vec WeightedHodge::pack(const CoefForm& u) const {
  auto cc = X_->alg().comps_of_bidegree(u.p, u.q);
  int dim = 0;
  for (int c : cc) dim += X_->comp_size(c);
  Vec x(dim);
  int off = 0;
  for (int c : cc) {
    x.segment(off, u.comp[c].size()) = u.comp[c];
    off += int(u.comp[c].size());
  }
  return x;
}

CoefForm WeightedHodge::unpack(int p, int q, const Vec& x) const {
  CoefForm u = X_->zero_form(p, q);
  int off = 0;
  for (int c : X_->alg().comps_of_bidegree(p, q)) {
    u.comp[c] = x.segment(off, X_->comp_size(c));
    off += X_->comp_size(c);
  }
  if (off != x.size()) throw LabError("unpack: size mismatch");
  return u;
}

Mat WeightedHodge::dbar_matrix(int p, int q) const {
  auto src = X_->alg().comps_of_bidegree(p, q);
  int scount = 0, dcount = 0;
  for (int c : src) scount += X_->comp_size(c);
  for (int c : X_->alg().comps_of_bidegree(p, q + 1)) dcount += X_->comp_size(c);
  Mat A = Mat::Zero(dcount, scount);
  int off = 0;
  for (int c : src) {
    for (int i = 0; i < X_->comp_size(c); ++i) {
      CoefForm e = X_->zero_form(p, q);
      e.comp[c](i) = 1.0;
      A.col(off + i) = pack(X_->apply_dbar(e));
    }
    off += X_->comp_size(c);
  }
  return A;
}

Mat WeightedHodge::dE_matrix(int p, int q) const {
  auto src = X_->alg().comps_of_bidegree(p, q);
  int scount = 0, dcount = 0;
  for (int c : src) scount += X_->comp_size(c);
  auto dst = X_->alg().comps_of_bidegree(p + 1, q);
  std::map<int, int> doff;
  for (int c : dst) {
    doff[c] = dcount;
    dcount += X_->comp_size(c);
  }
  Mat A = Mat::Zero(dcount, scount);
  int off = 0;
  for (int c : src) {
    for (int i = 0; i < X_->comp_size(c); ++i) {
      CoefForm e = X_->zero_form(p, q);
      e.comp[c](i) = 1.0;
      A.col(off + i) = pack(X_->apply_dE(e));
    }
    off += X_->comp_size(c);
  }
  // weight corrections: + dlogw_a * (dz_a ^ .)
  if (!separable_ && !w_.dlogw.empty() && w_.dlogw[0].cwiseAbs().maxCoeff() > 0) {
    const auto& alg = X_->alg();
    const int wcomp = alg.comp_id(1u, 0u);
    const double qw = X_->quad_weight();
    off = 0;
    for (int c : src) {
      auto sg = alg.wedge(wcomp, c);
      if (sg.sign != 0) {
        const Mat& Es = eval_comp(c);
        const Mat& Et = eval_comp(sg.comp);
        RVec Wt = comp_weight(sg.comp) * qw;
        Mat rhs = Et.adjoint() *
                  (Wt.cast<cplx>().cwiseProduct(w_.dlogw[0])).asDiagonal() * Es;
        Mat corr = Eigen::LLT<Mat>(gram(sg.comp)).solve(rhs);
        A.block(doff.at(sg.comp), off, corr.rows(), corr.cols()) +=
            double(sg.sign) * corr;
      }
      off += X_->comp_size(c);
    }
  }
  return A;
}

const MetricFactor& WeightedHodge::gram_factor(int p, int q) const {
  int key = key_pq(p, q);
  auto it = mf_cache_.find(key);
  if (it != mf_cache_.end()) return *it->second;
  auto mf = std::make_unique<MetricFactor>(MetricFactor::make(gram_pq(p, q)));
  return *mf_cache_.emplace(key, std::move(mf)).first->second;
}

Mat WeightedHodge::dbar_adjoint(int p, int q) const {
  Mat A = dbar_matrix(p, q);
  Mat rhs = A.adjoint() * gram_pq(p, q + 1);
  return Eigen::LLT<Mat>(gram_pq(p, q)).solve(rhs);
}

Mat WeightedHodge::laplacian(int p, int q) const {
  Mat Dq = dbar_matrix(p, q);
  Mat L = dbar_adjoint(p, q) * Dq;
  if (q > 0) {
    Mat Dm = dbar_matrix(p, q - 1);
    L += Dm * dbar_adjoint(p, q - 1);
  }
  return L;
}

const WeightedHodge::HarmonicSpace& WeightedHodge::harmonic(int p, int q) const {
  int key = key_pq(p, q);
  auto it = harm_cache_.find(key);
  if (it != harm_cache_.end()) return it->second;

  MetricEigs me = metric_self_adjoint_eigs(laplacian(p, q), gram_factor(p, q));
  HarmonicSpace hs;
  hs.eigs = me.values;
  const double lmax = me.values.size() ? me.values.maxCoeff() : 0.0;
  const double thr = X_->spec().kernel_rel_threshold;
  if (lmax <= 0.0) {
    hs.dim = int(me.values.size());
    hs.basis = me.vectors;
    hs.gap = std::numeric_limits<double>::infinity();
    return harm_cache_.emplace(key, std::move(hs)).first->second;
  }
  int k = 0;
  while (k < me.values.size() && me.values(k) <= thr * lmax) ++k;
  for (int i = 0; i < me.values.size(); ++i)
    if (me.values(i) > thr * lmax && me.values(i) <= 10.0 * thr * lmax) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "laplacian (%d,%d): eigenvalue %.3e inside the ambiguous "
                    "band (%.3e, %.3e]",
                    p, q, me.values(i), thr * lmax, 10.0 * thr * lmax);
      throw AmbiguousKernel(buf);
    }
  hs.dim = k;
  hs.basis = me.vectors.leftCols(k);
  double last_kernel = (k > 0) ? std::max(me.values(k - 1), 0.0) : 0.0;
  double first_nz = (k < me.values.size())
                        ? me.values(k)
                        : std::numeric_limits<double>::infinity();
  hs.gap = first_nz / std::max(last_kernel, 2.2e-16 * lmax);
  return harm_cache_.emplace(key, std::move(hs)).first->second;
}

CoefForm WeightedHodge::harmonic_project(const CoefForm& u) const {
  const HarmonicSpace& hs = harmonic(u.p, u.q);
  Vec x = pack(u);
  Vec proj = hs.basis * (hs.basis.adjoint() * (gram_pq(u.p, u.q) * x));
  return unpack(u.p, u.q, proj);
}

CoefForm WeightedHodge::dbar_minimal_solve(const CoefForm& rhs) const {
  if (rhs.q < 1) throw LabError("dbar_minimal_solve: rhs must have q >= 1");
  const int p = rhs.p, q = rhs.q - 1;
  Mat A = dbar_matrix(p, q);
  Vec a = metric_min_norm_solve(A, pack(rhs), gram_factor(p, q),
                                gram_factor(p, q + 1));
  return unpack(p, q, a);
}

RVec WeightedHodge::comp_weight(int c) const {
  if (separable_) throw NotSupported("comp_weight needs the n = 1 weight path");
  const auto& alg = X_->alg();
  int legs = __builtin_popcount(alg.s_mask(c)) + __builtin_popcount(alg.t_mask(c));
  RVec W = w_.wtot;
  for (int i = 0; i < legs; ++i) W = W.cwiseQuotient(w_.gscale[0]);
  return W;
}

const Mat& WeightedHodge::eval_comp(int c) const {
  auto it = eval_cache_.find(c);
  if (it != eval_cache_.end()) return it->second;
  if (X_->n() != 1) throw NotSupported("eval_comp needs n = 1");
  Mat E = X_->factor(0).eval((X_->alg().t_mask(c) & 1u) != 0u);
  return eval_cache_.emplace(c, std::move(E)).first->second;
}

CoefForm WeightedHodge::grid_project(int p, int q, const GridForm& vals) const {
  if (separable_) throw NotSupported("grid_project needs the n = 1 weight path");
  CoefForm u = X_->zero_form(p, q);
  const double qw = X_->quad_weight();
  for (int c : X_->alg().comps_of_bidegree(p, q)) {
    const Mat& E = eval_comp(c);
    RVec W = comp_weight(c) * qw;
    Vec rhs = E.adjoint() * W.cast<cplx>().cwiseProduct(vals.comp[c]);
    u.comp[c] = Eigen::LLT<Mat>(gram(c)).solve(rhs);
  }
  return u;
}

CoefForm WeightedHodge::star(const CoefForm& u) const {
  if (separable_ || X_->n() != 1)
    throw NotSupported("star needs the n = 1 weight path");
  const auto& alg = X_->alg();
  const int n = 1;
  GridForm vals = X_->eval(u);
  GridForm out;
  out.p = n - u.q;
  out.q = n - u.p;
  out.comp.assign(alg.comps(), Vec());
  for (int c : alg.comps_of_bidegree(out.p, out.q))
    out.comp[c] = Vec::Zero(X_->npoints());
  auto in_cc = alg.comps_of_bidegree(u.p, u.q);
  for (long pt = 0; pt < X_->npoints(); ++pt) {
    DiagonalHodge H(alg, {w_.gscale[0](pt)});
    AlgElem e(alg);
    for (int c : in_cc) e.c[c] = vals.comp[c](pt);
    AlgElem s = H.star(e);
    for (int c : alg.comps_of_bidegree(out.p, out.q)) out.comp[c](pt) = s.c[c];
  }
  return grid_project(out.p, out.q, out);
}

GridForm WeightedHodge::commutator_solve(const GridForm& u,
                                         const std::vector<Vec>& theta,
                                         double eps) const {
  const auto& alg = X_->alg();
  const int n = X_->n();
  if (u.p != n) throw LabError("commutator_solve expects (n, q) forms");
  if (int(theta.size()) != n * n)
    throw LabError("commutator_solve: theta needs n*n component fields");
  auto cc = alg.comps_of_bidegree(u.p, u.q);
  const int m = int(cc.size());
  GridForm out;
  out.p = u.p;
  out.q = u.q;
  out.comp.assign(alg.comps(), Vec());
  for (int c : cc) out.comp[c] = Vec::Zero(X_->npoints());

  std::string bad;
  int nbad = 0;
  Mat Q(m, m);
  Vec rhs(m), x(m);
  for (long pt = 0; pt < X_->npoints(); ++pt) {
    std::vector<double> g(n);
    for (int a = 0; a < n; ++a)
      g[a] = separable_ ? gfac_[a](a == 0 ? pt % X_->factor(0).points()
                                          : pt / X_->factor(0).points())
                        : w_.gscale[0](pt);
    DiagonalHodge H(alg, g);
    AlgElem T(alg);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        T.c[alg.comp_id(1u << a, 1u << b)] = I_UNIT * theta[a * n + b](pt);
    for (int j = 0; j < m; ++j) {
      AlgElem e(alg);
      e.c[cc[j]] = 1.0;
      AlgElem r = wedge(alg, T, H.lambda(e));
      AlgElem s = H.lambda(wedge(alg, T, e));
      for (int i = 0; i < m; ++i) {
        Q(i, j) = r.c[cc[i]] - s.c[cc[i]];
        if (i == j) Q(i, j) += eps;
      }
    }
    Eigen::JacobiSVD<Mat> svd(Q, Eigen::ComputeFullU | Eigen::ComputeFullV);
    double smin = svd.singularValues()(m - 1);
    double smax = svd.singularValues()(0);
    if (smin <= 1e-12 * (smax + std::abs(eps)) + 1e-300) {
      if (nbad < 4) {
        char buf[96];
        std::snprintf(buf, sizeof buf, " (x=%.4f, y=%.4f)", X_->xs(0, pt),
                      X_->ys(0, pt));
        bad += buf;
      }
      ++nbad;
      continue;
    }
    for (int i = 0; i < m; ++i) rhs(i) = u.comp[cc[i]](pt);
    x = svd.solve(rhs);
    for (int i = 0; i < m; ++i) out.comp[cc[i]](pt) = x(i);
  }
  if (nbad > 0) {
    throw SingularCommutator("curvature commutator not invertible at " +
                             std::to_string(nbad) + " grid points, first" +
                             bad);
  }
  return out;
}

}  // namespace hdib
