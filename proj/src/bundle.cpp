#include "hdib/bundle.hpp"

#include <cmath>
#include <map>

namespace hdib {

namespace {

// conditioning guard on a Hermitian positive matrix
void require_well_conditioned(const Mat& M, double limit, const char* what) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.adjoint()),
                                        Eigen::EigenvaluesOnly);
  double lo = es.eigenvalues().minCoeff();
  double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi > limit * lo)
    throw FrameDegenerate(std::string(what) +
                          ": conditioning beyond the frame limit");
}

}  // namespace

DirectImageBundle::DirectImageBundle(const FiberCalculus& X,
                                     const FamilyWeight& w,
                                     const TotalKahler* geom, int p, int q)
    : DirectImageBundle(X, w, geom, p, q, Options{}) {}

DirectImageBundle::DirectImageBundle(const FiberCalculus& X,
                                     const FamilyWeight& w,
                                     const TotalKahler* geom, int p, int q,
                                     Options opt)
    : X_(&X), w_(&w), geom_(geom), p_(p), q_(q), m_(w.vars()), opt_(opt) {
  if (X.n() != 1)
    throw NotSupported("DirectImageBundle: needs a 1-factor fiber");
  if (p < 0 || p > 1 || q < 0 || q > 1)
    throw LabError("DirectImageBundle: bidegree out of range");
  if (geom_ && geom_->m() != m_)
    throw LabError("DirectImageBundle: geometry/weight parameter mismatch");
  legs_ = p + q;
  qw_ = X.quad_weight();

  // center Hodge engine (flat or twisted fiber scale at t = 0)
  std::array<cplx, kMaxPars> t0{};
  RVec g0 = geom_ ? geom_->g_ff(t0)
                  : RVec::Constant(X.npoints(), X.factor(0).flat_g());
  wh0_.emplace(X, w.section_weight(t0, g0));

  int c = X.alg().comp_id(p ? 1u : 0u, q ? 1u : 0u);
  E_ = wh0_->eval_comp(c);
  U_ = wh0_->harmonic(p, q).basis;
  rank_ = int(U_.cols());
  if (rank_ == 0) throw LabError("DirectImageBundle: empty direct image");

  if (q_ > 0) {
    Dm_ = wh0_->dbar_matrix(p, q - 1);
    Eigen::JacobiSVD<Mat> svd(Dm_, Eigen::ComputeThinU | Eigen::ComputeThinV);
    int r = 0;
    double smax = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()(i) > opt_.rank_tol * smax) ++r;
    ZD_ = Dm_ * svd.matrixV().leftCols(r);
  }

  // closed-form derivative fields of log W at the center:
  //   W = 2 tau2 g^{1-legs} e^{-phi},
  //   d_j log W = (1-legs) (d_j g)/g - phi_j, and similarly for mixed pairs.
  W0_ = weight_field(t0);
  const TotalField& phi = w_->field();
  RVec gv = g0;
  double s = double(1 - legs_);
  for (int j = 0; j < m_; ++j) {
    Vec lj = -phi.d_t(j).eval(t0);
    if (geom_) {
      Vec gj = geom_->twist().d_z(0).d_zbar(0).d_t(j).eval(t0);
      lj += s * gj.cwiseQuotient(gv.cast<cplx>());
    }
    logW_j_.push_back(lj);
  }
  for (int j = 0; j < m_; ++j)
    for (int k = 0; k < m_; ++k) {
      Vec ljk = -phi.d_t(j).d_tbar(k).eval(t0);
      if (geom_) {
        TotalField gzz = geom_->twist().d_z(0).d_zbar(0);
        Vec gj = gzz.d_t(j).eval(t0);
        Vec gk = gzz.d_tbar(k).eval(t0);
        Vec gjk = gzz.d_t(j).d_tbar(k).eval(t0);
        Vec g2 = gv.cwiseProduct(gv).cast<cplx>();
        ljk += s * (gjk.cwiseQuotient(gv.cast<cplx>()) -
                    gj.cwiseProduct(gk).cwiseQuotient(g2));
      }
      logW_jk_.push_back(ljk);
    }
}

RVec DirectImageBundle::weight_field(
    const std::array<cplx, kMaxPars>& t) const {
  RVec g = geom_ ? geom_->g_ff(t)
                 : RVec::Constant(X_->npoints(), X_->factor(0).flat_g());
  if (g.minCoeff() <= 0.0)
    throw FrameDegenerate("DirectImageBundle: fiber scale lost positivity");
  RVec ph = w_->phi_values(t);
  double two_tau2 = 2.0 * X_->factor(0).tau2();
  return two_tau2 * g.array().pow(1 - legs_).matrix().cwiseProduct(
                        (-ph.array()).exp().matrix());
}

Mat DirectImageBundle::gram_from_weight(const Vec& w) const {
  return E_.adjoint() * (qw_ * w).asDiagonal() * E_;
}

Mat DirectImageBundle::fiber_gram(const std::array<cplx, kMaxPars>& t) const {
  return gram_from_weight(weight_field(t).cast<cplx>());
}

DirectImageBundle::Assembled DirectImageBundle::assemble(
    const std::array<cplx, kMaxPars>& t) const {
  Assembled out;
  out.G = fiber_gram(t);
  if (q_ == 0 || ZD_.cols() == 0) {
    out.S = U_;
  } else {
    Mat N = ZD_.adjoint() * out.G * ZD_;
    require_well_conditioned(N, opt_.cond_limit,
                             "direct-image range solve");
    Eigen::LLT<Mat> llt(0.5 * (N + N.adjoint()));
    if (llt.info() != Eigen::Success)
      throw FrameDegenerate("direct-image range solve: factorization failed");
    out.S = U_ - ZD_ * llt.solve(ZD_.adjoint() * (out.G * U_));
  }
  Mat A = out.S.adjoint() * out.G * out.S;
  out.A = 0.5 * (A + A.adjoint());
  require_well_conditioned(out.A, opt_.cond_limit, "direct-image metric");
  return out;
}

Mat DirectImageBundle::frame(const std::array<cplx, kMaxPars>& t) const {
  return assemble(t).S;
}

Mat DirectImageBundle::metric(const std::array<cplx, kMaxPars>& t) const {
  return assemble(t).A;
}

Mat DirectImageBundle::d_metric(int j) const {
  Vec ins = logW_j_[j].cwiseProduct(W0_.cast<cplx>());
  return U_.adjoint() * gram_from_weight(ins) * U_;
}

Mat DirectImageBundle::dbar_metric(int k) const {
  return d_metric(k).adjoint();
}

Mat DirectImageBundle::frame_dbar_derivative(int k) const {
  Vec ins = logW_j_[k].conjugate().cwiseProduct(W0_.cast<cplx>());
  return range_correction(ins);
}

Mat DirectImageBundle::frame_d_derivative(int j) const {
  Vec ins = logW_j_[j].cwiseProduct(W0_.cast<cplx>());
  return range_correction(ins);
}

Mat DirectImageBundle::range_correction(const Vec& insert) const {
  if (q_ == 0 || ZD_.cols() == 0) return Mat::Zero(U_.rows(), U_.cols());
  Mat dG = gram_from_weight(insert);
  Mat G0 = gram_from_weight(W0_.cast<cplx>());
  Mat N = ZD_.adjoint() * G0 * ZD_;
  Eigen::LLT<Mat> llt(0.5 * (N + N.adjoint()));
  if (llt.info() != Eigen::Success)
    throw FrameDegenerate("direct-image range solve: factorization failed");
  return -ZD_ * llt.solve(ZD_.adjoint() * (dG * U_));
}

Mat DirectImageBundle::dd_metric(int j, int k) const {
  Vec lj = logW_j_[j];
  Vec lkb = logW_j_[k].conjugate();
  Vec ins2 = (logW_jk_[j * m_ + k] + lj.cwiseProduct(lkb))
                 .cwiseProduct(W0_.cast<cplx>());
  Mat out = U_.adjoint() * gram_from_weight(ins2) * U_;
  if (q_ > 0 && ZD_.cols() > 0) {
    Mat dGj = gram_from_weight(lj.cwiseProduct(W0_.cast<cplx>()));
    Mat dSk = frame_dbar_derivative(k);
    out += dSk.adjoint() * dGj * U_ + U_.adjoint() * dGj * dSk;
  }
  return out;
}

Mat DirectImageBundle::curvature_pairing(int j, int k) const {
  std::array<cplx, kMaxPars> t0{};
  Mat A0 = metric(t0);
  Mat dAj = d_metric(j);
  Mat dAk = dbar_metric(k);
  return dAk * A0.llt().solve(dAj) - dd_metric(j, k);
}

double DirectImageBundle::holomorphy_residual(int k) const {
  std::array<cplx, kMaxPars> t0{};
  Mat dS = frame_dbar_derivative(k);
  Mat G0 = gram_from_weight(W0_.cast<cplx>());
  // harmonic projection of the derivative: U (A0^-1) U^H G0 dS
  Mat A0 = metric(t0);
  Mat proj = U_ * A0.llt().solve(U_.adjoint() * (G0 * dS));
  double scale = std::sqrt(std::abs((U_.adjoint() * G0 * U_).trace()));
  return std::sqrt(std::abs((proj.adjoint() * G0 * proj).trace())) /
         std::max(scale, 1e-300);
}

double DirectImageBundle::holomorphy_residual_fd(int k, double h) const {
  std::array<cplx, kMaxPars> tp{}, tm{}, tip{}, tim{};
  tp[k] = h;
  tm[k] = -h;
  tip[k] = cplx(0.0, h);
  tim[k] = cplx(0.0, -h);
  // dbar_k = (d_u + i d_v)/2 through central differences of the frame
  Mat dS = 0.5 * ((frame(tp) - frame(tm)) / (2.0 * h) +
                  I_UNIT * (frame(tip) - frame(tim)) / (2.0 * h));
  std::array<cplx, kMaxPars> t0{};
  Mat G0 = gram_from_weight(W0_.cast<cplx>());
  Mat A0 = metric(t0);
  Mat proj = U_ * A0.llt().solve(U_.adjoint() * (G0 * dS));
  double scale = std::sqrt(std::abs((U_.adjoint() * G0 * U_).trace()));
  return std::sqrt(std::abs((proj.adjoint() * G0 * proj).trace())) /
         std::max(scale, 1e-300);
}

DirectImageBundle::FdResult DirectImageBundle::fd_curvature(double h) const {
  auto attempt = [&](double step) {
    // metric evaluations cached by real 2m-displacement
    std::map<std::array<double, 4>, Mat> cache;
    auto Aat = [&](std::array<double, 4> d) -> const Mat& {
      auto it = cache.find(d);
      if (it != cache.end()) return it->second;
      std::array<cplx, kMaxPars> t{};
      for (int j = 0; j < m_; ++j) t[j] = cplx(d[2 * j], d[2 * j + 1]);
      return cache.emplace(d, metric(t)).first->second;
    };
    auto shift = [&](int axis, double v) {
      std::array<double, 4> d{};
      d[axis] = v;
      return d;
    };
    int r = rank_;
    Mat A0 = Aat({});
    Eigen::LLT<Mat> llt(A0);

    // 4th-order first derivatives along each real axis
    auto axis_d1 = [&](int axis) {
      return (-Aat(shift(axis, 2 * step)) + 8.0 * Aat(shift(axis, step)) -
              8.0 * Aat(shift(axis, -step)) + Aat(shift(axis, -2 * step))) /
             (12.0 * step);
    };
    // 4th-order second derivatives along each real axis
    auto axis_d2 = [&](int axis) {
      return (-Aat(shift(axis, 2 * step)) + 16.0 * Aat(shift(axis, step)) -
              30.0 * A0 + 16.0 * Aat(shift(axis, -step)) -
              Aat(shift(axis, -2 * step))) /
             (12.0 * step * step);
    };
    // Richardson-improved corner stencil for mixed real partials
    auto cross_d2 = [&](int ax1, int ax2) {
      auto corner = [&](double s) {
        std::array<double, 4> pp{}, pm{}, mp{}, mm{};
        pp[ax1] = s;
        pp[ax2] = s;
        pm[ax1] = s;
        pm[ax2] = -s;
        mp[ax1] = -s;
        mp[ax2] = s;
        mm[ax1] = -s;
        mm[ax2] = -s;
        return ((Aat(pp) - Aat(pm) - Aat(mp)) + Aat(mm)) / (4.0 * s * s);
      };
      Mat ch = corner(step), ch2 = corner(0.5 * step);
      return ((4.0 * ch2 - ch) / 3.0).eval();
    };

    std::vector<Mat> dA(m_), dAb(m_);
    for (int j = 0; j < m_; ++j) {
      Mat du = axis_d1(2 * j), dv = axis_d1(2 * j + 1);
      dA[j] = 0.5 * (du - I_UNIT * dv);
      dAb[j] = 0.5 * (du + I_UNIT * dv);
    }

    FdResult out;
    out.step = step;
    out.P.resize(size_t(m_) * m_);
    for (int j = 0; j < m_; ++j)
      for (int k = 0; k < m_; ++k) {
        Mat dd(r, r);
        if (j == k) {
          dd = 0.25 * (axis_d2(2 * j) + axis_d2(2 * j + 1));
        } else {
          Mat duu = cross_d2(2 * j, 2 * k), duv = cross_d2(2 * j, 2 * k + 1);
          Mat dvu = cross_d2(2 * j + 1, 2 * k),
              dvv = cross_d2(2 * j + 1, 2 * k + 1);
          dd = 0.25 * (duu + I_UNIT * duv - I_UNIT * dvu + dvv);
        }
        out.P[size_t(j) * m_ + k] = dAb[k] * llt.solve(dA[j]) - dd;
      }
    return out;
  };

  try {
    return attempt(h);
  } catch (const FrameDegenerate&) {
    return attempt(0.5 * h);  // one retry at half step
  }
}

Mat DirectImageBundle::nakano_matrix(const std::vector<Mat>& P, int m, int r) {
  Mat N = Mat::Zero(size_t(m) * r, size_t(m) * r);
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < m; ++k)
      for (int be = 0; be < r; ++be)
        for (int al = 0; al < r; ++al)
          N(j * r + be, k * r + al) = P[size_t(j) * m + k](be, al);
  return 0.5 * (N + N.adjoint());
}

}  // namespace hdib
