#include "hdib/torus.hpp"

#include <algorithm>
#include <cmath>

namespace hdib {

namespace {
double wrap_angle(double a) {
  while (a > PI) a -= 2.0 * PI;
  while (a <= -PI) a += 2.0 * PI;
  return a;
}
}  // namespace

// ---------------------------------------------------------------------------
// FactorCalculus
// ---------------------------------------------------------------------------

FactorCalculus::FactorCalculus(const FactorGeometry& geo, int resolution,
                               int levels)
    : geo_(geo), N_(resolution) {
  if (geo_.tau.imag() <= 0.0)
    throw ConfigError("factor tau must have positive imaginary part");
  if (geo_.area <= 0.0) throw ConfigError("factor area must be positive");
  if (N_ < 8 || N_ % 2 != 0)
    throw ConfigError("resolution must be even and >= 8");
  Nq_ = 2 * N_;
  tau2_ = geo_.tau.imag();
  dd_ = std::abs(geo_.degree);
  sgn_ = (geo_.degree > 0) - (geo_.degree < 0);
  K_ = (levels > 0) ? levels : std::max(6, N_ / 2);
  B0_ = (dd_ > 0) ? PI * double(dd_) / tau2_ : 0.0;

  xs_.resize(points());
  ys_.resize(points());
  for (int j = 0; j < Nq_; ++j)
    for (int i = 0; i < Nq_; ++i) {
      xs_(i + Nq_ * j) = double(i) / Nq_;
      ys_(i + Nq_ * j) = double(j) / Nq_;
    }

  if (dd_ == 0)
    build_fourier();
  else
    build_landau();
}

void FactorCalculus::build_fourier() {
  const int M = N_ / 2 - 1;
  const int side = 2 * M + 1;
  n_unbar_ = n_bar_ = side * side;
  modes_.reserve(n_unbar_);
  for (int n = -M; n <= M; ++n)
    for (int m = -M; m <= M; ++m) modes_.emplace_back(m, n);

  const double rt_a = std::sqrt(geo_.area);
  eval_unbar_.resize(points(), n_unbar_);
  for (int b = 0; b < n_unbar_; ++b) {
    auto [m, n] = modes_[b];
    for (int p = 0; p < points(); ++p) {
      double ph = 2.0 * PI * (m * xs_(p) + n * ys_(p));
      eval_unbar_(p, b) = cplx(std::cos(ph), std::sin(ph)) / rt_a;
    }
  }
  eval_bar_ = eval_unbar_;

  dbar_ = Mat::Zero(n_unbar_, n_unbar_);
  dE_u_ = Mat::Zero(n_unbar_, n_unbar_);
  const cplx tau = geo_.tau;
  for (int b = 0; b < n_unbar_; ++b) {
    auto [m, n] = modes_[b];
    dbar_(b, b) = PI * (tau * double(m) - double(n)) / tau2_;
    dE_u_(b, b) = PI * (double(n) - std::conj(tau) * double(m)) / tau2_;
  }
  dE_b_ = dE_u_;
  dbar_w_u_ = dbar_;
  dbar_w_b_ = dbar_;
}

void FactorCalculus::build_landau() {
  // Physical amplitudes of the magnetic oscillator basis for |d| = dd > 0:
  //   psi~_{k,s}(x,y) = C sum_{l = s mod dd} G_k(u_l)
  //                       * exp(i pi tau1 l^2/dd) exp(2 pi i l (x + tau1 y)),
  //   u_l = sqrt(2 pi dd tau2) (y + l/dd),  C = (2 dd tau2)^{1/4}/sqrt(A),
  // with G_0 = exp(-u^2/2) and the stable value recursion
  //   G_{k+1} = ( -i sqrt2 u G_k + sqrt k G_{k-1} ) / sqrt(k+1).
  // For degree < 0 the basis is the metric dual: amplitudes are the complex
  // conjugates and the ladder roles of dbar / D_z swap (with a sign), which
  // is exactly what keeps kernel dimensions structural on the negative side.
  const int lev_u = landau_levels(false);
  const int lev_b = landau_levels(true);
  const int lev_max = std::max(lev_u, lev_b);
  n_unbar_ = lev_u * dd_;
  n_bar_ = lev_b * dd_;

  const double tau1 = geo_.tau.real();
  const double s2 = std::sqrt(2.0 * PI * dd_ * tau2_);
  const double C = std::pow(2.0 * dd_ * tau2_, 0.25) / std::sqrt(geo_.area);
  const double ucut = 10.0 + 1.5 * std::sqrt(2.0 * lev_max + 1.0);

  Mat full = Mat::Zero(points(), lev_max * dd_);
  std::vector<cplx> gk(lev_max);
  const int lpad = int(std::ceil(dd_ * (1.0 + ucut / s2))) + 1;
  for (int s = 0; s < dd_; ++s) {
    for (int l = s - ((lpad - s) / dd_ + 2) * dd_; l <= lpad; l += dd_) {
      if ((l % dd_ + dd_) % dd_ != s) continue;  // keep l = s mod dd
      const double phc = PI * tau1 * double(l) * double(l) / dd_;
      for (int p = 0; p < points(); ++p) {
        const double u = s2 * (ys_(p) + double(l) / dd_);
        if (std::abs(u) > ucut) continue;
        // value recursion for all levels at once
        gk[0] = std::exp(-0.5 * u * u);
        if (lev_max > 1) gk[1] = -I_UNIT * std::sqrt(2.0) * u * gk[0];
        for (int k = 2; k < lev_max; ++k)
          gk[k] = (-I_UNIT * std::sqrt(2.0) * u * gk[k - 1] +
                   std::sqrt(double(k - 1)) * gk[k - 2]) /
                  std::sqrt(double(k));
        const double ph = phc + 2.0 * PI * l * (xs_(p) + tau1 * ys_(p));
        const cplx ef = C * cplx(std::cos(ph), std::sin(ph));
        for (int k = 0; k < lev_max; ++k) full(p, s + dd_ * k) += ef * gk[k];
      }
    }
  }
  if (sgn_ < 0) full = full.conjugate();

  eval_unbar_ = full.leftCols(lev_u * dd_);
  eval_bar_ = full.leftCols(lev_b * dd_);

  dbar_ = Mat::Zero(n_bar_, n_unbar_);
  dE_u_ = Mat::Zero(n_unbar_, n_unbar_);
  dE_b_ = Mat::Zero(n_bar_, n_bar_);
  auto idx = [&](int k, int s) { return s + dd_ * k; };
  if (sgn_ > 0) {
    // dbar psi_k = sqrt(B0 k) psi_{k-1};  D_z psi_k = -sqrt(B0 (k+1)) psi_{k+1}
    for (int s = 0; s < dd_; ++s) {
      for (int k = 1; k < lev_u; ++k)
        if (k - 1 < lev_b)
          dbar_(idx(k - 1, s), idx(k, s)) = std::sqrt(B0_ * k);
      for (int k = 0; k + 1 < lev_u; ++k)
        dE_u_(idx(k + 1, s), idx(k, s)) = -std::sqrt(B0_ * (k + 1));
      for (int k = 0; k + 1 < lev_b; ++k)
        dE_b_(idx(k + 1, s), idx(k, s)) = -std::sqrt(B0_ * (k + 1));
    }
  } else {
    // dbar chi_k = -sqrt(B0 (k+1)) chi_{k+1};  D_z chi_k = sqrt(B0 k) chi_{k-1}
    for (int s = 0; s < dd_; ++s) {
      for (int k = 0; k < lev_u; ++k)
        if (k + 1 < lev_b)
          dbar_(idx(k + 1, s), idx(k, s)) = -std::sqrt(B0_ * (k + 1));
      for (int k = 1; k < lev_u; ++k)
        dE_u_(idx(k - 1, s), idx(k, s)) = std::sqrt(B0_ * k);
      for (int k = 1; k < lev_b; ++k)
        dE_b_(idx(k - 1, s), idx(k, s)) = std::sqrt(B0_ * k);
    }
  }

  // Same ladder action expressed inside a single parity's coefficient space
  // (raise past the parity's own top level is chopped).
  dbar_w_u_ = Mat::Zero(n_unbar_, n_unbar_);
  dbar_w_b_ = Mat::Zero(n_bar_, n_bar_);
  if (sgn_ > 0) {
    for (int s = 0; s < dd_; ++s) {
      for (int k = 1; k < lev_u; ++k)
        dbar_w_u_(idx(k - 1, s), idx(k, s)) = std::sqrt(B0_ * k);
      for (int k = 1; k < lev_b; ++k)
        dbar_w_b_(idx(k - 1, s), idx(k, s)) = std::sqrt(B0_ * k);
    }
  } else {
    for (int s = 0; s < dd_; ++s) {
      for (int k = 0; k + 1 < lev_u; ++k)
        dbar_w_u_(idx(k + 1, s), idx(k, s)) = -std::sqrt(B0_ * (k + 1));
      for (int k = 0; k + 1 < lev_b; ++k)
        dbar_w_b_(idx(k + 1, s), idx(k, s)) = -std::sqrt(B0_ * (k + 1));
    }
  }
}

int FactorCalculus::landau_levels(bool barred) const {
  if (dd_ == 0) return 0;
  // Level budgets are offset by one between the parities so the chopped
  // ladder keeps exact kernel and cokernel dimensions (index = signed degree).
  if (sgn_ > 0) return barred ? K_ : K_ + 1;
  return barred ? K_ + 1 : K_;
}

Vec FactorCalculus::zvals() const {
  Vec z(points());
  for (int p = 0; p < points(); ++p)
    z(p) = cplx(xs_(p), 0.0) + geo_.tau * ys_(p);
  return z;
}

Mat FactorCalculus::pairing(bool barred_row, bool barred_col,
                            const RVec& W) const {
  if (W.size() != points()) throw LabError("pairing: weight size mismatch");
  if (dd_ == 0) {
    // Toeplitz assembly in mode space: entries depend only on the mode
    // difference, whose generalized Fourier coefficient we read off the grid.
    const int M = N_ / 2 - 1;
    const int wd = 4 * M + 1;
    Mat Px(Nq_, wd), Py(Nq_, wd);
    for (int i = 0; i < Nq_; ++i)
      for (int k = -2 * M; k <= 2 * M; ++k) {
        double ph = 2.0 * PI * k * double(i) / Nq_;
        cplx e = cplx(std::cos(ph), std::sin(ph));
        Px(i, k + 2 * M) = e;
        Py(i, k + 2 * M) = e;
      }
    Mat Wm(Nq_, Nq_);
    for (int j = 0; j < Nq_; ++j)
      for (int i = 0; i < Nq_; ++i) Wm(i, j) = W(i + Nq_ * j);
    Mat F = (Px.transpose() * Wm * Py) / double(points());  // F(dm, dn)
    const int nb = n_unbar_;
    Mat Mt(nb, nb);
    for (int a = 0; a < nb; ++a)
      for (int b = 0; b < nb; ++b) {
        int dm = modes_[b].first - modes_[a].first;
        int dn = modes_[b].second - modes_[a].second;
        Mt(a, b) = F(dm + 2 * M, dn + 2 * M) / geo_.area;
      }
    return Mt;
  }
  const Mat& Er = eval(barred_row);
  const Mat& Ec = eval(barred_col);
  Vec wq = (W.array() / double(points())).matrix().cast<cplx>();
  return Er.adjoint() * wq.asDiagonal() * Ec;
}

Mat FactorCalculus::gram(bool barred, const RVec& W) const {
  Mat G = pairing(barred, barred, W);
  return 0.5 * (G + Mat(G.adjoint()));
}

double FactorCalculus::flux_winding() const {
  // Winding of the y-period transition multiplier in the unitary gauge,
  // accumulated link by link along the x-cycle.  This is the lattice-gauge
  // holonomy datum that forces the total background flux to be 2 pi degree:
  // the interior plaquette phases sum to minus it.
  // arg eps~_tau(x, y=0) = -pi d (2x + tau1)
  const int d = geo_.degree;
  const double tau1 = geo_.tau.real();
  double total = 0.0;
  for (int i = 0; i < Nq_; ++i) {
    double x0 = double(i) / Nq_, x1 = double(i + 1) / Nq_;
    double a0 = -PI * d * (2.0 * x0 + tau1);
    double a1 = -PI * d * (2.0 * x1 + tau1);
    total += wrap_angle(a1 - a0);
  }
  return total / (2.0 * PI);
}

int FactorCalculus::h_structural(int q) const {
  const int d = geo_.degree;
  if (q == 0) return d > 0 ? d : (d == 0 ? 1 : 0);
  if (q == 1) return d > 0 ? 0 : (d == 0 ? 1 : -d);
  return 0;
}

// ---------------------------------------------------------------------------
// FiberCalculus
// ---------------------------------------------------------------------------

FiberCalculus::FiberCalculus(FiberSpec spec)
    : spec_(std::move(spec)), alg_(spec_.n()) {
  if (spec_.n() < 1 || spec_.n() > 2)
    throw ConfigError("fiber dimension must be 1 or 2");
  for (const auto& g : spec_.factors)
    fac_.emplace_back(g, spec_.resolution, spec_.levels);
}

long FiberCalculus::npoints() const {
  long p = 1;
  for (const auto& f : fac_) p *= f.points();
  return p;
}

double FiberCalculus::quad_weight() const {
  double w = 1.0;
  for (const auto& f : fac_) w /= double(f.points());
  return w;
}

double FiberCalculus::xs(int a, long p) const {
  long stride = 1;
  for (int b = 0; b < a; ++b) stride *= fac_[b].points();
  return fac_[a].xs()(int((p / stride) % fac_[a].points()));
}

double FiberCalculus::ys(int a, long p) const {
  long stride = 1;
  for (int b = 0; b < a; ++b) stride *= fac_[b].points();
  return fac_[a].ys()(int((p / stride) % fac_[a].points()));
}

int FiberCalculus::comp_size(int c) const {
  int s = 1;
  unsigned T = alg_.t_mask(c);
  for (int a = 0; a < n(); ++a) s *= fac_[a].count(T & (1u << a));
  return s;
}

CoefForm FiberCalculus::zero_form(int p, int q) const {
  CoefForm u;
  u.p = p;
  u.q = q;
  u.comp.resize(alg_.comps());
  for (int c : alg_.comps_of_bidegree(p, q)) u.comp[c] = Vec::Zero(comp_size(c));
  return u;
}

CoefForm FiberCalculus::random_form(int p, int q, Rng& rng) const {
  CoefForm u = zero_form(p, q);
  for (int c : alg_.comps_of_bidegree(p, q)) u.comp[c] = rng.gauss_vec(comp_size(c));
  return u;
}

Vec kron_apply(const std::vector<const Mat*>& ops, const Vec& u) {
  if (ops.size() == 1) return ops[0] ? (*ops[0]) * u : u;
  if (ops.size() != 2) throw LabError("kron_apply: only 1 or 2 factors");
  long r0 = ops[0] ? ops[0]->rows() : 0, c0 = ops[0] ? ops[0]->cols() : 0;
  long r1 = ops[1] ? ops[1]->rows() : 0, c1 = ops[1] ? ops[1]->cols() : 0;
  if (!ops[0]) {
    c1 = ops[1]->cols();
    c0 = u.size() / c1;
    r0 = c0;
  }
  if (!ops[1]) {
    c0 = ops[0]->cols();
    c1 = u.size() / c0;
    r1 = c1;
  }
  Eigen::Map<const Mat> X(u.data(), c0, c1);
  Mat Y;
  if (ops[0] && ops[1])
    Y = (*ops[0]) * X * ops[1]->transpose();
  else if (ops[0])
    Y = (*ops[0]) * X;
  else
    Y = X * ops[1]->transpose();
  return Eigen::Map<const Vec>(Y.data(), r0 * r1);
}

CoefForm FiberCalculus::apply_dbar(const CoefForm& u) const {
  CoefForm w = zero_form(u.p, u.q + 1);
  if (u.q + 1 > n()) return w;
  for (int c = 0; c < alg_.comps(); ++c) {
    if (u.comp[c].size() == 0) continue;
    unsigned T = alg_.t_mask(c);
    for (int a = 0; a < n(); ++a) {
      auto r = alg_.wedge(alg_.comp_id(0, 1u << a), c);
      if (!r.sign) continue;
      std::vector<const Mat*> ops(n(), nullptr);
      ops[a] = &fac_[a].dbar();
      (void)T;
      Vec v = kron_apply(ops, u.comp[c]);
      w.comp[r.comp] += double(r.sign) * v;
    }
  }
  return w;
}

CoefForm FiberCalculus::apply_dE(const CoefForm& u) const {
  CoefForm w = zero_form(u.p + 1, u.q);
  if (u.p + 1 > n()) return w;
  for (int c = 0; c < alg_.comps(); ++c) {
    if (u.comp[c].size() == 0) continue;
    unsigned T = alg_.t_mask(c);
    for (int a = 0; a < n(); ++a) {
      auto r = alg_.wedge(alg_.comp_id(1u << a, 0), c);
      if (!r.sign) continue;
      std::vector<const Mat*> ops(n(), nullptr);
      ops[a] = &fac_[a].dE(T & (1u << a));
      Vec v = kron_apply(ops, u.comp[c]);
      w.comp[r.comp] += double(r.sign) * v;
    }
  }
  return w;
}

GridForm FiberCalculus::eval(const CoefForm& u) const {
  GridForm g;
  g.p = u.p;
  g.q = u.q;
  g.comp.resize(alg_.comps());
  for (int c = 0; c < alg_.comps(); ++c) {
    if (u.comp[c].size() == 0) continue;
    unsigned T = alg_.t_mask(c);
    std::vector<const Mat*> ops(n(), nullptr);
    for (int a = 0; a < n(); ++a) ops[a] = &fac_[a].eval(T & (1u << a));
    g.comp[c] = kron_apply(ops, u.comp[c]);
  }
  return g;
}

cplx FiberCalculus::grid_inner(const GridForm& u, const GridForm& v,
                               const std::vector<RVec>& g,
                               const RVec& wtot) const {
  const double qw = quad_weight();
  cplx acc = 0.0;
  for (int c = 0; c < alg_.comps(); ++c) {
    if (u.comp[c].size() == 0 || v.comp[c].size() == 0) continue;
    unsigned S = alg_.s_mask(c), T = alg_.t_mask(c);
    Eigen::ArrayXd frame = Eigen::ArrayXd::Ones(u.comp[c].size());
    for (int a = 0; a < n(); ++a) {
      if (S & (1u << a)) frame /= g[a].array();
      if (T & (1u << a)) frame /= g[a].array();
    }
    acc += qw * (u.comp[c].array() * v.comp[c].array().conjugate() *
                 frame.cast<cplx>() * wtot.array().cast<cplx>())
                    .sum();
  }
  return acc;
}

int FiberCalculus::expected_dim(int p, int q) const {
  if (n() == 1) {
    if (p < 0 || p > 1 || q < 0 || q > 1) return 0;
    return fac_[0].h_structural(q);
  }
  int total = 0;
  for (int p1 = 0; p1 <= 1; ++p1)
    for (int q1 = 0; q1 <= 1; ++q1) {
      int p2 = p - p1, q2 = q - q1;
      if (p2 < 0 || p2 > 1 || q2 < 0 || q2 > 1) continue;
      total += fac_[0].h_structural(q1) * fac_[1].h_structural(q2);
    }
  return total;
}

std::vector<RVec> FiberCalculus::flat_scales() const {
  std::vector<RVec> g;
  long np = npoints();
  for (int a = 0; a < n(); ++a)
    g.push_back(RVec::Constant(np, fac_[a].flat_g()));
  return g;
}

RVec FiberCalculus::flat_weight() const {
  double v = 1.0;
  for (const auto& f : fac_) v *= f.geo().area;
  return RVec::Constant(npoints(), v);
}

}  // namespace hdib
