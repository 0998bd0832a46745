// Family geometry over a small parameter ball: closed-form fields on the
// total space (fiber modes times monomial-exponential base factors), the
// total Kaehler form with its horizontal lifts, the weight family feeding the
// fiber Hodge engine, and the pointwise q-semipositivity gate.
//
// Base factors are finite sums  coef * prod_j t_j^{a_j} tbar_j^{b_j}
//                                    * exp(sum_j p_j t_j + q_j tbar_j),
// a family closed under d/dt_j and d/dtbar_j that covers polynomials and
// cos/sin of real-linear forms exactly; all parameter derivatives downstream
// are therefore analytic, never finite differences.
#pragma once

#include <array>
#include <functional>
#include <vector>

#include "hdib/hodge.hpp"
#include "hdib/torus.hpp"

namespace hdib {

constexpr int kMaxPars = 2;

struct BaseTerm {
  cplx coef{0.0, 0.0};
  std::array<int, kMaxPars> a{};   // powers of t_j
  std::array<int, kMaxPars> b{};   // powers of tbar_j
  std::array<cplx, kMaxPars> p{};  // exp rates on t_j
  std::array<cplx, kMaxPars> q{};  // exp rates on tbar_j
};

class BaseExpr {
 public:
  explicit BaseExpr(int m = 1);
  static BaseExpr constant(cplx c, int m = 1);
  // c * t_j^aj tbar_j^bj
  static BaseExpr monomial(cplx c, std::array<int, kMaxPars> a,
                           std::array<int, kMaxPars> b, int m);
  static BaseExpr exponential(cplx c, std::array<cplx, kMaxPars> p,
                              std::array<cplx, kMaxPars> q, int m);

  int vars() const { return m_; }
  bool empty() const { return terms_.empty(); }
  const std::vector<BaseTerm>& terms() const { return terms_; }

  BaseExpr& operator+=(const BaseExpr& o);
  BaseExpr scaled(cplx s) const;
  BaseExpr mul(const BaseExpr& o) const;
  BaseExpr d_t(int j) const;
  BaseExpr d_tbar(int j) const;
  BaseExpr conjugate() const;

  cplx eval(const std::array<cplx, kMaxPars>& t) const;
  void simplify();  // merge exactly-matching monomial/exponential keys

 private:
  int m_;
  std::vector<BaseTerm> terms_;
};

// handy real-valued building blocks
BaseExpr base_re(int j, int m);  // Re t_j
BaseExpr base_im(int j, int m);  // Im t_j
BaseExpr base_abs2(int j, int m);
// cos / sin of  c0 + sum_j (re_j Re t_j + im_j Im t_j)
BaseExpr base_cos_linear(std::array<double, kMaxPars> re,
                         std::array<double, kMaxPars> im, double c0, int m);
BaseExpr base_sin_linear(std::array<double, kMaxPars> re,
                         std::array<double, kMaxPars> im, double c0, int m);

// One fiber mode per factor (raw exponential e^{2 pi i (m x + n y)}, no
// normalization) times a base factor.
struct FieldTerm {
  std::array<std::pair<int, int>, 2> mode{{{0, 0}, {0, 0}}};
  BaseExpr base{1};
};

class TotalField {
 public:
  TotalField(const FiberCalculus& X, int m);

  int vars() const { return m_; }
  bool empty() const { return terms_.empty(); }
  const FiberCalculus& fiber() const { return *X_; }

  void add_term(std::array<std::pair<int, int>, 2> mode, BaseExpr base);
  // adds the term plus its complex conjugate (keeps the field real)
  void add_real(std::array<std::pair<int, int>, 2> mode, const BaseExpr& base);

  TotalField d_t(int j) const;
  TotalField d_tbar(int j) const;
  TotalField d_z(int a) const;     // exact mode-symbol multiplication
  TotalField d_zbar(int a) const;
  TotalField conjugate() const;
  TotalField operator+(const TotalField& o) const;
  TotalField scaled(cplx s) const;

  Vec eval(const std::array<cplx, kMaxPars>& t) const;       // joint grid
  RVec eval_real(const std::array<cplx, kMaxPars>& t) const;  // asserts reality

 private:
  const FiberCalculus* X_;
  int m_;
  std::vector<FieldTerm> terms_;
};

// Weight family e^{-phi(z,t)} over the fiber (n = 1): produces the data the
// fiber Hodge engine needs at a parameter value, plus the curvature density
// of (background flux + weight) along the fiber.
class FamilyWeight {
 public:
  FamilyWeight(const FiberCalculus& X, TotalField phi);

  const TotalField& field() const { return phi_; }
  int vars() const { return phi_.vars(); }

  RVec phi_values(const std::array<cplx, kMaxPars>& t) const;
  // weight data with the given fiber scale field (flat if untwisted)
  SectionWeight section_weight(const std::array<cplx, kMaxPars>& t,
                               const RVec& gscale) const;
  // theta_{z zbar} = pi d / tau2 + phi_{z zbar}  (fiber curvature density)
  RVec theta_zz(const std::array<cplx, kMaxPars>& t) const;

 private:
  const FiberCalculus* X_;
  TotalField phi_, phi_z_, phi_zz_;
};

// Total Kaehler form  omega = i g_ff dz^dzbar + i gB_{jk} dt^j^dtbar^k
//                     + i ddbar rho  on the (1 + m)-dimensional total space.
class TotalKahler {
 public:
  TotalKahler(const FiberCalculus& X, Mat gB, TotalField rho);

  int m() const { return int(gB_.rows()); }
  const Mat& base_metric() const { return gB_; }
  const TotalField& twist() const { return rho_; }

  RVec g_ff(const std::array<cplx, kMaxPars>& t) const;       // fiber (1,1)
  Vec g_tf(int j, const std::array<cplx, kMaxPars>& t) const;  // g_{t_j zbar}
  Vec g_ft(int j, const std::array<cplx, kMaxPars>& t) const;  // g_{z tbar_j}
  Vec g_tt(int j, int k, const std::array<cplx, kMaxPars>& t) const;
  // horizontal lift coefficient: V_j = d/dt_j + nu_j d/dz, nu_j = -g_tf/g_ff
  Vec nu(int j, const std::array<cplx, kMaxPars>& t) const;
  // fiber and parameter derivatives of the lift coefficient (quotient rule
  // on the closed-form twist fields)
  Vec nu_zbar(int j, const std::array<cplx, kMaxPars>& t) const;
  Vec nu_z(int j, const std::array<cplx, kMaxPars>& t) const;
  Vec nu_tbar(int j, int k, const std::array<cplx, kMaxPars>& t) const;
  // second derivatives d_z(d_zbar nu_j) and d_z(d_tbar_k nu_j)
  Vec nu_zbar_z(int j, const std::array<cplx, kMaxPars>& t) const;
  Vec nu_tbar_z(int j, int k, const std::array<cplx, kMaxPars>& t) const;
  // Schur complement c_{jk} = g_tt - g_tf g_ft / g_ff (the fiberwise-reduced
  // base form)
  Vec c_schur(int j, int k, const std::array<cplx, kMaxPars>& t) const;

  struct PosReport {
    bool ok = false;
    double min_eig = 0.0;
    long point = -1;
    int sample = -1;
  };
  // positivity of the full (1+m)x(1+m) Hermitian matrix over grid x samples
  PosReport check_positive(const std::vector<std::array<cplx, kMaxPars>>& ts,
                           double tol) const;

 private:
  const FiberCalculus* X_;
  Mat gB_;
  TotalField rho_;
  // cached derivative fields of the twist
  TotalField r_zz_;                              // d_z d_zbar rho
  std::vector<TotalField> r_tzb_, r_ztb_;        // d_{t_j} d_zbar, d_z d_{tbar_j}
  std::vector<TotalField> r_ttb_;                // d_{t_j} d_{tbar_k}, k fastest
};

// q-semipositivity gate: the (1,1)-form T with Hermitian component matrix
// theta(point) (total-space legs: fiber first, then base) is q-semipositive
// at a point iff the commutator [T^, Lambda] is >= 0 on (N, q+1)-forms.
// Metric-independent verdict; evaluated with the constant scales supplied.
struct QPosReport {
  bool ok = false;
  double min_eig = 0.0;
  double scale = 0.0;  // largest |theta| entry seen, for relative tolerance
  long point = -1;
  int sample = -1;
};
QPosReport check_q_semipositive(
    const LegAlgebra& alg, const std::vector<double>& gscales, int q,
    const std::function<void(int sample, long point, Mat& theta)>& fill,
    int nsamples, long npoints, double tol);

}  // namespace hdib
