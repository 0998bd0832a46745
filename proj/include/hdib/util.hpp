// Shared numerics helpers: complex aliases, deterministic RNG probes,
// metric-aware dense linear algebra, error types, stable number formatting.
#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdib {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXcd;
using Mat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

inline constexpr double PI = 3.14159265358979323846264338327950288;
inline constexpr cplx I_UNIT{0.0, 1.0};

// ---------------------------------------------------------------------------
// Error taxonomy. Every hard failure mode the lab can hit maps to one of
// these so callers (CLI runner, tests) can report precisely what went wrong.
// ---------------------------------------------------------------------------
struct LabError : std::runtime_error {
  explicit LabError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : LabError {
  explicit ConfigError(const std::string& m) : LabError("config: " + m) {}
};
struct NotSupported : LabError {
  explicit NotSupported(const std::string& m) : LabError("unsupported: " + m) {}
};
struct AmbiguousKernel : LabError {
  explicit AmbiguousKernel(const std::string& m) : LabError("ambiguous kernel: " + m) {}
};
struct SingularCommutator : LabError {
  explicit SingularCommutator(const std::string& m) : LabError("singular commutator: " + m) {}
};
struct FrameDegenerate : LabError {
  explicit FrameDegenerate(const std::string& m) : LabError("degenerate frame: " + m) {}
};
struct NotPositive : LabError {
  explicit NotPositive(const std::string& m) : LabError("not positive: " + m) {}
};

// ---------------------------------------------------------------------------
// Deterministic random probes. All stochastic checks draw through this so a
// fixed seed reproduces every number in a run bit-for-bit.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform(double a, double b) {
    std::uniform_real_distribution<double> d(a, b);
    return d(eng_);
  }
  double gauss() {
    // Box-Muller on explicit uniforms: std::normal_distribution is not
    // guaranteed to produce identical streams across standard libraries.
    double u1 = uniform(1e-12, 1.0), u2 = uniform(0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * PI * u2);
  }
  cplx gaussc() { double re = gauss(); double im = gauss(); return {re, im}; }
  Vec gauss_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = gaussc();
    return v;
  }
  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

// ---------------------------------------------------------------------------
// Metric-aware linear algebra. Inner products are (u,v) = v^H M u with M a
// Hermitian positive-definite Gram matrix; several routines need the
// M-orthonormalizing Cholesky factor.
// ---------------------------------------------------------------------------
struct MetricFactor {
  // M = R^H R with R upper triangular; to_ortho(u) = R u has Euclidean norm
  // equal to the metric norm of u.
  Mat R, Rinv;
  static MetricFactor make(const Mat& M);
  Vec to_ortho(const Vec& u) const { return R * u; }
  Vec from_ortho(const Vec& w) const { return Rinv * w; }
};

inline cplx metric_inner(const Vec& u, const Vec& v, const Mat& M) {
  return (v.adjoint() * (M * u))(0, 0);
}
inline double metric_norm(const Vec& u, const Mat& M) {
  return std::sqrt(std::max(0.0, metric_inner(u, u, M).real()));
}

// Eigen-decomposition of an operator A that is self-adjoint with respect to
// metric M (i.e. M A = A^H M). Returns ascending eigenvalues and M-orthonormal
// eigenvectors as columns.
struct MetricEigs {
  RVec values;
  Mat vectors;
};
MetricEigs metric_self_adjoint_eigs(const Mat& A, const MetricFactor& mf);

// Minimal-norm least squares x of A x = b in metrics (Mdom on x, Mcod on b):
// minimizes |A x - b|_Mcod, among minimizers picks the Mdom-smallest x.
Vec metric_min_norm_solve(const Mat& A, const Vec& b, const MetricFactor& dom,
                          const MetricFactor& cod, double rank_tol = 1e-11);

// ---------------------------------------------------------------------------
// Stable formatting: fixed scientific notation, C locale semantics, so report
// files are byte-identical across runs.
// ---------------------------------------------------------------------------
std::string fmt_sci(double x, int digits = 12);
std::string fmt_cplx(cplx z, int digits = 12);

// Relative gap helper: |a-b| / max(scale, |a|, |b|).
inline double rel_diff(double a, double b, double scale = 1e-300) {
  double m = std::max({std::abs(a), std::abs(b), scale});
  return std::abs(a - b) / m;
}

}  // namespace hdib
