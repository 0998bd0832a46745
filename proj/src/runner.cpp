#include "hdib/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "hdib/curvature.hpp"

namespace hdib {

using ojson = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// tolerances: one named knob per quantitative assertion, defaults pinned here,
// overridable per scenario under [tol]
// ---------------------------------------------------------------------------
const std::map<std::string, double>& default_tols() {
  static const std::map<std::string, double> t = {
      {"complex", 1e-12},       // dbar^2 residual, relative
      {"adjoint", 1e-12},       // adjointness residual, relative
      {"gap-min", 10.0},        // harmonic spectral gap floor
      {"star-isometry", 1e-10},
      {"curvature-fd", 1e-3},   // either analytic route against the FD oracle
      {"curvature-routes", 1e-4},  // geometric against exact-insert route
      {"closed-form-rel", 1e-6},
      {"closed-form-abs", 1e-8},
      {"gate", 1e-9},           // commutator min-eigenvalue floor
      {"griffiths", 1e-6},      // x spectral scale
      {"nakano", 1e-6},         // x spectral scale
      {"excess-routes", 1e-6},  // I_eps / C_eps two-route agreement, relative
      {"excess-floor", 1e-8},   // I_eps >= -floor x scale
      {"energy-floor", 1e-6},   // R_eps >= -floor x scale (tight eps)
      {"closed-bundle", 1e-6},  // x spectral scale
      {"identity", 1e-8},       // finite-model identity residual
      {"wp-ratio", 1e-2},       // g_wp (Im tau)^2 constancy
      {"wp-psh", 1e-8},
      {"wp-holo", 1e-6},
      {"wp-curv", 1e-3},        // K * area + 4 from the table
  };
  return t;
}

std::uint64_t seed_for(const Scenario& s, std::uint64_t check_id) {
  return s.seed * 1000003ULL + check_id;
}

bool name_ok(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// scenario -> model objects (built lazily, shared between checks)
// ---------------------------------------------------------------------------
TotalField build_field(const FiberCalculus& X, int m,
                       const std::vector<FieldTermSpec>& terms) {
  TotalField f(X, m);
  for (const FieldTermSpec& t : terms) {
    BaseExpr b(m);
    switch (t.base) {
      case FieldTermSpec::Base::constant:
        b = BaseExpr::constant(1.0, m);
        break;
      case FieldTermSpec::Base::re:
        b = base_re(t.j, m);
        break;
      case FieldTermSpec::Base::im:
        b = base_im(t.j, m);
        break;
      case FieldTermSpec::Base::abs2:
        b = base_abs2(t.j, m);
        break;
      case FieldTermSpec::Base::cross: {
        std::array<int, kMaxPars> a{}, bb{};
        a[size_t(t.j)] = 1;
        bb[size_t(t.k)] = 1;
        b = BaseExpr::monomial(1.0, a, bb, m);
        break;
      }
    }
    f.add_real(t.mode, b.scaled(t.coef));
  }
  return f;
}

struct RunCtx {
  const Scenario& s;
  int resolution;  // effective fiber resolution
  std::unique_ptr<FiberCalculus> X;
  std::unique_ptr<FamilyWeight> fw;
  std::unique_ptr<TotalKahler> tk;
  bool tk_built = false;
  std::unique_ptr<WeightedHodge> wh;
  std::unique_ptr<DirectImageBundle> bun;
  std::unique_ptr<CurvatureAssembly> casm;

  RunCtx(const Scenario& sc, int res) : s(sc), resolution(res) {}

  FiberCalculus& fiber() {
    if (!X) {
      FiberSpec fs = s.fiber;
      fs.resolution = resolution;
      X = std::make_unique<FiberCalculus>(fs);
    }
    return *X;
  }

  FamilyWeight& weight() {
    if (!fw)
      fw = std::make_unique<FamilyWeight>(fiber(),
                                          build_field(fiber(), s.m, s.weight_terms));
    return *fw;
  }

  TotalKahler* kahler() {
    if (!tk_built) {
      tk_built = true;
      if (!s.gb_diag.empty() || !s.twist_terms.empty()) {
        Mat gB = Mat::Zero(s.m, s.m);
        for (int j = 0; j < s.m; ++j) gB(j, j) = s.gb_diag[size_t(j)];
        if (s.m == 2) {
          gB(0, 1) = s.gb_off;
          gB(1, 0) = std::conj(s.gb_off);
        }
        tk = std::make_unique<TotalKahler>(fiber(), gB,
                                           build_field(fiber(), s.m, s.twist_terms));
      }
    }
    return tk.get();
  }

  WeightedHodge& hodge() {
    if (!wh) {
      FiberCalculus& Xr = fiber();
      if (Xr.n() == 1) {
        RVec gflat = RVec::Constant(Xr.npoints(), Xr.factor(0).flat_g());
        wh = std::make_unique<WeightedHodge>(
            Xr, weight().section_weight({cplx(0.0), cplx(0.0)}, gflat));
      } else {
        std::vector<RVec> wf, gf;
        for (int a = 0; a < Xr.n(); ++a) {
          wf.push_back(
              RVec::Constant(Xr.factor(a).points(), Xr.factor(a).geo().area));
          gf.push_back(RVec::Constant(Xr.factor(a).points(), Xr.factor(a).flat_g()));
        }
        wh = std::make_unique<WeightedHodge>(Xr, wf, gf);
      }
    }
    return *wh;
  }

  DirectImageBundle& bundle() {
    if (!bun)
      bun = std::make_unique<DirectImageBundle>(fiber(), weight(), kahler(), s.p,
                                                s.q);
    return *bun;
  }

  CurvatureAssembly& assembly() {
    if (!casm) {
      CurvatureAssembly::Options opt;
      opt.eps = s.eps;
      casm = std::make_unique<CurvatureAssembly>(bundle(), opt);
    }
    return *casm;
  }
};

// ---------------------------------------------------------------------------
// small report helpers
// ---------------------------------------------------------------------------
struct CheckOut {
  bool pass = true;
  ojson data = ojson::object();
  std::string csv;
};

void put(ojson& j, const char* key, double v) { j[key] = fmt_sci(v); }

double stacked_rel(const std::vector<Mat>& got, const std::vector<Mat>& want) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]).squaredNorm();
    den += want[i].squaredNorm();
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

double stacked_norm(const std::vector<Mat>& blocks) {
  double s = 0.0;
  for (const Mat& b : blocks) s += b.squaredNorm();
  return std::sqrt(s);
}

double min_herm_eig(const Mat& A) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.adjoint()));
  return es.eigenvalues().minCoeff();
}

// ---------------------------------------------------------------------------
// checks
// ---------------------------------------------------------------------------
CheckOut check_complex(const Scenario& s, RunCtx& ctx) {
  CheckOut out;
  FiberCalculus& X = ctx.fiber();
  WeightedHodge& H = ctx.hodge();
  Rng rng(seed_for(s, 1));
  const double tol_c = s.tol.at("complex"), tol_a = s.tol.at("adjoint");
  const int n = X.n(), total = 100;

  double d2 = 0.0, adj = 0.0;
  std::ostringstream csv;
  csv << "q,sections,max_dbar2,max_adjoint\n";
  for (int q = 0; q < n; ++q) {
    Mat D0 = H.dbar_matrix(s.p, q);
    Mat D0s = H.dbar_adjoint(s.p, q);
    Mat G0 = H.gram_pq(s.p, q), G1 = H.gram_pq(s.p, q + 1);
    Mat D1, G2;
    if (q + 2 <= n) {
      D1 = H.dbar_matrix(s.p, q + 1);
      G2 = H.gram_pq(s.p, q + 2);
    }
    double worst_d2 = 0.0, worst_adj = 0.0;
    const int draws = (total + n - 1) / n;
    for (int i = 0; i < draws; ++i) {
      Vec x = H.pack(X.random_form(s.p, q, rng));
      if (q + 2 <= n) {
        Vec y = D1 * (D0 * x);
        worst_d2 = std::max(worst_d2, metric_norm(y, G2) /
                                          std::max(metric_norm(x, G0), 1e-300));
      }
      Vec y = H.pack(X.random_form(s.p, q + 1, rng));
      cplx a = metric_inner(D0 * x, y, G1);
      cplx b = metric_inner(x, D0s * y, G0);
      worst_adj = std::max(worst_adj,
                           std::abs(a - b) / (1.0 + std::abs(a) + std::abs(b)));
    }
    d2 = std::max(d2, worst_d2);
    adj = std::max(adj, worst_adj);
    csv << q << "," << draws << "," << fmt_sci(worst_d2) << ","
        << fmt_sci(worst_adj) << "\n";
  }
  out.pass = d2 <= tol_c && adj <= tol_a;
  put(out.data, "max_dbar2", d2);
  put(out.data, "max_adjoint", adj);
  out.data["sections"] = total;
  out.csv = csv.str();
  return out;
}

CheckOut check_dimensions(const Scenario& s, RunCtx& ctx) {
  CheckOut out;
  FiberCalculus& X = ctx.fiber();
  WeightedHodge& H = ctx.hodge();
  const double gap_min = s.tol.at("gap-min");
  double min_gap = std::numeric_limits<double>::infinity();
  bool dims_ok = true;
  std::ostringstream csv;
  csv << "q,dim,expected,gap\n";
  ojson dims = ojson::array();
  for (int q = 0; q <= X.n(); ++q) {
    const auto& hs = H.harmonic(s.p, q);
    int want = X.expected_dim(s.p, q);
    dims_ok = dims_ok && hs.dim == want;
    if (hs.dim > 0 || want > 0) min_gap = std::min(min_gap, hs.gap);
    csv << q << "," << hs.dim << "," << want << "," << fmt_sci(hs.gap) << "\n";
    ojson row;
    row["q"] = q;
    row["dim"] = hs.dim;
    row["expected"] = want;
    put(row, "gap", hs.gap);
    dims.push_back(row);
  }
  out.pass = dims_ok && min_gap >= gap_min;
  out.data["dims"] = dims;
  put(out.data, "min_gap", min_gap);
  out.csv = csv.str();
  return out;
}

CheckOut check_star(const Scenario& s, RunCtx& ctx) {
  CheckOut out;
  FiberCalculus& X = ctx.fiber();
  WeightedHodge& H = ctx.hodge();
  Rng rng(seed_for(s, 3));
  const double tol = s.tol.at("star-isometry");
  double worst = 0.0;
  std::ostringstream csv;
  csv << "q,draws,max_isometry_residual\n";
  for (int q = 0; q <= X.n(); ++q) {
    double wq = 0.0;
    const int draws = 5;
    for (int i = 0; i < draws; ++i) {
      CoefForm u = X.random_form(s.p, q, rng);
      CoefForm su = H.star(u);
      if (su.p != X.n() - q || su.q != X.n() - s.p)
        throw LabError("star produced a wrong bidegree");
      double nu = H.norm(u);
      wq = std::max(wq, std::abs(H.norm(su) - nu) / std::max(nu, 1e-300));
    }
    worst = std::max(worst, wq);
    csv << q << "," << draws << "," << fmt_sci(wq) << "\n";
  }
  out.pass = worst <= tol;
  put(out.data, "max_isometry_residual", worst);
  out.csv = csv.str();
  return out;
}

CheckOut check_curvature(const Scenario& s, RunCtx& ctx, bool refine) {
  CheckOut out;
  std::vector<int> rungs{ctx.resolution};
  if (refine && !s.ladder.empty())
    rungs.assign(s.ladder.begin(), s.ladder.end());

  const double tol_fd = s.tol.at("curvature-fd");
  const double tol_routes = s.tol.at("curvature-routes");

  std::ostringstream csv;
  csv << "kind,resolution,j,k,name,value\n";
  std::vector<double> route_gaps;
  ojson rung_rows = ojson::array();
  bool ok = true;

  for (size_t ri = 0; ri < rungs.size(); ++ri) {
    int res = rungs[ri];
    // the final rung reuses the shared context when it matches the base
    // resolution, so later checks get the cached bundle
    std::unique_ptr<RunCtx> local;
    RunCtx* c = nullptr;
    if (res == ctx.resolution) {
      c = &ctx;
    } else {
      local = std::make_unique<RunCtx>(s, res);
      c = local.get();
    }
    DirectImageBundle& bun = c->bundle();
    CurvatureAssembly& casm = c->assembly();
    const int m = s.m;
    std::vector<Mat> P_ins;
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) P_ins.push_back(bun.curvature_pairing(j, k));
    const std::vector<Mat>& P_geo = casm.terms().P;
    auto fd = bun.fd_curvature(s.h_fd);

    double a0n = bun.metric({cplx(0.0), cplx(0.0)}).norm();
    double scale = std::max(stacked_norm(P_ins), stacked_norm(fd.P));
    ojson row;
    row["resolution"] = res;
    bool degenerate = scale < 1e-10 * (1.0 + a0n);
    double e_geo_fd = 0, e_ins_fd = 0, e_geo_ins = 0;
    if (degenerate) {
      // curvature is identically zero for this scenario; every route must
      // agree with zero in absolute terms
      double zero_tol = 1e-8 * (1.0 + a0n);
      e_geo_fd = stacked_norm(P_geo);
      e_ins_fd = stacked_norm(P_ins);
      e_geo_ins = stacked_norm(fd.P);
      ok = ok && e_geo_fd <= zero_tol && e_ins_fd <= zero_tol &&
           e_geo_ins <= zero_tol;
      row["degenerate_zero"] = true;
      put(row, "geo_abs", e_geo_fd);
      put(row, "ins_abs", e_ins_fd);
      put(row, "fd_abs", e_geo_ins);
      route_gaps.push_back(e_geo_ins);
    } else {
      e_geo_fd = stacked_rel(P_geo, fd.P);
      e_ins_fd = stacked_rel(P_ins, fd.P);
      e_geo_ins = stacked_rel(P_geo, P_ins);
      ok = ok && e_geo_fd <= tol_fd && e_ins_fd <= tol_fd &&
           e_geo_ins <= tol_routes;
      put(row, "geo_vs_fd", e_geo_fd);
      put(row, "ins_vs_fd", e_ins_fd);
      put(row, "geo_vs_ins", e_geo_ins);
      route_gaps.push_back(e_geo_ins);
    }
    rung_rows.push_back(row);
    csv << "route," << res << ",-,-,geo_vs_fd," << fmt_sci(e_geo_fd) << "\n";
    csv << "route," << res << ",-,-,ins_vs_fd," << fmt_sci(e_ins_fd) << "\n";
    csv << "route," << res << ",-,-,geo_vs_ins," << fmt_sci(e_geo_ins) << "\n";

    if (ri + 1 == rungs.size()) {
      const auto& T = casm.terms();
      auto term_row = [&](const char* nm, const std::vector<Mat>& blk) {
        for (int j = 0; j < m; ++j)
          for (int k = 0; k < m; ++k)
            csv << "term," << res << "," << j << "," << k << "," << nm << ","
                << fmt_sci(blk[size_t(j * m + k)].norm()) << "\n";
      };
      term_row("bb", T.bb);
      term_row("aa", T.aa);
      term_row("mid", T.mid);
      term_row("key", T.key);
      term_row("gri", T.gri);
      term_row("A", T.A_blk);
      term_row("nak", T.nak_blk);
      term_row("cmass", T.cmass);
      term_row("P", T.P);
    }
  }

  if (refine && route_gaps.size() >= 2) {
    bool dec = route_gaps.back() < route_gaps.front();
    ok = ok && dec;
    out.data["refine_decreasing"] = dec;
  }
  out.pass = ok;
  out.data["rungs"] = rung_rows;
  out.csv = csv.str();
  return out;
}

CheckOut check_closed_form(const Scenario& s, RunCtx& ctx) {
  CheckOut out;
  const double c = *s.closed_form_c;
  DirectImageBundle& bun = ctx.bundle();
  CurvatureAssembly& casm = ctx.assembly();
  Mat A0 = bun.metric({cplx(0.0), cplx(0.0)});
  const int m = s.m;
  std::vector<Mat> want, P_ins;
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < m; ++k) {
      want.push_back(j == k ? Mat(c * A0) : Mat(Mat::Zero(A0.rows(), A0.cols())));
      P_ins.push_back(bun.curvature_pairing(j, k));
    }
  const std::vector<Mat>& P_geo = casm.terms().P;

  std::ostringstream csv;
  csv << "route,residual\n";
  if (c == 0.0) {
    double abs_tol = s.tol.at("closed-form-abs");
    double e_ins = stacked_norm(P_ins), e_geo = stacked_norm(P_geo);
    out.pass = e_ins <= abs_tol && e_geo <= abs_tol;
    put(out.data, "insert_abs", e_ins);
    put(out.data, "geometric_abs", e_geo);
    csv << "insert," << fmt_sci(e_ins) << "\ngeometric," << fmt_sci(e_geo) << "\n";
  } else {
    double rel_tol = s.tol.at("closed-form-rel");
    double e_ins = stacked_rel(P_ins, want), e_geo = stacked_rel(P_geo, want);
    out.pass = e_ins <= rel_tol && e_geo <= rel_tol;
    put(out.data, "insert_rel", e_ins);
    put(out.data, "geometric_rel", e_geo);
    csv << "insert," << fmt_sci(e_ins) << "\ngeometric," << fmt_sci(e_geo) << "\n";
  }
  put(out.data, "radial_c", c);
  out.csv = csv.str();
  return out;
}

CheckOut check_gate(const Scenario& s, RunCtx& ctx) {
  CheckOut out;
  FiberCalculus& X = ctx.fiber();
  FamilyWeight& fw = ctx.weight();
  const int m = s.m;

  // curvature densities of background + weight on the total space, sampled on
  // parameter circles of the configured radius
  std::vector<std::array<cplx, kMaxPars>> ts;
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < 5; ++k) {
      std::array<cplx, kMaxPars> t{cplx(0.0), cplx(0.0)};
      t[size_t(j)] = std::polar(s.radius, 2.0 * PI * k / 5.0);
      ts.push_back(t);
    }

  TotalField phi = fw.field();
  std::vector<RVec> thzz;
  std::vector<std::vector<Vec>> thtz, thtt;
  thtz.resize(size_t(m));
  thtt.resize(size_t(m * m));
  for (int j = 0; j < m; ++j) {
    TotalField pj = phi.d_t(j);
    TotalField pjz = pj.d_zbar(0);
    for (const auto& t : ts) thtz[size_t(j)].push_back(pjz.eval(t));
    for (int k = 0; k < m; ++k) {
      TotalField pjk = pj.d_tbar(k);
      for (const auto& t : ts) thtt[size_t(j * m + k)].push_back(pjk.eval(t));
    }
  }
  for (const auto& t : ts) thzz.push_back(fw.theta_zz(t));

  LegAlgebra alg(1 + m);
  std::vector<double> scales{X.factor(0).flat_g()};
  for (int j = 0; j < m; ++j)
    scales.push_back(s.gb_diag.empty() ? 1.0 : s.gb_diag[size_t(j)]);
  auto fill = [&](int sample, long p, Mat& th) {
    th(0, 0) = thzz[size_t(sample)](p);
    for (int j = 0; j < m; ++j) {
      cplx v = thtz[size_t(j)][size_t(sample)](p);
      th(1 + j, 0) = v;
      th(0, 1 + j) = std::conj(v);
      for (int k = 0; k < m; ++k)
        th(1 + j, 1 + k) = thtt[size_t(j * m + k)][size_t(sample)](p);
    }
  };
  QPosReport gate = check_q_semipositive(alg, scales, s.q, fill, int(ts.size()),
                                         X.npoints(), s.tol.at("gate"));

  DirectImageBundle& bun = ctx.bundle();
  CurvatureAssembly& casm = ctx.assembly();
  Mat A0 = bun.metric({cplx(0.0), cplx(0.0)});
  PositivityVerdict pv =
      positivity_verdict(casm.terms().P, A0, m, bun.rank());

  bool ok = true;
  std::string status = gate.ok ? "open" : "blocked";
  if (s.gate_expect == "open") {
    ok = gate.ok;
    if (gate.ok) {
      double a0n = A0.norm();
      if (pv.scale < 1e-10 * (1.0 + a0n)) {
        // zero-curvature scenario: verdicts must agree with zero
        double zero_tol = 1e-8 * (1.0 + a0n);
        ok = ok && std::abs(pv.griffiths_min) <= zero_tol;
        if (s.q == 0) ok = ok && std::abs(pv.nakano_min) <= zero_tol;
        out.data["degenerate_zero"] = true;
      } else {
        ok = ok && pv.griffiths_min >= -s.tol.at("griffiths") * pv.scale;
        if (s.q == 0) ok = ok && pv.nakano_min >= -s.tol.at("nakano") * pv.scale;
      }
    }
  } else {
    // the scenario documents an honest hypothesis failure: the gate must
    // refuse, and the (possibly negative) verdicts are recorded as witnesses
    ok = !gate.ok;
  }

  out.pass = ok;
  out.data["gate"] = status;
  out.data["expected"] = s.gate_expect;
  put(out.data, "gate_min_eig", gate.min_eig);
  put(out.data, "gate_scale", gate.scale);
  out.data["witness_sample"] = gate.sample;
  out.data["witness_point"] = gate.point;
  put(out.data, "griffiths_min", pv.griffiths_min);
  put(out.data, "nakano_min", pv.nakano_min);
  put(out.data, "spectral_scale", pv.scale);

  std::ostringstream csv;
  csv << "field,value\n";
  csv << "gate," << status << "\n";
  csv << "gate_min_eig," << fmt_sci(gate.min_eig) << "\n";
  csv << "gate_scale," << fmt_sci(gate.scale) << "\n";
  csv << "witness_sample," << gate.sample << "\n";
  csv << "witness_point," << gate.point << "\n";
  csv << "griffiths_min," << fmt_sci(pv.griffiths_min) << "\n";
  csv << "nakano_min," << fmt_sci(pv.nakano_min) << "\n";
  csv << "spectral_scale," << fmt_sci(pv.scale) << "\n";
  out.csv = csv.str();
  return out;
}

CheckOut check_excess(const Scenario& s, RunCtx& ctx) {
  CheckOut out;
  CurvatureAssembly& casm = ctx.assembly();
  CurvatureAssembly::Options tight_opt;
  tight_opt.eps = 1e-6;
  CurvatureAssembly tight(ctx.bundle(), tight_opt);

  Rng rng(seed_for(s, 7));
  const double tol_r = s.tol.at("excess-routes");
  const double tol_f = s.tol.at("excess-floor");
  const double tol_e = s.tol.at("energy-floor");
  const int r = ctx.bundle().rank(), trials = 6;

  bool ok = true;
  double worst_route = 0, worst_floor = 0, worst_energy = 0;
  std::ostringstream csv;
  csv << "trial,I_eps,I_pointwise,C_direct,C_dual,theta_form,R_eps_tight\n";
  for (int i = 0; i < trials; ++i) {
    Mat Xi(r, s.m);
    for (int j = 0; j < s.m; ++j)
      for (int a = 0; a < r; ++a) Xi(a, j) = rng.gaussc();
    auto ex = casm.excess(Xi);
    auto ext = tight.excess(Xi);
    double scale = std::abs(ex.A_term) + std::abs(ex.B_term) +
                   std::abs(ex.cmass) + std::abs(ex.C_direct) +
                   std::abs(ex.a_norm2) + std::abs(ex.b_norm2) + 1e-300;
    double route = std::max(std::abs(ex.I_eps - ex.I_pointwise),
                            std::abs(ex.C_direct - ex.C_dual)) /
                   scale;
    worst_route = std::max(worst_route, route);
    worst_floor = std::max(worst_floor, -ex.I_eps / scale);
    double scale_t = std::abs(ext.C_direct) + std::abs(ext.a_norm2) +
                     std::abs(ext.b_norm2) + 1e-300;
    worst_energy = std::max(worst_energy, -ext.R_eps / scale_t);
    ok = ok && route <= tol_r && ex.I_eps >= -tol_f * scale &&
         ext.R_eps >= -tol_e * scale_t;
    csv << i << "," << fmt_sci(ex.I_eps) << "," << fmt_sci(ex.I_pointwise)
        << "," << fmt_sci(ex.C_direct) << "," << fmt_sci(ex.C_dual) << ","
        << fmt_sci(ex.theta_form) << "," << fmt_sci(ext.R_eps) << "\n";
  }
  out.pass = ok;
  put(out.data, "max_route_residual", worst_route);
  put(out.data, "max_negativity", worst_floor);
  put(out.data, "max_energy_violation", worst_energy);
  out.data["trials"] = trials;
  put(out.data, "eps", s.eps);
  out.csv = csv.str();
  return out;
}

CheckOut check_closed_bundle(const Scenario& s, RunCtx& ctx) {
  CheckOut out;
  ClosedFormsBundle cfb(ctx.fiber(), ctx.weight(), s.p, s.q);
  std::vector<Mat> P = cfb.pairing_all();
  Mat N = cfb.nakano();
  double scale = stacked_norm(P);
  double mineig = min_herm_eig(N);

  Rng rng(seed_for(s, 8));
  double worst_id = 0.0;
  for (int i = 0; i < 4; ++i) {
    Mat Xi(cfb.rank(), s.m);
    for (int j = 0; j < s.m; ++j)
      for (int a = 0; a < cfb.rank(); ++a) Xi(a, j) = rng.gaussc();
    worst_id = std::max(worst_id, cfb.identity_residual(Xi));
  }

  bool degenerate = scale < 1e-12;
  bool ok = degenerate ? std::abs(mineig) <= 1e-10
                       : mineig >= -s.tol.at("closed-bundle") * scale;
  ok = ok && worst_id <= s.tol.at("identity");
  out.pass = ok;
  out.data["rank"] = cfb.rank();
  put(out.data, "nakano_min_eig", mineig);
  put(out.data, "spectral_scale", scale);
  put(out.data, "max_identity_residual", worst_id);

  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (N + N.adjoint()));
  std::ostringstream csv;
  csv << "index,eigenvalue\n";
  for (long i = 0; i < es.eigenvalues().size(); ++i)
    csv << i << "," << fmt_sci(es.eigenvalues()(i)) << "\n";
  out.csv = csv.str();
  return out;
}

CheckOut check_wp(const Scenario& s) {
  CheckOut out;
  ModularFamily fam(*s.modular);
  WpReport rep = fam.wp_metric();
  PshReport psh = fam.psh_check(rep, s.tol.at("wp-psh"));
  HolomorphyReport hol = fam.holomorphy_check();

  bool ok = psh.ok && hol.residual <= s.tol.at("wp-holo") && rep.hypothesis_ok;
  out.data["family"] =
      s.modular->kind == FamilyKind::product ? "product" : "modular";
  out.data["minus_infinity"] = psh.minus_infinity;
  put(out.data, "holomorphy_residual", hol.residual);
  put(out.data, "bound_slack", rep.bound_slack);
  out.data["hypothesis_ok"] = rep.hypothesis_ok;

  int side = fam.side();
  double h = s.modular->step;
  if (!psh.minus_infinity) {
    double ratio = 0.0;
    for (size_t i = 0; i < rep.tau.size(); ++i) {
      double t2 = rep.tau[i].imag();
      ratio = std::max(ratio, std::abs(rep.g_wp[i] * 4.0 * t2 * t2 /
                                           s.modular->area -
                                       1.0));
    }
    ok = ok && ratio <= s.tol.at("wp-ratio");
    put(out.data, "max_ratio_deviation", ratio);
    put(out.data, "min_hessian", psh.min_hess);

    // Gauss curvature from the table: K = -2 ddbar(log g_wp) / g_wp
    auto L = [&](int iu, int iv) {
      return std::log(rep.g_wp[size_t(iu + side * iv)]);
    };
    int c = s.modular->half;
    double edge = L(c + 1, c) + L(c - 1, c) + L(c, c + 1) + L(c, c - 1);
    double corner =
        L(c + 1, c + 1) + L(c + 1, c - 1) + L(c - 1, c + 1) + L(c - 1, c - 1);
    double ddb = (4.0 * edge + corner - 20.0 * L(c, c)) / (24.0 * h * h);
    double K = -2.0 * ddb / rep.g_wp[size_t(c + side * c)];
    double kerr = std::abs(K * s.modular->area + 4.0);
    ok = ok && kerr <= s.tol.at("wp-curv");
    put(out.data, "curvature_times_area", K * s.modular->area);
  }
  out.pass = ok;

  std::ostringstream csv;
  csv << "re_tau,im_tau,g_wp,bound,hessian\n";
  for (long idx = 0; idx < long(rep.tau.size()); ++idx) {
    long iu = idx % side, iv = idx / side;
    csv << fmt_sci(rep.tau[size_t(idx)].real()) << ","
        << fmt_sci(rep.tau[size_t(idx)].imag()) << ","
        << fmt_sci(rep.g_wp[size_t(idx)]) << ","
        << fmt_sci(rep.bound[size_t(idx)]) << ",";
    bool interior = iu >= 1 && iu + 1 < side && iv >= 1 && iv + 1 < side;
    if (!psh.minus_infinity && interior)
      csv << fmt_sci(psh.hess[size_t((iu - 1) + (side - 2) * (iv - 1))]);
    csv << "\n";
  }
  out.csv = csv.str();
  return out;
}

// ---------------------------------------------------------------------------
// check registry and per-scenario driver
// ---------------------------------------------------------------------------
CheckOut dispatch(const std::string& name, const Scenario& s, RunCtx& ctx,
                  bool refine) {
  if (name == "complex") return check_complex(s, ctx);
  if (name == "dimensions") return check_dimensions(s, ctx);
  if (name == "star") return check_star(s, ctx);
  if (name == "curvature") return check_curvature(s, ctx, refine);
  if (name == "closed-form") return check_closed_form(s, ctx);
  if (name == "gate") return check_gate(s, ctx);
  if (name == "excess") return check_excess(s, ctx);
  if (name == "closed-bundle") return check_closed_bundle(s, ctx);
  if (name == "wp") return check_wp(s);
  throw ConfigError("unknown check '" + name + "'");
}

void validate_check_set(const Scenario& s, const std::vector<std::string>& names,
                        const std::string& origin) {
  if (names.empty())
    throw ConfigError(origin + ": at least one check must be requested");
  const auto& known = known_checks();
  std::vector<std::string> seen;
  for (const std::string& c : names) {
    if (std::find(known.begin(), known.end(), c) == known.end())
      throw ConfigError(origin + ": unknown check '" + c + "'");
    if (std::find(seen.begin(), seen.end(), c) != seen.end())
      throw ConfigError(origin + ": check '" + c + "' requested twice");
    seen.push_back(c);

    bool fiber_check = c == "complex" || c == "dimensions" || c == "star";
    bool bundle_check = c == "curvature" || c == "closed-form" || c == "gate" ||
                        c == "excess" || c == "closed-bundle";
    if ((fiber_check || bundle_check) && !s.has_fiber)
      throw ConfigError(origin + ": check '" + c + "' needs a [fiber] section");
    if (bundle_check) {
      if (s.fiber.n() != 1 || s.p != 1 || (s.q != 0 && s.q != 1))
        throw ConfigError(origin + ": check '" + c +
                          "' needs one fiber factor and target (1,0) or (1,1)");
    }
    if (c == "closed-form" && !s.closed_form_c)
      throw ConfigError(origin +
                        ": check 'closed-form' needs [closed-form] c = ...");
    if (c == "gate" && s.m == 2 && s.gb_off != cplx(0.0))
      throw ConfigError(origin +
                        ": check 'gate' supports only diagonal base metrics");
    if (c == "closed-bundle" && !s.twist_terms.empty())
      throw ConfigError(origin +
                        ": check 'closed-bundle' needs an untwisted family");
    if (c == "wp" && !s.modular)
      throw ConfigError(origin + ": check 'wp' needs a [modular] section");
  }
}

}  // namespace

const std::vector<std::string>& known_checks() {
  static const std::vector<std::string> k = {
      "complex",     "dimensions", "star",   "curvature", "closed-form",
      "gate",        "excess",     "closed-bundle", "wp"};
  return k;
}

Scenario load_scenario(const Config& cfg) {
  Scenario s;
  s.name = cfg.get_string("name");
  if (!name_ok(s.name)) cfg.fail("name", "must match [A-Za-z0-9_-]+");
  long seed = cfg.get_int("seed", 1);
  if (seed < 0) cfg.fail("seed", "must be nonnegative");
  s.seed = std::uint64_t(seed);

  // fiber
  std::vector<long> fidx = cfg.numbered_sections("fiber.factor");
  if (!fidx.empty()) {
    s.has_fiber = true;
    for (size_t i = 0; i < fidx.size(); ++i)
      if (fidx[i] != long(i) + 1)
        throw ConfigError(cfg.origin() +
                          ": [fiber.factor.*] sections must be numbered 1..n");
    if (fidx.size() > 2)
      throw ConfigError(cfg.origin() + ": at most two fiber factors");
    for (long i : fidx) {
      std::string pre = "fiber.factor." + std::to_string(i) + ".";
      FactorGeometry g;
      std::vector<double> tau = cfg.get_reals(pre + "tau");
      if (tau.size() != 2) cfg.fail(pre + "tau", "expected two reals: Re Im");
      g.tau = cplx(tau[0], tau[1]);
      if (!(g.tau.imag() > 0.0)) cfg.fail(pre + "tau", "needs Im tau > 0");
      g.area = cfg.get_real(pre + "area", 1.0);
      if (!(g.area > 0.0)) cfg.fail(pre + "area", "must be positive");
      g.degree = int(cfg.get_int(pre + "degree", 0));
      s.fiber.factors.push_back(g);
    }
    s.fiber.resolution = int(cfg.get_int("fiber.resolution", 16));
    if (s.fiber.resolution < 8) cfg.fail("fiber.resolution", "must be >= 8");
    s.fiber.levels = int(cfg.get_int("fiber.levels", 0));
    if (s.fiber.levels < 0) cfg.fail("fiber.levels", "must be >= 0");
    s.fiber.kernel_rel_threshold = cfg.get_real("fiber.threshold", 1e-8);
    s.p = int(cfg.get_int("target.p", s.fiber.n()));
    s.q = int(cfg.get_int("target.q", 0));
    if (s.p < 0 || s.p > s.fiber.n()) cfg.fail("target.p", "out of range");
    if (s.q < 0 || s.q > s.fiber.n()) cfg.fail("target.q", "out of range");
  }

  // base / parameters
  s.m = int(cfg.get_int("base.m", 1));
  if (s.m < 1 || s.m > kMaxPars) cfg.fail("base.m", "must be 1 or 2");
  if (cfg.has("base.gb")) {
    s.gb_diag = cfg.get_reals("base.gb");
    if (long(s.gb_diag.size()) != s.m)
      cfg.fail("base.gb", "expected one diagonal entry per parameter");
    for (double v : s.gb_diag)
      if (!(v > 0.0)) cfg.fail("base.gb", "entries must be positive");
  }
  if (cfg.has("base.gb-off")) {
    if (s.m != 2) cfg.fail("base.gb-off", "needs base.m = 2");
    if (s.gb_diag.empty()) cfg.fail("base.gb-off", "needs base.gb");
    std::vector<double> o = cfg.get_reals("base.gb-off");
    if (o.size() != 2) cfg.fail("base.gb-off", "expected two reals: Re Im");
    s.gb_off = cplx(o[0], o[1]);
  }
  s.h_fd = cfg.get_real("base.h-fd", 0.04);
  if (!(s.h_fd > 0.0)) cfg.fail("base.h-fd", "must be positive");
  s.eps = cfg.get_real("base.eps", 1e-2);
  if (!(s.eps > 0.0)) cfg.fail("base.eps", "must be positive");
  s.radius = cfg.get_real("base.radius", 0.4);
  if (!(s.radius > 0.0)) cfg.fail("base.radius", "must be positive");
  if (cfg.has("base.center")) {
    for (double v : cfg.get_reals("base.center"))
      if (v != 0.0)
        cfg.fail("base.center",
                 "derivative routes are centered; only 0 is supported");
  }

  // weight / twist tables
  auto load_terms = [&](const std::string& section,
                        std::vector<FieldTermSpec>& into) {
    for (long i : cfg.numbered_sections(section)) {
      std::string pre = section + "." + std::to_string(i) + ".";
      FieldTermSpec t;
      std::vector<long> mode = cfg.get_ints(pre + "mode");
      if (mode.size() != 2) cfg.fail(pre + "mode", "expected two integers: m n");
      t.mode[0] = {int(mode[0]), int(mode[1])};
      if (cfg.has(pre + "mode2")) {
        if (!s.has_fiber || s.fiber.n() != 2)
          cfg.fail(pre + "mode2", "needs two fiber factors");
        std::vector<long> m2 = cfg.get_ints(pre + "mode2");
        if (m2.size() != 2) cfg.fail(pre + "mode2", "expected two integers");
        t.mode[1] = {int(m2[0]), int(m2[1])};
      }
      std::vector<std::string> b = cfg.get_words(pre + "base");
      auto par = [&](const std::string& w, const std::string& key) {
        errno = 0;
        char* end = nullptr;
        long v = std::strtol(w.c_str(), &end, 10);
        if (errno != 0 || end == w.c_str() || *end != '\0' || v < 1 || v > s.m)
          cfg.fail(key, "parameter index out of range: '" + w + "'");
        return int(v - 1);
      };
      if (b.size() == 1 && b[0] == "const") {
        t.base = FieldTermSpec::Base::constant;
      } else if (b.size() == 2 && (b[0] == "re" || b[0] == "im" || b[0] == "abs2")) {
        t.base = b[0] == "re"    ? FieldTermSpec::Base::re
                 : b[0] == "im" ? FieldTermSpec::Base::im
                                : FieldTermSpec::Base::abs2;
        t.j = par(b[1], pre + "base");
      } else if (b.size() == 3 && b[0] == "cross") {
        t.base = FieldTermSpec::Base::cross;
        t.j = par(b[1], pre + "base");
        t.k = par(b[2], pre + "base");
      } else {
        cfg.fail(pre + "base",
                 "expected 'const', 're J', 'im J', 'abs2 J' or 'cross J K'");
      }
      t.coef = cfg.get_real(pre + "coef");
      into.push_back(t);
    }
  };
  load_terms("weight.term", s.weight_terms);
  load_terms("twist.term", s.twist_terms);
  if (!s.twist_terms.empty() && s.gb_diag.empty())
    throw ConfigError(cfg.origin() +
                      ": a [twist.term.*] table needs base.gb (horizontal lifts "
                      "divide by the base metric)");
  if (s.has_fiber && s.fiber.n() == 2 && !s.weight_terms.empty())
    throw ConfigError(cfg.origin() +
                      ": weight tables are supported on one-factor fibers only");

  // run controls
  s.checks = cfg.get_words("run.checks");
  if (cfg.has("run.resolutions")) {
    for (long v : cfg.get_ints("run.resolutions")) {
      if (v < 8) cfg.fail("run.resolutions", "entries must be >= 8");
      if (!s.ladder.empty() && v <= s.ladder.back())
        cfg.fail("run.resolutions", "must be strictly increasing");
      s.ladder.push_back(int(v));
    }
  }
  if (cfg.has("closed-form.c")) s.closed_form_c = cfg.get_real("closed-form.c");
  s.gate_expect = cfg.get_string("gate.expect", "open");
  if (s.gate_expect != "open" && s.gate_expect != "blocked")
    cfg.fail("gate.expect", "must be 'open' or 'blocked'");

  // modular family
  if (!cfg.keys_under("modular").empty()) {
    ModularSpec ms;
    std::string kind = cfg.get_string("modular.kind", "modular");
    if (kind == "modular")
      ms.kind = FamilyKind::modular;
    else if (kind == "product")
      ms.kind = FamilyKind::product;
    else
      cfg.fail("modular.kind", "must be 'modular' or 'product'");
    std::vector<double> c = cfg.get_reals("modular.center");
    if (c.size() != 2) cfg.fail("modular.center", "expected two reals: Re Im");
    ms.center = cplx(c[0], c[1]);
    ms.step = cfg.get_real("modular.step", 0.01);
    ms.half = int(cfg.get_int("modular.half", 4));
    ms.area = cfg.get_real("modular.area", 1.0);
    ms.resolution = int(cfg.get_int("modular.resolution", 32));
    s.modular = ms;
    ModularFamily probe(ms);  // validates ranges with precise messages
    (void)probe;
  }

  // tolerances
  s.tol = default_tols();
  for (const std::string& key : cfg.keys_under("tol")) {
    std::string name = key.substr(std::string("tol.").size());
    auto it = s.tol.find(name);
    if (it == s.tol.end()) cfg.fail(key, "unknown tolerance name");
    double v = cfg.get_real(key);
    if (!(v > 0.0)) cfg.fail(key, "tolerances must be positive");
    it->second = v;
  }

  cfg.require_all_used();
  validate_check_set(s, s.checks, cfg.origin());
  return s;
}

Report run_scenario(const Scenario& sc, const RunOverrides& o) {
  Scenario s = sc;
  if (o.fd_step) s.h_fd = *o.fd_step;
  if (o.eps) s.eps = *o.eps;
  if (o.seed) s.seed = *o.seed;
  if (o.checks) {
    validate_check_set(s, *o.checks, "--checks");
    s.checks = *o.checks;
  }
  int res = s.fiber.resolution;
  if (o.resolution) {
    if (*o.resolution < 8) throw ConfigError("--resolution must be >= 8");
    res = *o.resolution;
  }

  RunCtx ctx(s, res);
  ojson root;
  root["scenario"] = s.name;
  ojson prov;
  prov["resolution"] = res;
  prov["levels"] = s.fiber.levels;
  put(prov, "eps", s.eps);
  put(prov, "h_fd", s.h_fd);
  prov["seed"] = s.seed;
  prov["refine"] = o.refine;
  prov["checks"] = s.checks;
  root["provenance"] = prov;

  bool all = true;
  std::ostringstream summary;
  ojson checks = ojson::object();
  Report rep;
  for (const std::string& name : s.checks) {
    CheckOut c;
    try {
      c = dispatch(name, s, ctx, o.refine);
    } catch (const LabError& e) {
      c.pass = false;
      c.data = ojson::object();
      c.data["error"] = std::string(e.what());
      c.csv = "error\n" + std::string(e.what()) + "\n";
    }
    ojson entry;
    entry["verdict"] = c.pass ? "pass" : "fail";
    for (auto& [k, v] : c.data.items()) entry[k] = v;
    checks[name] = entry;
    rep.csvs.emplace_back(name + ".csv", c.csv);
    summary << "  " << name << ": " << (c.pass ? "PASS" : "FAIL") << "\n";
    all = all && c.pass;
  }
  root["checks"] = checks;
  root["verdict"] = all ? "pass" : "fail";

  rep.name = s.name;
  rep.pass = all;
  rep.json = root.dump(2) + "\n";
  rep.summary = "scenario " + s.name + ": " + (all ? "PASS" : "FAIL") + "\n" +
                summary.str();
  return rep;
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------
namespace {

void usage(std::ostream& os) {
  os << "usage: hdib-run --scenario FILE [--scenario FILE ...]\n"
        "                [--out DIR] [--resolution N] [--fd-step H] [--eps E]\n"
        "                [--checks a,b,c] [--refine] [--seed S]\n"
        "environment: HDIB_WORKERS = scenario worker count (default: cores)\n"
        "exit codes: 0 all checks pass, 1 check failure, 2 configuration "
        "error\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> paths;
  std::string out_dir = "out";
  RunOverrides ov;

  auto need_value = [&](int& i, const std::string& flag) -> std::string {
    if (i + 1 >= argc) {
      std::cerr << "error: flag " << flag << " needs a value\n";
      usage(std::cerr);
      std::exit(2);
    }
    return argv[++i];
  };

  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    try {
      if (a == "--scenario") {
        paths.push_back(need_value(i, a));
      } else if (a == "--out") {
        out_dir = need_value(i, a);
      } else if (a == "--resolution") {
        ov.resolution = std::stoi(need_value(i, a));
      } else if (a == "--fd-step") {
        ov.fd_step = std::stod(need_value(i, a));
      } else if (a == "--eps") {
        ov.eps = std::stod(need_value(i, a));
      } else if (a == "--checks") {
        std::string v = need_value(i, a);
        for (char& c : v)
          if (c == ',') c = ' ';
        std::stringstream ss(v);
        std::vector<std::string> list;
        std::string w;
        while (ss >> w) list.push_back(w);
        ov.checks = list;
      } else if (a == "--refine") {
        ov.refine = true;
      } else if (a == "--seed") {
        ov.seed = std::stoull(need_value(i, a));
      } else if (a == "--help" || a == "-h") {
        usage(std::cout);
        return 0;
      } else {
        std::cerr << "error: unknown flag '" << a << "'\n";
        usage(std::cerr);
        return 2;
      }
    } catch (const std::exception&) {
      std::cerr << "error: bad value for flag " << a << "\n";
      return 2;
    }
  }
  if (paths.empty()) {
    std::cerr << "error: no --scenario given\n";
    usage(std::cerr);
    return 2;
  }

  // parse and validate everything before any work starts
  std::vector<Scenario> scenarios;
  try {
    for (const std::string& p : paths)
      scenarios.push_back(load_scenario(Config::parse_file(p)));
    for (size_t i = 0; i < scenarios.size(); ++i)
      for (size_t j = i + 1; j < scenarios.size(); ++j)
        if (scenarios[i].name == scenarios[j].name)
          throw ConfigError("duplicate scenario name '" + scenarios[i].name +
                            "' (outputs would collide)");
    if (ov.checks)
      for (const Scenario& s : scenarios) validate_check_set(s, *ov.checks, "--checks");
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  long workers = long(std::min<std::size_t>(
      scenarios.size(), std::max(1u, std::thread::hardware_concurrency())));
  if (const char* env = std::getenv("HDIB_WORKERS")) {
    errno = 0;
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (errno != 0 || end == env || *end != '\0' || v < 1) {
      std::cerr << "error: HDIB_WORKERS must be a positive integer\n";
      return 2;
    }
    workers = std::min<long>(v, long(scenarios.size()));
  }

  auto started = std::chrono::steady_clock::now();
  std::vector<Report> reports(scenarios.size());
  std::vector<std::string> errors(scenarios.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= scenarios.size()) return;
      try {
        reports[i] = run_scenario(scenarios[i], ov);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (long w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (size_t i = 0; i < scenarios.size(); ++i)
    if (!errors[i].empty()) {
      std::cerr << "error: scenario " << scenarios[i].name << ": " << errors[i]
                << "\n";
      return 2;
    }

  // write reports and CSVs
  namespace fs = std::filesystem;
  bool all = true;
  try {
    for (const Report& r : reports) {
      fs::path dir = fs::path(out_dir) / r.name;
      fs::create_directories(dir);
      std::ofstream jf(dir / "report.json", std::ios::binary);
      jf << r.json;
      if (!jf) throw LabError("cannot write " + (dir / "report.json").string());
      for (const auto& [name, content] : r.csvs) {
        std::ofstream cf(dir / name, std::ios::binary);
        cf << content;
        if (!cf) throw LabError("cannot write " + (dir / name).string());
      }
      all = all && r.pass;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  for (const Report& r : reports) std::cout << r.summary;
  std::cout.flush();
  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                               started)
                     .count();
  std::cerr << "ran " << scenarios.size() << " scenario(s) in " << elapsed
            << " s with " << workers << " worker(s)\n";
  return all ? 0 : 1;
}

}  // namespace hdib
