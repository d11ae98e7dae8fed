#include "msw/noddi.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "msw/parallel.hpp"

namespace msw {

void NoddiParams::validate() const {
  if (v_intra < 0 || v_intra > 1) throw ValueError(cat("v_intra must lie in [0,1], got ", v_intra));
  if (f_iso < 0 || f_iso > 1) throw ValueError(cat("f_iso must lie in [0,1], got ", f_iso));
  if (kappa < 0) throw ValueError(cat("kappa must be >= 0, got ", kappa));
  const double n = norm3(mu);
  if (std::fabs(n - 1.0) > 1e-6) throw ValueError(cat("mu must be unit norm, got |mu| = ", n));
}

namespace {

// Hindered (extra-neurite) attenuation from the Watson-averaged tortuosity
// tensor: axial d_par, radial d_par (1 - v), averaged orientation spread tau.
double a_extra(double b, double c2, double v_intra, double tau, const NoddiConstants& k) {
  const double d_perp = k.d_par * (1.0 - v_intra);
  const double d_axial = d_perp + (k.d_par - d_perp) * tau;
  const double d_radial = d_perp + (k.d_par - d_perp) * (1.0 - tau) * 0.5;
  return std::exp(-b * (d_radial * (1.0 - c2) + d_axial * c2));
}

}  // namespace

std::vector<double> simulate_noddi_signal(const NoddiParams& p, const GradientTable& gtab, double s0,
                                          const NoddiConstants& consts) {
  p.validate();
  gtab.validate();
  const WatsonQuadrature quad = WatsonQuadrature::build(p.kappa);
  const double tau = quad.tau();
  std::vector<double> s(gtab.size());
  for (size_t i = 0; i < gtab.size(); ++i) {
    const double b = gtab.bvals[i];
    if (b <= 0) {
      s[i] = s0;
      continue;
    }
    const double c = dot3(gtab.bvecs[i], p.mu);
    const double a_iso = std::exp(-b * consts.d_iso);
    const double a_in = quad.stick_average(b * consts.d_par, c);
    const double a_ex = a_extra(b, c * c, p.v_intra, tau, consts);
    s[i] = s0 * (p.f_iso * a_iso + (1.0 - p.f_iso) * (p.v_intra * a_in + (1.0 - p.v_intra) * a_ex));
  }
  return s;
}

namespace {

// Precomputed stick averages over (kappa, shell, |g.mu|) so the per-voxel
// search interpolates instead of re-integrating.
struct StickTables {
  std::vector<double> kappas;      // log-spaced grid
  std::vector<double> shells;      // nonzero b-values
  std::vector<double> taus;        // per kappa
  int nc = 65;                     // |g.mu| grid resolution
  std::vector<double> table;       // [ik][ishell][ic]

  double& at(int ik, int is, int ic) {
    return table[(static_cast<size_t>(ik) * shells.size() + static_cast<size_t>(is)) * static_cast<size_t>(nc) +
                 static_cast<size_t>(ic)];
  }
  double at(int ik, int is, int ic) const {
    return table[(static_cast<size_t>(ik) * shells.size() + static_cast<size_t>(is)) * static_cast<size_t>(nc) +
                 static_cast<size_t>(ic)];
  }

  static StickTables build(const std::vector<double>& shells, const NoddiConstants& consts) {
    StickTables tb;
    tb.shells = shells;
    const int nk = 25;
    const double k_lo = 0.05, k_hi = 64.0;
    for (int i = 0; i < nk; ++i)
      tb.kappas.push_back(k_lo * std::pow(k_hi / k_lo, static_cast<double>(i) / (nk - 1)));
    tb.table.assign(static_cast<size_t>(nk) * shells.size() * static_cast<size_t>(tb.nc), 0.0);
    tb.taus.resize(static_cast<size_t>(nk));
    for (int ik = 0; ik < nk; ++ik) {
      const WatsonQuadrature quad = WatsonQuadrature::build(tb.kappas[static_cast<size_t>(ik)]);
      tb.taus[static_cast<size_t>(ik)] = quad.tau();
      for (size_t is = 0; is < shells.size(); ++is)
        for (int ic = 0; ic < tb.nc; ++ic) {
          const double c = static_cast<double>(ic) / (tb.nc - 1);
          tb.at(ik, static_cast<int>(is), ic) = quad.stick_average(shells[is] * consts.d_par, c);
        }
    }
    return tb;
  }

  // clamped linear interpolation in log(kappa); linear in c
  void locate_kappa(double kappa, int& ik, double& fk) const {
    const double k = std::clamp(kappa, kappas.front(), kappas.back());
    const double pos = std::log(k / kappas.front()) / std::log(kappas[1] / kappas[0]);
    ik = std::clamp(static_cast<int>(pos), 0, static_cast<int>(kappas.size()) - 2);
    fk = std::clamp(pos - ik, 0.0, 1.0);
  }

  double stick(int ik, double fk, int is, double c) const {
    const double pos = std::fabs(c) * (nc - 1);
    int ic = std::clamp(static_cast<int>(pos), 0, nc - 2);
    const double fc = std::clamp(pos - ic, 0.0, 1.0);
    const double lo = at(ik, is, ic) * (1 - fc) + at(ik, is, ic + 1) * fc;
    const double hi = at(ik + 1, is, ic) * (1 - fc) + at(ik + 1, is, ic + 1) * fc;
    return lo * (1 - fk) + hi * fk;
  }

  double tau_of(int ik, double fk) const {
    return taus[static_cast<size_t>(ik)] * (1 - fk) + taus[static_cast<size_t>(ik) + 1] * fk;
  }
};

struct VoxelProblem {
  const StickTables* tables;
  const NoddiConstants* consts;
  std::vector<double> y;        // normalized signal S/S0, all measurements
  std::vector<double> b;        // b-value per measurement
  std::vector<int> shell_idx;   // -1 for b0 rows
  std::vector<double> c;        // |g.mu|

  // residual norm^2 and optionally residuals of model - y
  double eval(double v, double fiso, double kappa, std::vector<double>* resid) const {
    int ik;
    double fk;
    tables->locate_kappa(kappa, ik, fk);
    const double tau = tables->tau_of(ik, fk);
    double cost = 0;
    for (size_t m = 0; m < y.size(); ++m) {
      double model;
      if (shell_idx[m] < 0) {
        model = 1.0;
      } else {
        const double a_iso = std::exp(-b[m] * consts->d_iso);
        const double a_in = tables->stick(ik, fk, shell_idx[m], c[m]);
        const double a_ex = a_extra(b[m], c[m] * c[m], v, tau, *consts);
        model = fiso * a_iso + (1.0 - fiso) * (v * a_in + (1.0 - v) * a_ex);
      }
      const double r = model - y[m];
      if (resid) (*resid)[m] = r;
      cost += r * r;
    }
    return cost;
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

NoddiResult fit_noddi(const Volume& dwi, const ScalarMap& mask, const GradientTable& gtab,
                      const NoddiFitOptions& opts) {
  gtab.validate();
  if (static_cast<size_t>(dwi.nt) != gtab.size())
    throw ValueError(cat("dataset has ", dwi.nt, " volumes but gradient table has ", gtab.size()));
  if (!dwi.same_grid(mask)) throw ValueError("mask grid does not match data grid");
  const std::vector<double> shells = gtab.shells();
  if (shells.size() < 2)
    throw ConfigError(cat("NODDI requires multi-shell data; found ", shells.size(), " nonzero shell(s)"));

  const DtiResult dti = fit_dti(dwi, mask, gtab, opts.dti);
  const StickTables tables = StickTables::build(shells, opts.consts);

  // per-measurement shell index
  std::vector<int> shell_of(gtab.size(), -1);
  for (size_t m = 0; m < gtab.size(); ++m) {
    if (gtab.bvals[m] <= 10.0) continue;
    int best = 0;
    for (size_t s = 1; s < shells.size(); ++s)
      if (std::fabs(gtab.bvals[m] - shells[s]) < std::fabs(gtab.bvals[m] - shells[best])) best = static_cast<int>(s);
    shell_of[m] = best;
  }
  const std::vector<int> b0s = gtab.b0_indices();

  NoddiResult res;
  res.odi = ScalarMap(dwi.nx, dwi.ny, dwi.nz);
  res.f_intra = ScalarMap(dwi.nx, dwi.ny, dwi.nz);
  res.f_extra = ScalarMap(dwi.nx, dwi.ny, dwi.nz);
  res.degenerate = ScalarMap(dwi.nx, dwi.ny, dwi.nz);
  res.residual = ScalarMap(dwi.nx, dwi.ny, dwi.nz);
  for (ScalarMap* m : {&res.odi, &res.f_intra, &res.f_extra, &res.degenerate, &res.residual}) {
    m->dx = dwi.dx;
    m->dy = dwi.dy;
    m->dz = dwi.dz;
  }
  res.voxels.assign(static_cast<size_t>(dwi.voxels()), NoddiVoxelFit{});

  // coarse search grids
  std::vector<double> grid_v, grid_fiso, grid_kappa;
  for (double v = 0.05; v <= 0.951; v += 0.15) grid_v.push_back(v);
  for (double f = 0.0; f <= 1.001; f += 0.2) grid_fiso.push_back(std::min(f, 1.0));
  for (size_t i = 0; i < tables.kappas.size(); i += 2) grid_kappa.push_back(tables.kappas[i]);

  const int64_t nvox = dwi.voxels();
  parallel_for(nvox, opts.threads, [&](int64_t vox) {
    if (mask.v[static_cast<size_t>(vox)] == 0.f) return;
    auto& out = res.voxels[static_cast<size_t>(vox)];

    double s0 = 0;
    for (const int m : b0s) s0 += dwi.v[static_cast<size_t>(vox + static_cast<int64_t>(m) * nvox)];
    s0 /= static_cast<double>(b0s.size());
    if (!(s0 > 0)) {
      res.degenerate.v[static_cast<size_t>(vox)] = 1.f;
      return;
    }

    VoxelProblem prob;
    prob.tables = &tables;
    prob.consts = &opts.consts;
    prob.y.resize(gtab.size());
    prob.b = gtab.bvals;
    prob.shell_idx = shell_of;
    prob.c.resize(gtab.size());
    const Vec3 mu = dti.voxels[static_cast<size_t>(vox)].principal;
    for (size_t m = 0; m < gtab.size(); ++m) {
      prob.y[m] = dwi.v[static_cast<size_t>(vox + static_cast<int64_t>(m) * nvox)] / s0;
      prob.c[m] = std::fabs(dot3(gtab.bvecs[m], mu));
    }

    // coarse grid
    double best_cost = 1e300, bv = 0.5, bf = 0.1, bk = 3.0;
    for (const double v : grid_v)
      for (const double f : grid_fiso)
        for (const double k : grid_kappa) {
          const double cost = prob.eval(v, f, k, nullptr);
          if (cost < best_cost) {
            best_cost = cost;
            bv = v;
            bf = f;
            bk = k;
          }
        }

    // bounded Gauss-Newton (Levenberg damped) in transformed coordinates
    const double k_lo = tables.kappas.front(), k_hi = tables.kappas.back();
    double th[3] = {logit(std::clamp(bv, 0.02, 0.98)), logit(std::clamp(bf, 0.02, 0.98)),
                    std::log(std::clamp(bk, k_lo * 1.01, k_hi * 0.99))};
    auto unpack = [&](const double* t, double& v, double& f, double& k) {
      v = sigmoid(t[0]);
      f = sigmoid(t[1]);
      k = std::clamp(std::exp(t[2]), k_lo, k_hi);
    };
    const size_t M = gtab.size();
    std::vector<double> r0(M), rp(M);
    double v, f, k;
    unpack(th, v, f, k);
    double cost = prob.eval(v, f, k, &r0);
    double lambda = 1e-3;
    for (int it = 0; it < opts.max_iter; ++it) {
      // numeric Jacobian, forward differences
      Eigen::Matrix3d JtJ = Eigen::Matrix3d::Zero();
      Eigen::Vector3d Jtr = Eigen::Vector3d::Zero();
      Eigen::MatrixXd J(M, 3);
      const double h = 1e-4;
      for (int p = 0; p < 3; ++p) {
        double tp[3] = {th[0], th[1], th[2]};
        tp[p] += h;
        double vv, ff, kk;
        unpack(tp, vv, ff, kk);
        prob.eval(vv, ff, kk, &rp);
        for (size_t m = 0; m < M; ++m) J(static_cast<int>(m), p) = (rp[m] - r0[m]) / h;
      }
      JtJ = J.transpose() * J;
      Eigen::VectorXd rv = Eigen::Map<Eigen::VectorXd>(r0.data(), static_cast<int>(M));
      Jtr = J.transpose() * rv;
      bool accepted = false;
      for (int attempt = 0; attempt < 6; ++attempt) {
        Eigen::Matrix3d A = JtJ + lambda * Eigen::Matrix3d::Identity();
        Eigen::Vector3d delta = A.ldlt().solve(-Jtr);
        double tn[3] = {th[0] + delta(0), th[1] + delta(1), th[2] + delta(2)};
        // keep the transformed parameters in a sane range
        for (int p = 0; p < 2; ++p) tn[p] = std::clamp(tn[p], -12.0, 12.0);
        tn[2] = std::clamp(tn[2], std::log(k_lo), std::log(k_hi));
        double vv, ff, kk;
        unpack(tn, vv, ff, kk);
        const double cn = prob.eval(vv, ff, kk, &rp);
        if (cn < cost) {
          std::copy(tn, tn + 3, th);
          std::swap(r0, rp);
          cost = cn;
          lambda = std::max(lambda * 0.3, 1e-7);
          accepted = true;
          break;
        }
        lambda *= 10.0;
      }
      if (!accepted) break;
    }
    unpack(th, v, f, k);

    out.p.v_intra = v;
    out.p.f_iso = f;
    out.p.kappa = k;
    out.p.mu = mu;
    out.s0 = s0;
    out.rms_residual = std::sqrt(cost / static_cast<double>(M));
    out.degenerate = false;
    out.orientation_indeterminate = f >= opts.csf_flag_threshold;

    res.odi.v[static_cast<size_t>(vox)] = static_cast<float>(odi_from_kappa(k));
    res.f_intra.v[static_cast<size_t>(vox)] = static_cast<float>(out.p.metric_f_intra());
    res.f_extra.v[static_cast<size_t>(vox)] = static_cast<float>(out.p.metric_f_extra());
    res.residual.v[static_cast<size_t>(vox)] = static_cast<float>(out.rms_residual);
  });

  return res;
}

}  // namespace msw
