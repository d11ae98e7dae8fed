#include "msw/dti.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>

#include "msw/parallel.hpp"

namespace msw {

std::vector<double> simulate_dti_signal(const SymTensor3& d, double s0, const GradientTable& gtab) {
  gtab.validate();
  std::vector<double> s(gtab.size());
  for (size_t i = 0; i < gtab.size(); ++i)
    s[i] = s0 * std::exp(-gtab.bvals[i] * quadratic_form(d, gtab.bvecs[i]));
  return s;
}

std::vector<double> simulate_dti_signal(const std::array<double, 9>& m, double s0, const GradientTable& gtab) {
  const double asym = std::fabs(m[1] - m[3]) + std::fabs(m[2] - m[6]) + std::fabs(m[5] - m[7]);
  const double scale = std::fabs(m[0]) + std::fabs(m[4]) + std::fabs(m[8]) + 1e-30;
  if (asym > 1e-9 * scale) throw ValueError("diffusion tensor must be symmetric");
  return simulate_dti_signal(SymTensor3{m[0], m[4], m[8], m[1], m[2], m[5]}, s0, gtab);
}

DtiMetrics dti_metrics(double l1, double l2, double l3) {
  DtiMetrics m;
  const double ss = l1 * l1 + l2 * l2 + l3 * l3;
  if (ss <= 0) return m;
  const double num = (l1 - l2) * (l1 - l2) + (l2 - l3) * (l2 - l3) + (l3 - l1) * (l3 - l1);
  m.fa = std::sqrt(0.5 * num / ss);
  m.axd = l1;
  m.rd = 0.5 * (l2 + l3);
  return m;
}

namespace {

// Rows of the log-linear design: ln S = [1, -b gx^2, -b gy^2, -b gz^2,
// -2b gx gy, -2b gx gz, -2b gy gz] . [ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz]
void design_row(double b, const Vec3& g, double* row) {
  row[0] = 1.0;
  row[1] = -b * g[0] * g[0];
  row[2] = -b * g[1] * g[1];
  row[3] = -b * g[2] * g[2];
  row[4] = -2.0 * b * g[0] * g[1];
  row[5] = -2.0 * b * g[0] * g[2];
  row[6] = -2.0 * b * g[1] * g[2];
}

}  // namespace

DtiResult fit_dti(const Volume& dwi, const ScalarMap& mask, const GradientTable& gtab,
                  const DtiFitOptions& opts) {
  gtab.validate();
  if (static_cast<size_t>(dwi.nt) != gtab.size())
    throw ValueError(cat("dataset has ", dwi.nt, " volumes but gradient table has ", gtab.size()));
  if (!dwi.same_grid(mask)) throw ValueError("mask grid does not match data grid");

  std::vector<int> rows;  // measurements used by the fit
  for (size_t i = 0; i < gtab.size(); ++i)
    if (gtab.bvals[i] <= opts.bmax) rows.push_back(static_cast<int>(i));
  if (rows.size() < 7)
    throw ConfigError(cat("DTI fit needs >= 7 measurements at b <= ", opts.bmax, ", have ", rows.size()));

  Eigen::MatrixXd X(static_cast<int>(rows.size()), 7);
  for (size_t r = 0; r < rows.size(); ++r) {
    double buf[7];
    design_row(gtab.bvals[static_cast<size_t>(rows[r])], gtab.bvecs[static_cast<size_t>(rows[r])], buf);
    for (int c = 0; c < 7; ++c) X(static_cast<int>(r), c) = buf[c];
  }
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < 7) {
      std::string dirs;
      for (const int r : rows)
        dirs += cat(" (b=", gtab.bvals[static_cast<size_t>(r)], ", g=[", gtab.bvecs[static_cast<size_t>(r)][0], ",",
                    gtab.bvecs[static_cast<size_t>(r)][1], ",", gtab.bvecs[static_cast<size_t>(r)][2], "])");
      throw ConfigError(cat("DTI design is rank-deficient; need >= 6 non-collinear directions, got:", dirs));
    }
  }

  DtiResult res;
  res.fa = ScalarMap(dwi.nx, dwi.ny, dwi.nz);
  res.axd = ScalarMap(dwi.nx, dwi.ny, dwi.nz);
  res.rd = ScalarMap(dwi.nx, dwi.ny, dwi.nz);
  res.degenerate = ScalarMap(dwi.nx, dwi.ny, dwi.nz);
  res.voxels.assign(static_cast<size_t>(dwi.voxels()), DtiVoxelFit{});
  res.fa.dx = res.axd.dx = res.rd.dx = res.degenerate.dx = dwi.dx;
  res.fa.dy = res.axd.dy = res.rd.dy = res.degenerate.dy = dwi.dy;
  res.fa.dz = res.axd.dz = res.rd.dz = res.degenerate.dz = dwi.dz;

  const int64_t nvox = dwi.voxels();
  parallel_for(nvox, opts.threads, [&](int64_t vox) {
    if (mask.v[static_cast<size_t>(vox)] == 0.f) return;
    auto& out = res.voxels[static_cast<size_t>(vox)];

    // usable rows: positive signal only
    std::vector<int> use;
    use.reserve(rows.size());
    for (const int r : rows) {
      const float s = dwi.v[static_cast<size_t>(vox + static_cast<int64_t>(r) * nvox)];
      if (s > 0.f) use.push_back(r);
    }
    const auto flag_degenerate = [&]() {
      out.degenerate = true;
      res.degenerate.v[static_cast<size_t>(vox)] = 1.f;
    };
    if (use.size() < 7) {
      flag_degenerate();
      return;
    }

    const int n = static_cast<int>(use.size());
    Eigen::MatrixXd A(n, 7);
    Eigen::VectorXd y(n);
    for (int r = 0; r < n; ++r) {
      double buf[7];
      design_row(gtab.bvals[static_cast<size_t>(use[static_cast<size_t>(r)])],
                 gtab.bvecs[static_cast<size_t>(use[static_cast<size_t>(r)])], buf);
      for (int c = 0; c < 7; ++c) A(r, c) = buf[c];
      y(r) = std::log(static_cast<double>(dwi.v[static_cast<size_t>(vox + static_cast<int64_t>(use[static_cast<size_t>(r)]) * nvox)]));
    }

    // unweighted pass, then one reweighting with w = predicted signal squared
    Eigen::VectorXd beta = (A.transpose() * A).ldlt().solve(A.transpose() * y);
    Eigen::VectorXd w = (2.0 * (A * beta)).array().exp();
    Eigen::MatrixXd Aw = w.asDiagonal() * A;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A.transpose() * Aw);
    if (ldlt.info() != Eigen::Success) {
      flag_degenerate();
      return;
    }
    beta = ldlt.solve(A.transpose() * (w.asDiagonal() * y));
    if (!beta.allFinite()) {
      flag_degenerate();
      return;
    }

    Eigen::Matrix3d D;
    D << beta(1), beta(4), beta(5), beta(4), beta(2), beta(6), beta(5), beta(6), beta(3);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(D);
    Eigen::Vector3d evals = eig.eigenvalues();   // ascending
    Eigen::Matrix3d evecs = eig.eigenvectors();

    out.s0 = std::exp(beta(0));
    out.d = {beta(1), beta(2), beta(3), beta(4), beta(5), beta(6)};
    out.lambda = {evals(2), evals(1), evals(0)};
    Eigen::Vector3d p = evecs.col(2);
    // deterministic sign: largest-magnitude component positive
    int big = 0;
    for (int i = 1; i < 3; ++i)
      if (std::fabs(p(i)) > std::fabs(p(big))) big = i;
    if (p(big) < 0) p = -p;
    out.principal = {p(0), p(1), p(2)};

    if (out.lambda[2] < -1e-12) {  // negative eigenvalue: non-physical fit
      flag_degenerate();
      return;
    }
    out.degenerate = false;
    const DtiMetrics m = dti_metrics(out.lambda[0], out.lambda[1], out.lambda[2]);
    res.fa.v[static_cast<size_t>(vox)] = static_cast<float>(m.fa);
    res.axd.v[static_cast<size_t>(vox)] = static_cast<float>(m.axd);
    res.rd.v[static_cast<size_t>(vox)] = static_cast<float>(m.rd);
  });

  return res;
}

}  // namespace msw
