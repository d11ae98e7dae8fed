#pragma once

#include <array>
#include <vector>

#include "msw/gradients.hpp"
#include "msw/nifti.hpp"

namespace msw {

// Symmetric tensor, components ordered (xx, yy, zz, xy, xz, yz), mm^2/s.
using SymTensor3 = std::array<double, 6>;

inline double quadratic_form(const SymTensor3& d, const Vec3& g) {
  return d[0] * g[0] * g[0] + d[1] * g[1] * g[1] + d[2] * g[2] * g[2] +
         2.0 * (d[3] * g[0] * g[1] + d[4] * g[0] * g[2] + d[5] * g[1] * g[2]);
}

// Monoexponential tensor model S = S0 * exp(-b g^T D g).
std::vector<double> simulate_dti_signal(const SymTensor3& d, double s0, const GradientTable& gtab);
// Full-matrix overload; validates symmetry (row-major 3x3).
std::vector<double> simulate_dti_signal(const std::array<double, 9>& d, double s0, const GradientTable& gtab);

// FA / AxD / RD from eigenvalues sorted descending.
struct DtiMetrics {
  double fa = 0, axd = 0, rd = 0;
};
DtiMetrics dti_metrics(double l1, double l2, double l3);

struct DtiFitOptions {
  double bmax = 1000.0;  // fit restricted to b <= bmax (plus b=0)
  int threads = 1;
};

struct DtiVoxelFit {
  SymTensor3 d{};
  double s0 = 0;
  std::array<double, 3> lambda{};  // descending
  Vec3 principal{0, 0, 1};
  bool degenerate = true;
};

struct DtiResult {
  ScalarMap fa, axd, rd;
  ScalarMap degenerate;             // 1 where the voxel fit failed
  std::vector<DtiVoxelFit> voxels;  // x-fastest order, one per voxel
};

// Weighted linear least squares on ln S (one reweighting pass with squared
// predicted-signal weights), then eigendecomposition per voxel. Voxels
// outside the mask are skipped.
DtiResult fit_dti(const Volume& dwi, const ScalarMap& mask, const GradientTable& gtab,
                  const DtiFitOptions& opts = {});

}  // namespace msw
