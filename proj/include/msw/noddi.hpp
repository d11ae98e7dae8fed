#pragma once

#include <vector>

#include "msw/dti.hpp"
#include "msw/gradients.hpp"
#include "msw/nifti.hpp"
#include "msw/watson.hpp"

namespace msw {

// Three-compartment model:
//   S/S0 = f_iso A_iso + (1 - f_iso) (v A_intra + (1 - v) A_extra)
// A_iso = exp(-b d_iso); A_intra is the Watson average of the stick
// exp(-b d_par (g.n)^2); A_extra is the Gaussian with the Watson-averaged
// tortuosity tensor, d_perp = d_par (1 - v).
struct NoddiParams {
  double v_intra = 0.5;  // within-tissue intra-neurite fraction
  double f_iso = 0.0;
  double kappa = 3.0;
  Vec3 mu{0, 0, 1};

  void validate() const;
  double odi() const { return odi_from_kappa(kappa); }
  // Reported volume-fraction metrics.
  double metric_f_intra() const { return v_intra; }
  double metric_f_extra() const { return (1.0 - f_iso) * (1.0 - v_intra); }
};

// Fixed diffusivities (standard convention; mm^2/s).
struct NoddiConstants {
  double d_par = 1.7e-3;
  double d_iso = 3.0e-3;
};

std::vector<double> simulate_noddi_signal(const NoddiParams& p, const GradientTable& gtab, double s0 = 1.0,
                                          const NoddiConstants& consts = {});

struct NoddiFitOptions {
  NoddiConstants consts;
  DtiFitOptions dti;  // used only to seed the orientation
  int threads = 1;
  int max_iter = 16;
  double csf_flag_threshold = 0.95;  // f_iso above this: orientation indeterminate
};

struct NoddiVoxelFit {
  NoddiParams p;
  double s0 = 0;
  double rms_residual = 0;  // of S/S0
  bool degenerate = true;
  bool orientation_indeterminate = false;
};

struct NoddiResult {
  ScalarMap odi, f_intra, f_extra;
  ScalarMap degenerate;  // 1 where the fit failed
  ScalarMap residual;    // per-voxel RMS residual of S/S0
  std::vector<NoddiVoxelFit> voxels;
};

// Coarse grid search (orientation seeded by the DTI principal eigenvector)
// followed by bounded Gauss-Newton refinement of (v, f_iso, kappa) on the
// least-squares residual. Requires at least two nonzero shells.
NoddiResult fit_noddi(const Volume& dwi, const ScalarMap& mask, const GradientTable& gtab,
                      const NoddiFitOptions& opts = {});

}  // namespace msw
