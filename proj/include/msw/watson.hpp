#pragma once

#include <vector>

#include "msw/common.hpp"

namespace msw {

// ODI = (2/pi) * arctan(1/kappa), a strictly decreasing bijection from
// kappa in [0,inf) onto (0,1].
double odi_from_kappa(double kappa);
double kappa_from_odi(double odi);

// Deterministic 121-point quadrature on the hemisphere for averages against
// the Watson density exp(kappa (mu.n)^2), mu = +z. The polar rule places
// its nodes inside the density's support (single panel for small kappa, a
// two-panel split hugging t=1 for concentrated densities), the azimuth is
// an 11-point trapezoid. Weights absorb exp(kappa (t^2 - 1)) so they stay
// finite for any kappa.
class WatsonQuadrature {
 public:
  static WatsonQuadrature build(double kappa);

  double kappa() const { return kappa_; }

  // E[(n.mu)^2] under the Watson density.
  double tau() const;

  // Watson-averaged stick attenuation E[exp(-b d_par (g.n)^2)] where
  // cos_gmu = g.mu; by axial symmetry the azimuth of g is irrelevant.
  double stick_average(double b_dpar, double cos_gmu) const;

  size_t num_points() const { return t_.size() * phi_.size(); }

 private:
  double kappa_ = 0;
  std::vector<double> t_;     // polar nodes (cos theta)
  std::vector<double> wt_;    // polar weights including the Watson density
  std::vector<double> phi_;   // azimuthal angles
  double wt_sum_ = 0;
};

}  // namespace msw
