#include "msw/watson.hpp"

#include <cmath>

namespace msw {

double odi_from_kappa(double kappa) {
  if (kappa < 0) throw ValueError(cat("Watson concentration must be >= 0, got ", kappa));
  if (kappa == 0) return 1.0;
  return (2.0 / M_PI) * std::atan(1.0 / kappa);
}

double kappa_from_odi(double odi) {
  if (odi <= 0 || odi > 1) throw ValueError(cat("ODI must lie in (0,1], got ", odi));
  if (odi == 1.0) return 0.0;
  return 1.0 / std::tan(M_PI * odi / 2.0);
}

namespace {

// Gauss-Legendre nodes/weights on [-1,1] via Newton on the Legendre
// recurrence; n is small so this is exact to machine precision.
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(static_cast<size_t>(n), 0.0);
  w.assign(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      const double dp = n * (t * p1 - p0) / (t * t - 1.0);
      const double dt = p1 / dp;
      t -= dt;
      if (std::fabs(dt) < 1e-15) break;
    }
    double p0 = 1.0, p1 = t;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    const double dp = n * (t * p1 - p0) / (t * t - 1.0);
    x[static_cast<size_t>(i)] = t;
    w[static_cast<size_t>(i)] = 2.0 / ((1.0 - t * t) * dp * dp);
  }
}

void append_panel(double lo, double hi, int n, double kappa, std::vector<double>& t, std::vector<double>& wt) {
  std::vector<double> x, w;
  gauss_legendre(n, x, w);
  const double half = 0.5 * (hi - lo);
  const double mid = 0.5 * (hi + lo);
  for (int i = 0; i < n; ++i) {
    const double ti = mid + half * x[static_cast<size_t>(i)];
    // density scaled by exp(-kappa) to stay finite at any concentration
    t.push_back(ti);
    wt.push_back(half * w[static_cast<size_t>(i)] * std::exp(kappa * (ti * ti - 1.0)));
  }
}

}  // namespace

WatsonQuadrature WatsonQuadrature::build(double kappa) {
  if (kappa < 0) throw ValueError(cat("Watson concentration must be >= 0, got ", kappa));
  WatsonQuadrature q;
  q.kappa_ = kappa;
  constexpr double kEfolds = 9.0;  // panel split covers e^-9 of the density
  if (kappa <= kEfolds) {
    append_panel(0.0, 1.0, 11, kappa, q.t_, q.wt_);
  } else {
    const double split = std::sqrt(1.0 - kEfolds / kappa);
    append_panel(split, 1.0, 8, kappa, q.t_, q.wt_);
    append_panel(0.0, split, 3, kappa, q.t_, q.wt_);
  }
  const int n_phi = 11;
  for (int j = 0; j < n_phi; ++j) q.phi_.push_back(2.0 * M_PI * (j + 0.5) / n_phi);
  q.wt_sum_ = 0;
  for (const double w : q.wt_) q.wt_sum_ += w;
  return q;
}

double WatsonQuadrature::tau() const {
  double acc = 0;
  for (size_t i = 0; i < t_.size(); ++i) acc += wt_[i] * t_[i] * t_[i];
  return acc / wt_sum_;
}

double WatsonQuadrature::stick_average(double b_dpar, double cos_gmu) const {
  const double c = cos_gmu;
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  double acc = 0;
  for (size_t i = 0; i < t_.size(); ++i) {
    const double ti = t_[i];
    const double sti = std::sqrt(std::max(0.0, 1.0 - ti * ti));
    double az = 0;
    for (const double phi : phi_) {
      const double gn = c * ti + s * sti * std::cos(phi);
      az += std::exp(-b_dpar * gn * gn);
    }
    acc += wt_[i] * az / static_cast<double>(phi_.size());
  }
  return acc / wt_sum_;
}

}  // namespace msw
