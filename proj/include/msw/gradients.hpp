#pragma once

#include <array>
#include <string>
#include <vector>

#include "msw/common.hpp"

namespace msw {

using Vec3 = std::array<double, 3>;

inline double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }

// Acquisition scheme: one (b, g) pair per measurement. b in s/mm^2,
// directions unit-norm for b > 0.
struct GradientTable {
  std::vector<double> bvals;
  std::vector<Vec3> bvecs;

  size_t size() const { return bvals.size(); }
  void validate() const;

  std::vector<int> b0_indices(double b0_tol = 10.0) const;
  // Distinct nonzero b-values, ascending; values within merge_tol collapse.
  std::vector<double> shells(double b0_tol = 10.0, double merge_tol = 50.0) const;
};

// Deterministic quasi-uniform directions on the upper hemisphere
// (Fibonacci spiral).
std::vector<Vec3> fibonacci_hemisphere(int n);

// shells: list of (b, n_dirs); b0_count leading b=0 rows.
GradientTable make_protocol(int b0_count, const std::vector<std::pair<double, int>>& shells);

// 13 x b0, 6 @ b500, 48 @ b1000, 60 @ b2000 - 127 measurements.
GradientTable default_protocol();

// FSL-style whitespace-separated text: bvals on one line; bvecs as three
// lines (x, y, z components).
void write_bval_bvec(const std::string& bval_path, const std::string& bvec_path, const GradientTable& g);
GradientTable read_bval_bvec(const std::string& bval_path, const std::string& bvec_path);

}  // namespace msw
