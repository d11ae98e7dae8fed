#include "msw/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace msw {

void GradientTable::validate() const {
  if (bvals.size() != bvecs.size())
    throw ValueError(cat("gradient table: ", bvals.size(), " b-values vs ", bvecs.size(), " directions"));
  if (bvals.empty()) throw ValueError("gradient table is empty");
  bool has_b0 = false;
  for (size_t i = 0; i < bvals.size(); ++i) {
    if (bvals[i] < 0) throw ValueError(cat("negative b-value at measurement ", i));
    if (bvals[i] <= 10.0) {
      has_b0 = true;
      continue;
    }
    const double n = norm3(bvecs[i]);
    if (std::fabs(n - 1.0) > 1e-6)
      throw ValueError(cat("direction ", i, " has norm ", n, "; diffusion-weighted directions must be unit vectors"));
  }
  if (!has_b0) throw ValueError("gradient table needs at least one b=0 measurement");
}

std::vector<int> GradientTable::b0_indices(double b0_tol) const {
  std::vector<int> out;
  for (size_t i = 0; i < bvals.size(); ++i)
    if (bvals[i] <= b0_tol) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<double> GradientTable::shells(double b0_tol, double merge_tol) const {
  std::vector<double> out;
  for (const double b : bvals) {
    if (b <= b0_tol) continue;
    bool merged = false;
    for (const double s : out)
      if (std::fabs(s - b) <= merge_tol) {
        merged = true;
        break;
      }
    if (!merged) out.push_back(b);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Vec3> fibonacci_hemisphere(int n) {
  std::vector<Vec3> dirs;
  dirs.reserve(static_cast<size_t>(n));
  const double ga = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = ga * i;
    dirs.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  return dirs;
}

GradientTable make_protocol(int b0_count, const std::vector<std::pair<double, int>>& shells) {
  GradientTable g;
  for (int i = 0; i < b0_count; ++i) {
    g.bvals.push_back(0.0);
    g.bvecs.push_back({0.0, 0.0, 0.0});
  }
  for (const auto& [b, n] : shells) {
    const auto dirs = fibonacci_hemisphere(n);
    for (const auto& d : dirs) {
      g.bvals.push_back(b);
      g.bvecs.push_back(d);
    }
  }
  g.validate();
  return g;
}

GradientTable default_protocol() {
  return make_protocol(13, {{500.0, 6}, {1000.0, 48}, {2000.0, 60}});
}

void write_bval_bvec(const std::string& bval_path, const std::string& bvec_path, const GradientTable& g) {
  std::ofstream bv(bval_path);
  if (!bv) throw IoError(cat("cannot open '", bval_path, "' for writing"));
  for (size_t i = 0; i < g.bvals.size(); ++i) bv << (i ? " " : "") << g.bvals[i];
  bv << "\n";
  std::ofstream vec(bvec_path);
  if (!vec) throw IoError(cat("cannot open '", bvec_path, "' for writing"));
  vec.precision(17);
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < g.bvecs.size(); ++i) vec << (i ? " " : "") << g.bvecs[i][c];
    vec << "\n";
  }
  if (!bv || !vec) throw IoError("bval/bvec write failed");
}

GradientTable read_bval_bvec(const std::string& bval_path, const std::string& bvec_path) {
  std::ifstream bv(bval_path);
  if (!bv) throw IoError(cat("cannot open '", bval_path, "'"));
  GradientTable g;
  double x;
  while (bv >> x) g.bvals.push_back(x);

  std::ifstream vec(bvec_path);
  if (!vec) throw IoError(cat("cannot open '", bvec_path, "'"));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(vec, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    while (ls >> x) row.push_back(x);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.size() != 3) throw IoError(cat("'", bvec_path, "': expected 3 component rows, got ", rows.size()));
  for (int c = 0; c < 3; ++c)
    if (rows[static_cast<size_t>(c)].size() != g.bvals.size())
      throw IoError(cat("bvec row ", c, " has ", rows[static_cast<size_t>(c)].size(), " entries for ",
                        g.bvals.size(), " b-values"));
  g.bvecs.resize(g.bvals.size());
  for (size_t i = 0; i < g.bvals.size(); ++i) g.bvecs[i] = {rows[0][i], rows[1][i], rows[2][i]};
  g.validate();
  return g;
}

}  // namespace msw
