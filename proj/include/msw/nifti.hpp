#pragma once

#include <string>
#include <vector>

#include "msw/common.hpp"

namespace msw {

// 3D/4D float volume with NIfTI's storage convention: x is the fastest
// axis, v[x + nx*(y + ny*(z + nz*t))].
struct Volume {
  int nx = 1, ny = 1, nz = 1, nt = 1;
  float dx = 1.f, dy = 1.f, dz = 1.f;
  std::vector<float> v;

  Volume() = default;
  Volume(int x, int y, int z, int t = 1)
      : nx(x), ny(y), nz(z), nt(t), v(static_cast<size_t>(x) * y * z * t, 0.f) {
    if (x <= 0 || y <= 0 || z <= 0 || t <= 0) throw DimensionError("non-positive volume dimension");
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int64_t voxels() const { return static_cast<int64_t>(nx) * ny * nz; }
  bool same_grid(const Volume& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }

  int64_t index(int x, int y, int z, int t = 0) const {
    return x + static_cast<int64_t>(nx) * (y + static_cast<int64_t>(ny) * (z + static_cast<int64_t>(nz) * t));
  }
  float& at(int x, int y, int z, int t = 0) { return v[static_cast<size_t>(index(x, y, z, t))]; }
  float at(int x, int y, int z, int t = 0) const { return v[static_cast<size_t>(index(x, y, z, t))]; }
};

// ScalarMap is a 3D metric volume (nt == 1).
using ScalarMap = Volume;

// Single-file NIfTI-1 (.nii): little-endian, 348-byte header, float32
// data, affine in the s-form. That is the only dialect we read or write.
void write_nifti(const std::string& path, const Volume& vol);
Volume read_nifti(const std::string& path);

}  // namespace msw
