#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msw/nifti.hpp"

namespace msw {

struct AtlasRegion {
  int id = 0;  // label value in the volume; 0 is background
  std::string lobe, gyrus, subregion;
};

// Labeled parcellation aligned to the phantom grid.
struct Atlas {
  Volume labels;  // integer labels stored as float32
  std::vector<AtlasRegion> regions;

  const AtlasRegion* find(int id) const;
  void validate() const;  // every named region non-empty, label 0 unused
};

void save_atlas(const Atlas& atlas, const std::string& nii_path, const std::string& json_path);
Atlas load_atlas(const std::string& nii_path, const std::string& json_path);

// Back-projected relevance volume. Voxels never written by any slice keep
// count == 0, a no-data state distinct from a zero value.
struct Heatmap3D {
  Volume sum;    // accumulated relevance
  Volume count;  // contributions per voxel

  Heatmap3D() = default;
  Heatmap3D(int nx, int ny, int nz) : sum(nx, ny, nz), count(nx, ny, nz) {}
  bool has_data(int x, int y, int z) const { return count.at(x, y, z) > 0.f; }
  float value(int x, int y, int z) const { return sum.at(x, y, z) / count.at(x, y, z); }
};

// NIfTI with NaN marking no-data voxels.
void write_heatmap_nifti(const std::string& path, const Heatmap3D& map);

// Voxelwise mean over subjects, restricted to voxels with data in all
// contributing maps.
Heatmap3D average_maps(const std::vector<Heatmap3D>& maps);

struct RegionRow {
  std::string lobe, gyrus, subregion;
  double mean = 0;
};

struct RegionReport {
  std::vector<RegionRow> rows;  // sorted descending by mean
  double threshold = 0.37;
  int top_gyri = 5;
  std::vector<std::string> notes;  // regions excluded for lack of data, etc.
};

// Mean relevance per atlas region (voxels with data only), grouped by the
// top gyri, thresholded and sorted descending.
RegionReport roi_report(const Heatmap3D& map, const Atlas& atlas, double threshold = 0.37, int top_gyri = 5);

std::string region_report_text(const RegionReport& report);
void save_region_report(const RegionReport& report, const std::string& json_path, const std::string& txt_path);

}  // namespace msw
