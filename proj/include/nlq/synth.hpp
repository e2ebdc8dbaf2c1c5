#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nlq {

// Desk-scale stand-in for a coordinate-based meta-analysis database: studies
// mention terms and report activation foci on a small integer voxel grid.
struct SyntheticDatasetSpec {
  int studies = 4;
  int terms = 3;
  int voxels = 8;
  int regions = 2;
  double term_density = 0.5;  // P(study mentions term)
  double focus_density = 0.25; // P(study reports a focus at voxel)
  double sigma = 2.0;         // Gaussian smoothing (grid units)
  uint64_t seed = 0;
};

struct Voxel {
  int x = 0, y = 0, z = 0;
};

// Deterministic voxel layout: row-major positions on the smallest cubic grid
// holding `voxels` cells, unit spacing.
std::vector<Voxel> voxel_grid(int voxels);

// Unnormalized isotropic Gaussian weight (2*pi*sigma^2)^(-3/2) *
// exp(-dist2 / (2*sigma^2)).
double coactivation_weight(double sigma, double dist2);

// Writes TermInStudy.tsv, FocusReported.tsv, VoxelByRegionDestrieux.tsv,
// SelectedStudy.tsv (uniform annotated disjunction, trailing probability
// column) and FocusCoactivates.tsv (peak-normalized weights, truncated beyond
// 2*sigma) into `out_dir`. Returns the written paths. Byte-identical output
// for equal specs.
std::vector<std::string> generate_synthetic(const SyntheticDatasetSpec& spec,
                                            const std::string& out_dir);

} // namespace nlq
