#include "nlq/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace nlq {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt_prob(double p) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", p);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

} // namespace

std::vector<Voxel> voxel_grid(int voxels) {
  int side = 1;
  while (side * side * side < voxels) ++side;
  std::vector<Voxel> vs;
  vs.reserve(size_t(voxels));
  for (int v = 0; v < voxels; ++v)
    vs.push_back({v % side, (v / side) % side, v / (side * side)});
  return vs;
}

double coactivation_weight(double sigma, double dist2) {
  double s2 = sigma * sigma;
  return std::pow(2 * kPi * s2, -1.5) * std::exp(-0.5 * dist2 / s2);
}

std::vector<std::string> generate_synthetic(const SyntheticDatasetSpec& spec,
                                            const std::string& out_dir) {
  if (spec.studies <= 0 || spec.terms <= 0 || spec.voxels <= 0 || spec.regions <= 0)
    throw std::runtime_error("dataset counts must be positive");
  if (spec.term_density <= 0 || spec.term_density > 1 || spec.focus_density <= 0 ||
      spec.focus_density > 1)
    throw std::runtime_error("densities must lie in (0, 1]");
  std::filesystem::create_directories(out_dir);

  auto grid = voxel_grid(spec.voxels);
  std::mt19937_64 rng(spec.seed);
  // draw a uniform double and compare, rather than bernoulli_distribution,
  // so the stream of draws is pinned to one generator call per trial
  auto flip = [&](double p) {
    return std::uniform_real_distribution<double>(0, 1)(rng) < p;
  };
  std::vector<std::string> written;
  auto path = [&](const char* name) {
    auto p = (std::filesystem::path(out_dir) / name).string();
    written.push_back(p);
    return p;
  };

  {
    auto out = open_out(path("TermInStudy.tsv"));
    for (int s = 0; s < spec.studies; ++s) {
      int mentioned = 0;
      for (int t = 0; t < spec.terms; ++t)
        if (flip(spec.term_density)) {
          out << "t" << t << "\ts" << s << "\n";
          ++mentioned;
        }
      // keep every study usable as a conditioning event
      if (!mentioned) out << "t" << s % spec.terms << "\ts" << s << "\n";
    }
  }

  {
    auto out = open_out(path("FocusReported.tsv"));
    for (int s = 0; s < spec.studies; ++s) {
      int reported = 0;
      for (int v = 0; v < spec.voxels; ++v)
        if (flip(spec.focus_density)) {
          const auto& c = grid[size_t(v)];
          out << c.x << "\t" << c.y << "\t" << c.z << "\ts" << s << "\n";
          ++reported;
        }
      if (!reported) {
        const auto& c = grid[size_t(s % spec.voxels)];
        out << c.x << "\t" << c.y << "\t" << c.z << "\ts" << s << "\n";
      }
    }
  }

  {
    // regions as contiguous blocks of the row-major voxel order
    auto out = open_out(path("VoxelByRegionDestrieux.tsv"));
    int block = (spec.voxels + spec.regions - 1) / spec.regions;
    for (int v = 0; v < spec.voxels; ++v) {
      const auto& c = grid[size_t(v)];
      out << c.x << "\t" << c.y << "\t" << c.z << "\tr" << v / block << "\n";
    }
  }

  {
    auto out = open_out(path("SelectedStudy.tsv"));
    auto p = fmt_prob(1.0 / spec.studies);
    for (int s = 0; s < spec.studies; ++s) out << "s" << s << "\t" << p << "\n";
  }

  {
    // peak-normalized weights: self-pairs carry 1, neighbours decay with the
    // Gaussian kernel, pairs beyond 2*sigma are dropped
    auto out = open_out(path("FocusCoactivates.tsv"));
    double cutoff2 = 4 * spec.sigma * spec.sigma;
    double peak = coactivation_weight(spec.sigma, 0);
    for (const auto& a : grid)
      for (const auto& b : grid) {
        double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
        double d2 = dx * dx + dy * dy + dz * dz;
        if (d2 > cutoff2) continue;
        double w = coactivation_weight(spec.sigma, d2) / peak;
        out << a.x << "\t" << a.y << "\t" << a.z << "\t" << b.x << "\t" << b.y
            << "\t" << b.z << "\t" << fmt_prob(w) << "\n";
      }
  }

  return written;
}

} // namespace nlq
