#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nlq/parser.hpp"
#include "nlq/synth.hpp"

using namespace nlq;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path fresh_dir(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

} // namespace

TEST_CASE("voxel grid is a deterministic row-major cube prefix") {
  auto g = voxel_grid(8);
  REQUIRE(g.size() == 8);
  CHECK(g[0].x == 0);
  CHECK(g[1].x == 1);
  CHECK(g[2].y == 1);
  CHECK(g[4].z == 1);
  // non-cube count still fits the smallest enclosing cube
  CHECK(voxel_grid(9).size() == 9);
  CHECK(voxel_grid(9)[8].z == 0); // side 3: index 8 = (2,2,0)
  CHECK(voxel_grid(9)[8].y == 2);
}

TEST_CASE("coactivation weight matches the closed form") {
  // peak value of the isotropic 3d gaussian at sigma=2
  double peak = std::pow(8 * 3.14159265358979323846, -1.5);
  CHECK(coactivation_weight(2.0, 0.0) == doctest::Approx(peak).epsilon(1e-12));
  // squared distance 329 lands far past the 2-sigma cutoff and is numerically nil
  double far = coactivation_weight(2.0, 329.0);
  CHECK(far < 1e-18);
  // decay by exp(-d2 / (2 sigma^2))
  CHECK(coactivation_weight(2.0, 8.0) / peak == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("generation is byte-identical under a fixed seed") {
  SyntheticDatasetSpec spec;
  spec.studies = 4;
  spec.terms = 3;
  spec.voxels = 8;
  spec.regions = 2;
  spec.seed = 7;
  auto d1 = fresh_dir("nlq_synth_a");
  auto d2 = fresh_dir("nlq_synth_b");
  auto w1 = generate_synthetic(spec, d1.string());
  auto w2 = generate_synthetic(spec, d2.string());
  REQUIRE(w1.size() == 5);
  REQUIRE(w2.size() == 5);
  for (size_t i = 0; i < w1.size(); ++i) CHECK(slurp(w1[i]) == slurp(w2[i]));
}

TEST_CASE("generated files parse and respect the documented shapes") {
  SyntheticDatasetSpec spec;
  spec.studies = 5;
  spec.terms = 4;
  spec.voxels = 27;
  spec.regions = 3;
  spec.seed = 11;
  auto dir = fresh_dir("nlq_synth_c");
  auto files = generate_synthetic(spec, dir.string());

  // SelectedStudy: one uniform annotated disjunction over all studies
  {
    std::ifstream in((dir / "SelectedStudy.tsv").string());
    FactFileOptions o;
    o.has_prob_column = true;
    o.choice_group = true;
    auto r = parse_fact_file(in, {"SelectedStudy", 1, SchemaClass::Probabilistic}, o);
    REQUIRE(r.ok());
    REQUIRE(r.choices.size() == 1);
    REQUIRE(r.choices[0].alternatives.size() == 5);
    for (const auto& [a, p] : r.choices[0].alternatives)
      CHECK(p == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(r.choices[0].bottom_mass() == doctest::Approx(0.0).epsilon(1e-9));
  }

  // FocusCoactivates: self-pairs carry weight 1, everything within 2 sigma
  {
    std::ifstream in((dir / "FocusCoactivates.tsv").string());
    FactFileOptions o;
    o.has_prob_column = true;
    auto r = parse_fact_file(in, {"FocusCoactivates", 6, SchemaClass::Probabilistic}, o);
    REQUIRE(r.ok());
    size_t self_pairs = 0;
    double cutoff2 = 4 * spec.sigma * spec.sigma;
    for (const auto& c : r.choices) {
      const auto& [a, p] = c.alternatives[0];
      double d2 = 0;
      for (int i = 0; i < 3; ++i) {
        double dx = double(a.args[size_t(i)].i - a.args[size_t(i) + 3].i);
        d2 += dx * dx;
      }
      CHECK(d2 <= cutoff2 + 1e-12);
      CHECK(p == doctest::Approx(std::exp(-0.5 * d2 / (spec.sigma * spec.sigma))).epsilon(1e-9));
      if (d2 == 0) {
        ++self_pairs;
        CHECK(p == 1.0);
      }
    }
    CHECK(self_pairs == 27);
  }

  // regions partition the voxels into contiguous blocks
  {
    std::ifstream in((dir / "VoxelByRegionDestrieux.tsv").string());
    auto r = parse_fact_file(in, {"VoxelByRegionDestrieux", 4, SchemaClass::Deterministic}, {});
    REQUIRE(r.ok());
    REQUIRE(r.facts.size() == 27);
    std::set<std::string> regions;
    for (const auto& a : r.facts) regions.insert(a.args[3].name);
    CHECK(regions == std::set<std::string>{"r0", "r1", "r2"});
  }

  // every study mentions a term and reports a focus
  {
    std::ifstream in((dir / "TermInStudy.tsv").string());
    auto r = parse_fact_file(in, {"TermInStudy", 2, SchemaClass::Deterministic}, {});
    REQUIRE(r.ok());
    std::set<std::string> studies;
    for (const auto& a : r.facts) studies.insert(a.args[1].name);
    CHECK(studies.size() == 5);
  }
  {
    std::ifstream in((dir / "FocusReported.tsv").string());
    auto r = parse_fact_file(in, {"FocusReported", 4, SchemaClass::Deterministic}, {});
    REQUIRE(r.ok());
    std::set<std::string> studies;
    for (const auto& a : r.facts) studies.insert(a.args[3].name);
    CHECK(studies.size() == 5);
  }
}

TEST_CASE("generation rejects bad shapes") {
  SyntheticDatasetSpec spec;
  spec.studies = 0;
  CHECK_THROWS(generate_synthetic(spec, fresh_dir("nlq_synth_d").string()));
  spec.studies = 2;
  spec.term_density = 1.5;
  CHECK_THROWS(generate_synthetic(spec, fresh_dir("nlq_synth_d").string()));
}
