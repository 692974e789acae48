#include <doctest.h>

#include <cmath>
#include <set>

#include "causeloc/error.hpp"
#include "causeloc/simulator.hpp"

using namespace causeloc;
using namespace causeloc::sim;

namespace {

WorldSpec tiny_world(double noise_sd) {
  WorldSpec s;
  s.concepts = {{"dog", 4, 2.0, {{"grass", 1.0}}, {}, 0.1},
                {"surfer", 0, 1.0, {{"water", 0.9}}, {}, 0.1},
                {"boat", 4, 1.0, {{"water", 0.9}}, {}, 0.1}};
  s.attributes = {{"grass", 4, 3.0, 0.1}, {"water", 4, 2.0, 0.1}};
  s.noise_voxels = 4;
  s.noise_sd = noise_sd;
  s.region_size = 4;
  PlanConfig p{20, 20, 3, 6, 10, 10, 3};
  s.plan = p;
  return s;
}

std::size_t voxel_index(const SyntheticWorld& w, VoxelType type, const std::string& driver) {
  for (std::size_t i = 0; i < w.voxels().size(); ++i) {
    if (w.voxels()[i].type == type && w.voxels()[i].driver == driver) return i;
  }
  FAIL("no such voxel");
  return 0;
}

}  // namespace

TEST_CASE("worlds are deterministic in the seed") {
  auto a = build_world(tiny_world(0.5), 42);
  auto b = build_world(tiny_world(0.5), 42);
  auto c = build_world(tiny_world(0.5), 43);
  auto d = a->sample_positive("dog", "x");
  CHECK(a->simulate_response(d, "x") == b->simulate_response(d, "x"));
  CHECK(a->simulate_response(d, "x") != c->simulate_response(d, "x"));
  CHECK(a->voxel_ids() == b->voxel_ids());
}

TEST_CASE("certain co-occurrence always accompanies the concept") {
  auto w = build_world(tiny_world(0.5), 1);
  for (int i = 0; i < 10000; ++i) {
    auto d = w->sample_positive("dog", "p" + std::to_string(i));
    CHECK(std::count(d.begin(), d.end(), "grass") == 1);
    CHECK(std::count(d.begin(), d.end(), "dog") == 1);
  }
}

TEST_CASE("noiseless responses follow the planted structure") {
  auto w = build_world(tiny_world(0.0), 1);
  auto sel = voxel_index(*w, VoxelType::ConceptSelective, "dog");
  auto conf = voxel_index(*w, VoxelType::ConfoundDriven, "grass");
  auto d = w->sample_positive("dog", "p");
  auto r = w->simulate_response(d, "p");
  CHECK(r[sel] == 2.0f);
  CHECK(r[conf] == 3.0f);
  auto edited = SyntheticWorld::remove_flag(d, "dog");
  auto e = w->simulate_response(edited, "e");
  CHECK(e[sel] == 0.0f);
  CHECK(e[conf] == r[conf]);
}

TEST_CASE("noisy concept voxel mean") {
  auto spec = tiny_world(0.5);
  auto w = build_world(spec, 7);
  auto sel = voxel_index(*w, VoxelType::ConceptSelective, "dog");
  double sum = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    auto key = "p" + std::to_string(i);
    sum += w->simulate_response(w->sample_positive("dog", key), key)[sel];
  }
  CHECK(std::abs(sum / n - 2.0) < 3.0 * 0.5 / std::sqrt(n));
}

TEST_CASE("removing the concept flag only moves selective voxels on average") {
  auto w = build_world(tiny_world(0.5), 3);
  std::vector<double> diff(w->voxels().size(), 0.0);
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    auto key = "p" + std::to_string(i);
    auto d = w->sample_positive("dog", key);
    auto a = w->simulate_response(d, key);
    auto b = w->simulate_response(SyntheticWorld::remove_flag(d, "dog"), key + "/e");
    for (std::size_t v = 0; v < diff.size(); ++v) diff[v] += (a[v] - b[v]) / n;
  }
  double se = 3.0 * std::sqrt(2.0) * 0.5 / std::sqrt(n);
  for (std::size_t v = 0; v < diff.size(); ++v) {
    const auto& spec = w->voxels()[v];
    if (spec.type == VoxelType::ConceptSelective && spec.driver == "dog") {
      CHECK(std::abs(diff[v] - 2.0) < se);
    } else {
      CHECK(std::abs(diff[v]) < se);
    }
  }
}

TEST_CASE("noiseless experiment separates the strategies") {
  auto w = build_world(tiny_world(0.0), 42);
  auto r = run_fpr_experiment(*w);
  CHECK(r.n_pure == 1);
  CHECK(r.fpr_activation_pure == 1.0);
  CHECK(r.fpr_causal_pure == 0.0);
  CHECK(r.fpr_causal == 0.0);
  for (const auto& c : r.concepts) {
    if (c.causal.discovered) CHECK(c.causal.n_confound == 0);
  }
  CHECK(fpr_metrics_csv(r).find("fpr_causal,0\n") != std::string::npos);
}

TEST_CASE("a world without confounds has no false positives") {
  WorldSpec s;
  s.concepts = {{"dog", 5, 1.0, {}, {}, 0.1}, {"cat", 5, 1.0, {}, {}, 0.1}, {"cow", 5, 1.0, {}, {}, 0.1}};
  s.noise_voxels = 10;
  s.noise_sd = 0.0;
  s.region_size = 5;
  s.plan = PlanConfig{10, 10, 2, 5, 5, 5, 2};
  auto r = run_fpr_experiment(*build_world(s, 1));
  CHECK(r.fpr_activation == 0.0);
  CHECK(r.fpr_causal == 0.0);
  CHECK(r.tpr_causal == 1.0);
}

TEST_CASE("experiment is independent of worker count") {
  auto w = build_world(tiny_world(0.7), 5);
  auto one = run_fpr_experiment(*w, {0, 10, 1});
  auto four = run_fpr_experiment(*w, {0, 10, 4});
  CHECK(fpr_concepts_csv(one) == fpr_concepts_csv(four));
}

TEST_CASE("world spec json round trip and validation") {
  auto spec = tiny_world(0.3);
  auto back = world_spec_from_json(world_spec_to_json(spec));
  CHECK(world_spec_to_json(back) == world_spec_to_json(spec));

  auto bad = spec;
  bad.concepts[0].cooccurrence["lava"] = 0.5;
  CHECK_THROWS_AS(build_world(bad, 1), Error);
  bad = spec;
  bad.attributes[0].base_rate = 1.5;
  CHECK_THROWS_AS(build_world(bad, 1), Error);
  bad = spec;
  bad.concepts[1].name = "dog";
  CHECK_THROWS_AS(build_world(bad, 1), Error);
  bad = spec;
  for (auto& c : bad.concepts) c.selective_voxels = 0;
  CHECK_THROWS_AS(build_world(bad, 1), Error);
}

TEST_CASE("counter concepts never mention the target") {
  auto w = build_world(tiny_world(0.5), 1);
  for (const auto& c : w->spec().concepts) {
    auto counters = w->counter_concepts(c.name, 10);
    CHECK_FALSE(counters.empty());
    for (const auto& cc : counters) CHECK(cc != c.name);
  }
}

TEST_CASE("simulated dataset is a valid manifest") {
  auto w = build_world(tiny_world(0.5), 1);
  auto ds = simulate_dataset(*w, "dog", build_generation_plan("dog", w->spec().plan));
  CHECK(validate_manifest(ds.manifest).ok());
  CHECK(ds.predicted.n_images() == ds.manifest.images.size());
  CHECK(select_ids(ds.manifest, Role::Positive, Split::Train).size() == 20);
}
