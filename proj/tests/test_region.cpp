#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "causeloc/region.hpp"
#include "causeloc/rng.hpp"
#include "generators.hpp"

using namespace causeloc;

namespace {

VoxelScoreTable table(std::vector<std::string> ids, ScoreVector causal) {
  VoxelScoreTable t;
  t.voxel_ids = std::move(ids);
  t.s_pos = causal;
  t.s_neg = causal;
  t.s_edit = causal;
  t.s_causal = causal;
  return t;
}

VoxelScoreTable random_table(Rng& rng, std::size_t n) {
  std::vector<std::string> ids;
  ScoreVector s;
  for (std::size_t v = 0; v < n; ++v) {
    ids.push_back(gen::id("v", n - 1 - v));
    s.push_back(rng.bernoulli(0.3) ? 0.25 * static_cast<double>(rng.below(5)) - 0.5 : rng.normal());
  }
  return table(ids, s);
}

}  // namespace

TEST_CASE("positive causal region") {
  auto t = table({"a", "b", "c"}, {0.5, -0.1, 0.2});
  CHECK(select_region_positive_causal(t).voxel_ids == std::vector<std::string>{"a", "c"});
  CHECK(select_region_positive_causal(table({"a", "b"}, {-1, 0})).empty());
  auto eq = select_region_positive_causal(table({"c", "a", "b"}, {0.3, 0.3, 0.3}));
  CHECK(eq.voxel_ids == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("top-k region") {
  auto t = table({"a", "b", "c"}, {0.5, -0.1, 0.2});
  auto r = select_region_top_k(t, "s_causal", 2, "dog");
  CHECK(r.voxel_ids == std::vector<std::string>{"a", "c"});
  CHECK(r.scores == std::vector<double>{0.5, 0.2});
  CHECK(r.concept_name == "dog");
  CHECK(select_region_top_k(t, "s_causal", 3).voxel_ids == std::vector<std::string>{"a", "c", "b"});

  Rng rng(1);
  auto big = random_table(rng, 10);
  auto all = select_region_top_k(big, "s_causal", 100);
  CHECK(all.voxel_ids.size() == 10);
  CHECK(all.short_region);
  CHECK_FALSE(select_region_top_k(big, "s_causal", 10).short_region);
  CHECK_THROWS(select_region_top_k(big, "nope", 3));
}

TEST_CASE("positive causal equals unbounded top-k restricted to positive scores") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    auto tab = random_table(rng, 1 + rng.below(40));
    auto full = select_region_top_k(tab, "s_causal", tab.voxel_ids.size());
    std::vector<std::string> positive;
    for (std::size_t i = 0; i < full.voxel_ids.size(); ++i) {
      if (full.scores[i] > 0) positive.push_back(full.voxel_ids[i]);
    }
    CHECK(select_region_positive_causal(tab).voxel_ids == positive);
  }
}

TEST_CASE("adding a voxel above the k-th score displaces exactly one voxel") {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    auto tab = random_table(rng, 2 + rng.below(30));
    std::size_t k = 1 + rng.below(tab.voxel_ids.size());
    auto before = select_region_top_k(tab, "s_causal", k);
    double kth = before.scores.back();
    tab.voxel_ids.push_back("zz_new");
    for (auto* col : {&tab.s_pos, &tab.s_neg, &tab.s_edit, &tab.s_causal}) col->push_back(kth + 1.0);
    auto after = select_region_top_k(tab, "s_causal", k);
    std::set<std::string> a(before.voxel_ids.begin(), before.voxel_ids.end());
    std::set<std::string> b(after.voxel_ids.begin(), after.voxel_ids.end());
    std::vector<std::string> removed;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(removed));
    CHECK(removed.size() == 1);
    CHECK(b.count("zz_new") == 1);
  }
}

TEST_CASE("region csv round trip") {
  Rng rng(2);
  auto r = select_region_top_k(random_table(rng, 12), "s_causal", 5, "dog");
  auto path = (std::filesystem::temp_directory_path() / "causeloc_region.csv").string();
  write_region(r, path);
  auto back = read_region(path);
  CHECK(back.voxel_ids == r.voxel_ids);
  CHECK(back.scores == r.scores);
  std::filesystem::remove(path);
}
