#include <doctest.h>

#include "causeloc/error.hpp"
#include "causeloc/rng.hpp"
#include "causeloc/stimulus.hpp"

using namespace causeloc;

namespace {

StimulusImage image(std::string id, Role role, Split split = Split::Train) {
  StimulusImage img;
  img.id = std::move(id);
  img.role = role;
  img.split = split;
  img.concept_name = "dog";
  return img;
}

StimulusManifest small_manifest() {
  StimulusManifest m;
  m.concept_name = "dog";
  m.counter_concepts = {"wolf"};
  m.images.push_back(image("p1", Role::Positive));
  m.images.push_back(image("p2", Role::Positive, Split::Eval));
  auto n = image("n1", Role::SemanticNegative);
  n.counter_concept = "wolf";
  n.verified_absent = true;
  m.images.push_back(n);
  auto e = image("e1", Role::CounterfactualEdit);
  e.parent_positive_id = "p1";
  m.images.push_back(e);
  return m;
}

}  // namespace

TEST_CASE("plan defaults") {
  auto p = build_generation_plan("human face");
  CHECK(p.concept_name == "human face");
  CHECK(p.n_pos_train == 200);
  CHECK(p.n_pos_eval == 100);
  CHECK(p.n_counter_concepts == 10);
  CHECK(p.n_prompts_per_counter == 10);
  CHECK(p.n_edit_parents_train == 50);
  CHECK(p.n_edit_parents_eval == 20);
  CHECK(p.n_edits_per_parent == 10);
}

TEST_CASE("plan overrides to zero") {
  PlanConfig c{0, 0, 0, 0, 0, 0, 0};
  auto p = build_generation_plan("x", c);
  CHECK(p == GenerationPlan{"x", 0, 0, 0, 0, 0, 0, 0});
}

TEST_CASE("plan rejects more edit parents than positives") {
  PlanConfig c;
  c.n_pos_train = 4;
  c.n_edit_parents_train = 5;
  CHECK_THROWS_AS(build_generation_plan("dog", c), Error);
}

TEST_CASE("plan is pure") {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    PlanConfig c;
    c.n_pos_train = 10 + rng.below(100);
    c.n_edit_parents_train = rng.below(10);
    c.n_edits_per_parent = rng.below(5);
    CHECK(build_generation_plan("cat", c) == build_generation_plan("cat", c));
  }
}

TEST_CASE("plan config from json") {
  auto c = plan_config_from_json({{"n_pos_train", 70}});
  CHECK(build_generation_plan("a", c).n_pos_train == 70);
  CHECK_THROWS_AS(plan_config_from_json({{"n_pos", 7}}), Error);
  CHECK_THROWS_AS(plan_config_from_json({{"n_pos_train", -1}}), Error);
  auto j = plan_to_json(build_generation_plan("a"));
  CHECK(j.at("n_edits_per_parent") == 10);
}

TEST_CASE("validate manifest") {
  SUBCASE("empty manifest") { CHECK(validate_manifest(StimulusManifest{}).ok()); }
  SUBCASE("valid manifest") { CHECK(validate_manifest(small_manifest()).ok()); }
  SUBCASE("dangling parent") {
    auto m = small_manifest();
    m.images[3].parent_positive_id = "missing";
    auto r = validate_manifest(m);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].kind == ViolationKind::DanglingParent);
    CHECK(r.violations[0].message.find("dangling parent") != std::string::npos);
  }
  SUBCASE("duplicate id") {
    StimulusManifest m;
    m.images = {image("a", Role::Positive), image("a", Role::Positive)};
    auto r = validate_manifest(m);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].message == "duplicate id a");
  }
  SUBCASE("parent must be a positive") {
    auto m = small_manifest();
    m.images[3].parent_positive_id = "n1";
    auto r = validate_manifest(m);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].kind == ViolationKind::ParentNotPositive);
  }
  SUBCASE("negative needs a counter concept") {
    auto m = small_manifest();
    m.images[2].counter_concept.reset();
    CHECK(validate_manifest(m).violations.at(0).kind == ViolationKind::MissingCounterConcept);
  }
  SUBCASE("positive carries no parent or counter concept") {
    auto m = small_manifest();
    m.images[0].counter_concept = "wolf";
    m.images[1].parent_positive_id = "p1";
    CHECK(validate_manifest(m).violations.size() == 2);
  }
}

TEST_CASE("valid manifests resolve every edit to one positive") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    StimulusManifest m;
    m.concept_name = "dog";
    m.counter_concepts = {"wolf"};
    std::size_t n = 1 + rng.below(30);
    for (std::size_t i = 0; i < n; ++i) {
      auto img = image("i" + std::to_string(i), static_cast<Role>(rng.below(3)));
      if (img.role == Role::SemanticNegative && rng.bernoulli(0.9)) img.counter_concept = "wolf";
      if (img.role == Role::CounterfactualEdit && rng.bernoulli(0.9)) {
        img.parent_positive_id = "i" + std::to_string(rng.below(n));
      }
      m.images.push_back(img);
    }
    if (!validate_manifest(m).ok()) continue;
    for (const auto& img : m.images) {
      if (img.role != Role::CounterfactualEdit) continue;
      int parents = 0;
      for (const auto& other : m.images) {
        parents += other.id == *img.parent_positive_id && other.role == Role::Positive;
      }
      CHECK(parents == 1);
    }
  }
}

TEST_CASE("select ids and edit pairs") {
  auto m = small_manifest();
  CHECK(select_ids(m, Role::Positive) == std::vector<std::string>{"p1", "p2"});
  CHECK(select_ids(m, Role::Positive, Split::Eval) == std::vector<std::string>{"p2"});
  auto pairs = edit_pairs(m, Split::Train);
  CHECK(pairs.at("p1") == std::vector<std::string>{"e1"});
  CHECK(edit_pairs(m, Split::Eval).at("p2").empty());
}

TEST_CASE("manifest jsonl round trip keeps unknown fields") {
  auto m = small_manifest();
  m.extra["subject"] = "subj01";
  m.images[0].extra["image_ref"] = "s3://bucket/p1.png";
  m.images[0].verified_present = false;
  m.images[1].prompt_or_instruction = "a dog, \"quoted\"\nnext";
  auto text = manifest_to_jsonl(m);
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
  CHECK(manifest_from_jsonl(text) == m);

  auto injected = text + R"({"id":"x","role":"Positive","split":"Eval","source":"Generated","concept":"dog","future_field":[1,2]})" "\n";
  auto back = manifest_from_jsonl(injected);
  CHECK(back.images.back().extra.at("future_field") == nlohmann::json::array({1, 2}));
  CHECK(manifest_from_jsonl(manifest_to_jsonl(back)) == back);
}

TEST_CASE("manifest parse errors") {
  CHECK_THROWS_AS(manifest_from_jsonl("{not json}\n"), Error);
  CHECK_THROWS_AS(manifest_from_jsonl(R"({"record":"header","concept":"dog","counter_concepts":[]})" "\n"
                                      R"({"id":"a","role":"Bogus","split":"Train"})" "\n"),
                  Error);
}
